#include <doctest.h>

#include <memory>
#include <vector>

#include "gradcheck.hpp"
#include "msgcn/params.hpp"
#include "msgcn/tape.hpp"

using namespace msgcn;

namespace {
Mat random_mat(int r, int c, Rng& rng) {
  Mat m(r, c);
  for (double& x : m.v) x = rng.uniform(-1.0, 1.0);
  return m;
}
}  // namespace

TEST_CASE("relu forward and gradient of sum") {
  Tape t;
  Tape::Id x = t.input(Mat(1, 2, {-1.0, 2.0}));
  Tape::Id y = t.relu(x);
  CHECK(t.val(y).v == std::vector<double>{0.0, 2.0});
  t.backward(t.sum_all(y));
  CHECK(t.grad(x).v == std::vector<double>{0.0, 1.0});
}

TEST_CASE("row_softmax uniform row gives 1/n") {
  Tape t;
  Tape::Id x = t.input(Mat(1, 5, {3.0, 3.0, 3.0, 3.0, 3.0}));
  Tape::Id y = t.row_softmax(x);
  for (double v : t.val(y).v) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("matmul gradients vs central finite differences") {
  Rng rng(11);
  Mat A = random_mat(4, 3, rng);
  Mat B = random_mat(3, 2, rng);
  auto eval = [&] {
    Tape t;
    return t.val(t.sum_all(t.matmul(t.input(A), t.input(B))))(0, 0);
  };
  Tape t;
  Tape::Id a = t.input(A);
  Tape::Id b = t.input(B);
  t.backward(t.sum_all(t.matmul(a, b)));
  CHECK(testing::fd_max_rel_error(A, t.grad(a), eval) <= 1e-6);
  CHECK(testing::fd_max_rel_error(B, t.grad(b), eval) <= 1e-6);
}

TEST_CASE("elementwise composite gradcheck") {
  Rng rng(7);
  Mat X = random_mat(3, 4, rng);
  Mat W = random_mat(4, 3, rng);
  auto build = [&](Tape& t, Tape::Id& xid, Tape::Id& wid) {
    xid = t.input(X);
    wid = t.input(W);
    Tape::Id h = t.matmul(t.tanh_(xid), wid);
    Tape::Id s = t.mul(t.sigmoid(h), t.exp_(t.scale(h, -0.5)));
    return t.sum_all(t.add_scalar(s, 0.25));
  };
  auto eval = [&] {
    Tape t;
    Tape::Id x, w;
    return t.val(build(t, x, w))(0, 0);
  };
  Tape t;
  Tape::Id x, w;
  t.backward(build(t, x, w));
  CHECK(testing::fd_max_rel_error(X, t.grad(x), eval) <= 1e-6);
  CHECK(testing::fd_max_rel_error(W, t.grad(w), eval) <= 1e-6);
}

TEST_CASE("segment_softmax sums to 1 per non-empty segment, zero for empty") {
  Rng rng(3);
  Mat X = random_mat(6, 2, rng);
  auto off = std::make_shared<std::vector<size_t>>(
      std::vector<size_t>{0, 2, 2, 5, 6});
  Tape t;
  Tape::Id y = t.segment_softmax(t.input(X), off);
  const Mat& Y = t.val(y);
  for (int c = 0; c < 2; ++c) {
    CHECK(Y(0, c) + Y(1, c) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(Y(2, c) + Y(3, c) + Y(4, c) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(Y(5, c) == doctest::Approx(1.0).epsilon(1e-12));
  }
  // Empty segment contributes zero rows via segment_sum.
  Tape::Id sums = t.segment_sum(y, off);
  CHECK(t.val(sums)(1, 0) == 0.0);
  CHECK(t.val(sums)(1, 1) == 0.0);
}

TEST_CASE("segment ops gradcheck") {
  Rng rng(5);
  Mat X = random_mat(7, 3, rng);
  auto off = std::make_shared<std::vector<size_t>>(
      std::vector<size_t>{0, 3, 3, 7});
  auto weights = Mat(3, 3);
  Rng wr(6);
  for (double& w : weights.v) w = wr.uniform(0.1, 2.0);
  auto build = [&](Tape& t, Tape::Id& xid) {
    xid = t.input(X);
    Tape::Id a = t.segment_softmax(xid, off);
    Tape::Id s = t.segment_sum(t.mul(a, xid), off);
    return t.sum_all(t.mul(s, t.input(weights)));
  };
  auto eval = [&] {
    Tape t;
    Tape::Id x;
    return t.val(build(t, x))(0, 0);
  };
  Tape t;
  Tape::Id x;
  t.backward(build(t, x));
  CHECK(testing::fd_max_rel_error(X, t.grad(x), eval) <= 1e-6);
}

TEST_CASE("gather and concat gradcheck") {
  Rng rng(9);
  Mat X = random_mat(4, 2, rng);
  auto idx = std::make_shared<std::vector<uint32_t>>(
      std::vector<uint32_t>{3, 0, 0, 2});
  auto build = [&](Tape& t, Tape::Id& xid) {
    xid = t.input(X);
    Tape::Id gth = t.gather_rows(xid, idx);
    Tape::Id cat = t.concat_cols({gth, t.relu(gth)});
    return t.sum_all(t.mul(cat, cat));
  };
  auto eval = [&] {
    Tape t;
    Tape::Id x;
    return t.val(build(t, x))(0, 0);
  };
  Tape t;
  Tape::Id x;
  t.backward(build(t, x));
  CHECK(testing::fd_max_rel_error(X, t.grad(x), eval) <= 1e-6);
}

TEST_CASE("dropout p=0 is the identity, gradients included") {
  Rng rng(1);
  Mat X = random_mat(3, 3, rng);
  Tape t;
  Tape::Id x = t.input(X);
  Tape::Id y = t.dropout(x, 0.0, 1234);
  CHECK(t.val(y).v == X.v);
  t.backward(t.sum_all(y));
  for (double g : t.grad(x).v) CHECK(g == 1.0);
}

TEST_CASE("dropout rejects p outside [0,1)") {
  Tape t;
  Tape::Id x = t.input(Mat(1, 1, {1.0}));
  CHECK_THROWS_AS(t.dropout(x, 1.0, 0), ShapeError);
  CHECK_THROWS_AS(t.dropout(x, -0.1, 0), ShapeError);
}

TEST_CASE("shape mismatches are rejected") {
  Tape t;
  Tape::Id a = t.input(Mat(2, 3));
  Tape::Id b = t.input(Mat(2, 3));
  CHECK_THROWS_AS(t.matmul(a, b), ShapeError);
  CHECK_THROWS_AS(t.add(a, t.input(Mat(3, 2))), ShapeError);
}

TEST_CASE("param init: zeros, fan-in bound, determinism, duplicate name") {
  ParamStore ps(42);
  const Mat& z = ps.create("z", 2, 2, InitScheme::Zeros);
  CHECK(z.v == std::vector<double>(4, 0.0));

  const Mat& w = ps.create("w", 100, 64, InitScheme::UniformFanIn);
  for (double x : w.v) CHECK(std::abs(x) <= 0.125);  // 1/sqrt(64)

  CHECK_THROWS_AS(ps.create("w", 1, 1, InitScheme::Zeros), DataError);

  ParamStore a(7), b(7);
  a.create("p", 5, 5, InitScheme::UniformFanIn);
  b.create("p", 5, 5, InitScheme::UniformFanIn);
  CHECK(a.param("p").v == b.param("p").v);
}
