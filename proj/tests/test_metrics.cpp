#include <doctest.h>

#include <cmath>

#include "msgcn/metrics.hpp"
#include "msgcn/rng.hpp"

using namespace msgcn;

namespace {

// O(n²) pairwise oracle, ties at 0.5.
double auroc_brute(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  size_t pairs = 0;
  for (size_t i = 0; i < s.size(); ++i)
    for (size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      ++pairs;
      if (s[i] > s[j])
        wins += 1.0;
      else if (s[i] == s[j])
        wins += 0.5;
    }
  return wins / static_cast<double>(pairs);
}

// Direct evaluation of the kappa formula from a confusion matrix.
double qwk_direct(const std::vector<std::vector<double>>& conf) {
  const int C = static_cast<int>(conf.size());
  std::vector<double> mp(C, 0.0), mt(C, 0.0);
  double total = 0.0;
  for (int a = 0; a < C; ++a)
    for (int b = 0; b < C; ++b) {
      mp[a] += conf[a][b];
      mt[b] += conf[a][b];
      total += conf[a][b];
    }
  double num = 0.0, den = 0.0;
  for (int a = 0; a < C; ++a)
    for (int b = 0; b < C; ++b) {
      const double w =
          double(a - b) * (a - b) / (double(C - 1) * (C - 1));
      num += w * conf[a][b];
      den += w * mp[a] * mt[b] / total;
    }
  return 1.0 - num / den;
}

}  // namespace

TEST_CASE("auroc: perfect ranking and all ties") {
  CHECK(auroc({0.2, 0.8}, {0, 1}) == 1.0);
  CHECK(auroc({0.4, 0.4, 0.4, 0.4}, {0, 1, 0, 1}) == 0.5);
}

TEST_CASE("auroc equals brute force on random inputs") {
  Rng rng(99);
  std::vector<double> s(1000);
  std::vector<int> y(1000);
  for (size_t i = 0; i < s.size(); ++i) {
    // Quantized scores force plenty of ties.
    s[i] = std::floor(rng.uniform() * 20.0) / 20.0;
    y[i] = rng.uniform() < 0.4;
  }
  CHECK(std::abs(auroc(s, y) - auroc_brute(s, y)) <= 1e-12);
}

TEST_CASE("auroc invariances") {
  Rng rng(4);
  std::vector<double> s(200);
  std::vector<int> y(200);
  for (size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.uniform(-3.0, 3.0);
    y[i] = rng.uniform() < 0.5;
  }
  y[0] = 0;
  y[1] = 1;
  const double base = auroc(s, y);

  std::vector<double> neg = s, mono = s;
  for (auto& x : neg) x = -x;
  for (auto& x : mono) x = std::exp(0.7 * x) + 5.0;
  CHECK(auroc(neg, y) == doctest::Approx(1.0 - base).epsilon(1e-12));
  CHECK(auroc(mono, y) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("auroc rejects single-class input") {
  CHECK_THROWS_AS(auroc({0.1, 0.2}, {1, 1}), DataError);
}

TEST_CASE("qwk: perfect agreement") {
  CHECK(qwk({0, 1, 2, 3, 4, 5}, {0, 1, 2, 3, 4, 5}, 6) == 1.0);
}

TEST_CASE("qwk: ISUP-style shift by one class") {
  // truth 0..4 uniformly, pred = truth + 1.
  std::vector<int> truth, pred;
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 5; ++c) {
      truth.push_back(c);
      pred.push_back(c + 1);
    }
  std::vector<std::vector<double>> conf(6, std::vector<double>(6, 0.0));
  for (size_t i = 0; i < truth.size(); ++i) conf[pred[i]][truth[i]] += 1.0;
  CHECK(qwk(pred, truth, 6) ==
        doctest::Approx(qwk_direct(conf)).epsilon(1e-12));
}

TEST_CASE("qwk equals direct formula on random confusion data") {
  Rng rng(123);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> pred, truth;
    const int n = 50 + static_cast<int>(rng.below(100));
    for (int i = 0; i < n; ++i) {
      pred.push_back(static_cast<int>(rng.below(6)));
      truth.push_back(static_cast<int>(rng.below(6)));
    }
    std::vector<std::vector<double>> conf(6, std::vector<double>(6, 0.0));
    for (int i = 0; i < n; ++i) conf[pred[i]][truth[i]] += 1.0;
    CHECK(std::abs(qwk(pred, truth, 6) - qwk_direct(conf)) <= 1e-12);
  }
}

TEST_CASE("qwk tends to 0 for independent predictions") {
  Rng rng(77);
  std::vector<int> pred, truth;
  for (int i = 0; i < 20000; ++i) {
    pred.push_back(static_cast<int>(rng.below(6)));
    truth.push_back(static_cast<int>(rng.below(6)));
  }
  CHECK(std::abs(qwk(pred, truth, 6)) < 0.02);
}

TEST_CASE("qwk symmetric in pred and truth") {
  Rng rng(8);
  std::vector<int> a, b;
  for (int i = 0; i < 300; ++i) {
    a.push_back(static_cast<int>(rng.below(4)));
    b.push_back(static_cast<int>(rng.below(4)));
  }
  CHECK(qwk(a, b, 4) == doctest::Approx(qwk(b, a, 4)).epsilon(1e-12));
}

TEST_CASE("qwk degenerate cases") {
  // All mass on one diagonal cell: O = E elementwise, defined as 0.
  CHECK(qwk({2, 2, 2}, {2, 2, 2}, 4) == 0.0);
  // Constant disagreement still has a non-zero expected denominator.
  CHECK(qwk({0, 0, 0}, {1, 1, 1}, 2) == 0.0);
}
