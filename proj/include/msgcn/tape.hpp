#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "msgcn/rng.hpp"
#include "msgcn/tensor.hpp"

namespace msgcn {

// Reverse-mode tape over Mat. Each op records a closure that scatters the
// output gradient back to its inputs; backward() replays them in reverse
// creation order. Node indices stay valid for the lifetime of the tape.
class Tape {
 public:
  using Id = int;

  Id input(Mat m) {
    return push(std::move(m), nullptr);
  }

  const Mat& val(Id id) const { return nodes_[id].value; }
  const Mat& grad(Id id) const { return nodes_[id].grad; }

  Id matmul(Id a, Id b) {
    const Mat& A = val(a);
    const Mat& B = val(b);
    if (A.cols != B.rows) throw ShapeError("matmul: inner dimensions differ");
    Mat C(A.rows, B.cols);
    mm_nn(A, B, C);
    return push(std::move(C), [this, a, b](Id out) {
      const Mat& g = nodes_[out].grad;
      mm_nt_acc(g, nodes_[b].value, nodes_[a].grad);   // dA += g·Bᵀ
      mm_tn_acc(nodes_[a].value, g, nodes_[b].grad);   // dB += Aᵀ·g
    });
  }

  Id transpose(Id a) {
    const Mat& A = val(a);
    Mat T(A.cols, A.rows);
    for (int r = 0; r < A.rows; ++r)
      for (int c = 0; c < A.cols; ++c) T(c, r) = A(r, c);
    return push(std::move(T), [this, a](Id out) {
      const Mat& g = nodes_[out].grad;
      Mat& da = nodes_[a].grad;
      for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) da(c, r) += g(r, c);
    });
  }

  Id add(Id a, Id b) {
    const Mat& A = val(a);
    const Mat& B = val(b);
    if (!A.same_shape(B)) throw ShapeError("add: shape mismatch");
    Mat C = A;
    for (size_t i = 0; i < C.size(); ++i) C.v[i] += B.v[i];
    return push(std::move(C), [this, a, b](Id out) {
      const Mat& g = nodes_[out].grad;
      for (size_t i = 0; i < g.size(); ++i) {
        nodes_[a].grad.v[i] += g.v[i];
        nodes_[b].grad.v[i] += g.v[i];
      }
    });
  }

  // Broadcast a 1×C bias over every row of an R×C matrix.
  Id add_row(Id a, Id bias) {
    const Mat& A = val(a);
    const Mat& B = val(bias);
    if (B.rows != 1 || B.cols != A.cols)
      throw ShapeError("add_row: bias must be 1×cols");
    Mat C = A;
    for (int r = 0; r < C.rows; ++r)
      for (int c = 0; c < C.cols; ++c) C(r, c) += B(0, c);
    return push(std::move(C), [this, a, bias](Id out) {
      const Mat& g = nodes_[out].grad;
      Mat& da = nodes_[a].grad;
      Mat& db = nodes_[bias].grad;
      for (size_t i = 0; i < g.size(); ++i) da.v[i] += g.v[i];
      for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) db(0, c) += g(r, c);
    });
  }

  Id mul(Id a, Id b) {
    const Mat& A = val(a);
    const Mat& B = val(b);
    if (!A.same_shape(B)) throw ShapeError("mul: shape mismatch");
    Mat C = A;
    for (size_t i = 0; i < C.size(); ++i) C.v[i] *= B.v[i];
    return push(std::move(C), [this, a, b](Id out) {
      const Mat& g = nodes_[out].grad;
      for (size_t i = 0; i < g.size(); ++i) {
        nodes_[a].grad.v[i] += g.v[i] * nodes_[b].value.v[i];
        nodes_[b].grad.v[i] += g.v[i] * nodes_[a].value.v[i];
      }
    });
  }

  Id scale(Id a, double s) {
    Mat C = val(a);
    for (double& x : C.v) x *= s;
    return push(std::move(C), [this, a, s](Id out) {
      const Mat& g = nodes_[out].grad;
      for (size_t i = 0; i < g.size(); ++i) nodes_[a].grad.v[i] += s * g.v[i];
    });
  }

  Id add_scalar(Id a, double s) {
    Mat C = val(a);
    for (double& x : C.v) x += s;
    return push(std::move(C), [this, a](Id out) {
      const Mat& g = nodes_[out].grad;
      for (size_t i = 0; i < g.size(); ++i) nodes_[a].grad.v[i] += g.v[i];
    });
  }

  Id relu(Id a) {
    Mat C = val(a);
    for (double& x : C.v) x = x > 0.0 ? x : 0.0;
    return push(std::move(C), [this, a](Id out) {
      const Mat& g = nodes_[out].grad;
      for (size_t i = 0; i < g.size(); ++i)
        if (nodes_[a].value.v[i] > 0.0) nodes_[a].grad.v[i] += g.v[i];
    });
  }

  Id tanh_(Id a) {
    Mat C = val(a);
    for (double& x : C.v) x = std::tanh(x);
    return unary_from_output(a, std::move(C),
                             [](double y) { return 1.0 - y * y; });
  }

  Id sigmoid(Id a) {
    Mat C = val(a);
    for (double& x : C.v) x = 1.0 / (1.0 + std::exp(-x));
    return unary_from_output(a, std::move(C),
                             [](double y) { return y * (1.0 - y); });
  }

  Id exp_(Id a) {
    Mat C = val(a);
    for (double& x : C.v) x = std::exp(x);
    return unary_from_output(a, std::move(C), [](double y) { return y; });
  }

  Id row_softmax(Id a) {
    const Mat& A = val(a);
    Mat C(A.rows, A.cols);
    for (int r = 0; r < A.rows; ++r) {
      double mx = A(r, 0);
      for (int c = 1; c < A.cols; ++c) mx = std::max(mx, A(r, c));
      double sum = 0.0;
      for (int c = 0; c < A.cols; ++c) sum += (C(r, c) = std::exp(A(r, c) - mx));
      for (int c = 0; c < A.cols; ++c) C(r, c) /= sum;
    }
    return push(std::move(C), [this, a](Id out) {
      const Mat& y = nodes_[out].value;
      const Mat& g = nodes_[out].grad;
      Mat& da = nodes_[a].grad;
      for (int r = 0; r < y.rows; ++r) {
        double dot = 0.0;
        for (int c = 0; c < y.cols; ++c) dot += y(r, c) * g(r, c);
        for (int c = 0; c < y.cols; ++c)
          da(r, c) += y(r, c) * (g(r, c) - dot);
      }
    });
  }

  // Softmax over row segments, independently per column. offsets has S+1
  // entries delimiting contiguous row ranges; empty segments produce no
  // output rows (there are none) and isolated-vertex handling falls out of
  // segment_sum over an empty range.
  Id segment_softmax(Id a, std::shared_ptr<const std::vector<size_t>> offsets) {
    const Mat& A = val(a);
    check_offsets(*offsets, A.rows, "segment_softmax");
    Mat C(A.rows, A.cols);
    const auto& off = *offsets;
    for (size_t s = 0; s + 1 < off.size(); ++s) {
      for (int c = 0; c < A.cols; ++c) {
        double mx = -1e300;
        for (size_t r = off[s]; r < off[s + 1]; ++r)
          mx = std::max(mx, A(static_cast<int>(r), c));
        double sum = 0.0;
        for (size_t r = off[s]; r < off[s + 1]; ++r)
          sum += (C(static_cast<int>(r), c) =
                      std::exp(A(static_cast<int>(r), c) - mx));
        for (size_t r = off[s]; r < off[s + 1]; ++r)
          C(static_cast<int>(r), c) /= sum;
      }
    }
    return push(std::move(C), [this, a, offsets](Id out) {
      const Mat& y = nodes_[out].value;
      const Mat& g = nodes_[out].grad;
      Mat& da = nodes_[a].grad;
      const auto& off = *offsets;
      for (size_t s = 0; s + 1 < off.size(); ++s) {
        for (int c = 0; c < y.cols; ++c) {
          double dot = 0.0;
          for (size_t r = off[s]; r < off[s + 1]; ++r)
            dot += y(static_cast<int>(r), c) * g(static_cast<int>(r), c);
          for (size_t r = off[s]; r < off[s + 1]; ++r)
            da(static_cast<int>(r), c) +=
                y(static_cast<int>(r), c) * (g(static_cast<int>(r), c) - dot);
        }
      }
    });
  }

  // Sum rows within each segment: (Ntot×C, S+1 offsets) -> S×C.
  // Empty segments yield all-zero rows.
  Id segment_sum(Id a, std::shared_ptr<const std::vector<size_t>> offsets) {
    const Mat& A = val(a);
    check_offsets(*offsets, A.rows, "segment_sum");
    const int S = static_cast<int>(offsets->size()) - 1;
    Mat C(S, A.cols);
    const auto& off = *offsets;
    for (int s = 0; s < S; ++s)
      for (size_t r = off[s]; r < off[s + 1]; ++r)
        for (int c = 0; c < A.cols; ++c)
          C(s, c) += A(static_cast<int>(r), c);
    return push(std::move(C), [this, a, offsets](Id out) {
      const Mat& g = nodes_[out].grad;
      Mat& da = nodes_[a].grad;
      const auto& off = *offsets;
      for (int s = 0; s < g.rows; ++s)
        for (size_t r = off[s]; r < off[s + 1]; ++r)
          for (int c = 0; c < g.cols; ++c)
            da(static_cast<int>(r), c) += g(s, c);
    });
  }

  Id gather_rows(Id a, std::shared_ptr<const std::vector<uint32_t>> idx) {
    const Mat& A = val(a);
    Mat C(static_cast<int>(idx->size()), A.cols);
    for (size_t r = 0; r < idx->size(); ++r) {
      if ((*idx)[r] >= static_cast<uint32_t>(A.rows))
        throw ShapeError("gather_rows: index out of range");
      for (int c = 0; c < A.cols; ++c)
        C(static_cast<int>(r), c) = A(static_cast<int>((*idx)[r]), c);
    }
    return push(std::move(C), [this, a, idx](Id out) {
      const Mat& g = nodes_[out].grad;
      Mat& da = nodes_[a].grad;
      for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c)
          da(static_cast<int>((*idx)[r]), c) += g(r, c);
    });
  }

  Id concat_cols(const std::vector<Id>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const int rows = val(parts[0]).rows;
    int cols = 0;
    for (Id p : parts) {
      if (val(p).rows != rows) throw ShapeError("concat_cols: row mismatch");
      cols += val(p).cols;
    }
    Mat C(rows, cols);
    int at = 0;
    for (Id p : parts) {
      const Mat& A = val(p);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < A.cols; ++c) C(r, at + c) = A(r, c);
      at += A.cols;
    }
    auto parts_copy = std::make_shared<std::vector<Id>>(parts);
    return push(std::move(C), [this, parts_copy](Id out) {
      const Mat& g = nodes_[out].grad;
      int at = 0;
      for (Id p : *parts_copy) {
        Mat& da = nodes_[p].grad;
        for (int r = 0; r < g.rows; ++r)
          for (int c = 0; c < da.cols; ++c) da(r, c) += g(r, at + c);
        at += da.cols;
      }
    });
  }

  // Inverted dropout: kept entries scaled by 1/(1-p). p = 0 is the exact
  // identity, gradients included.
  Id dropout(Id a, double p, uint64_t seed) {
    if (p < 0.0 || p >= 1.0) throw ShapeError("dropout: p must be in [0,1)");
    if (p == 0.0) {
      Mat C = val(a);
      return push(std::move(C), [this, a](Id out) {
        const Mat& g = nodes_[out].grad;
        for (size_t i = 0; i < g.size(); ++i) nodes_[a].grad.v[i] += g.v[i];
      });
    }
    Rng rng(seed);
    auto mask = std::make_shared<std::vector<double>>(val(a).size());
    const double keep = 1.0 / (1.0 - p);
    for (double& m : *mask) m = rng.uniform() < p ? 0.0 : keep;
    Mat C = val(a);
    for (size_t i = 0; i < C.size(); ++i) C.v[i] *= (*mask)[i];
    return push(std::move(C), [this, a, mask](Id out) {
      const Mat& g = nodes_[out].grad;
      for (size_t i = 0; i < g.size(); ++i)
        nodes_[a].grad.v[i] += g.v[i] * (*mask)[i];
    });
  }

  // Stable softmax cross-entropy of a 1×C logit row against an integer label.
  Id softmax_cross_entropy(Id logits, int label) {
    const Mat& L = val(logits);
    if (L.rows != 1) throw ShapeError("softmax_cross_entropy: expects 1×C logits");
    if (label < 0 || label >= L.cols)
      throw DataError("softmax_cross_entropy: label out of range");
    double mx = L(0, 0);
    for (int c = 1; c < L.cols; ++c) mx = std::max(mx, L(0, c));
    double sum = 0.0;
    for (int c = 0; c < L.cols; ++c) sum += std::exp(L(0, c) - mx);
    Mat C(1, 1);
    C(0, 0) = mx + std::log(sum) - L(0, label);
    return push(std::move(C), [this, logits, label](Id out) {
      const Mat& L2 = nodes_[logits].value;
      const double g = nodes_[out].grad(0, 0);
      double mx2 = L2(0, 0);
      for (int c = 1; c < L2.cols; ++c) mx2 = std::max(mx2, L2(0, c));
      double sum2 = 0.0;
      for (int c = 0; c < L2.cols; ++c) sum2 += std::exp(L2(0, c) - mx2);
      for (int c = 0; c < L2.cols; ++c) {
        double p = std::exp(L2(0, c) - mx2) / sum2;
        nodes_[logits].grad(0, c) += g * (p - (c == label ? 1.0 : 0.0));
      }
    });
  }

  Id sum_all(Id a) {
    double s = 0.0;
    for (double x : val(a).v) s += x;
    Mat C(1, 1);
    C(0, 0) = s;
    return push(std::move(C), [this, a](Id out) {
      const double g = nodes_[out].grad(0, 0);
      for (double& d : nodes_[a].grad.v) d += g;
    });
  }

  void backward(Id loss) {
    if (val(loss).size() != 1)
      throw ShapeError("backward: loss must be scalar");
    nodes_[loss].grad.v[0] = 1.0;
    for (Id i = static_cast<Id>(nodes_.size()) - 1; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back(i);
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Id)> back;
  };

  Id push(Mat value, std::function<void(Id)> back) {
    Node n;
    n.grad = Mat(value.rows, value.cols);
    n.value = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size()) - 1;
  }

  template <class F>
  Id unary_from_output(Id a, Mat out_val, F dydx_of_y) {
    return push(std::move(out_val), [this, a, dydx_of_y](Id out) {
      const Mat& y = nodes_[out].value;
      const Mat& g = nodes_[out].grad;
      for (size_t i = 0; i < g.size(); ++i)
        nodes_[a].grad.v[i] += g.v[i] * dydx_of_y(y.v[i]);
    });
  }

  static void check_offsets(const std::vector<size_t>& off, int rows,
                            const char* who) {
    if (off.empty() || off.front() != 0 ||
        off.back() != static_cast<size_t>(rows))
      throw ShapeError(std::string(who) + ": bad segment offsets");
    for (size_t i = 1; i < off.size(); ++i)
      if (off[i] < off[i - 1])
        throw ShapeError(std::string(who) + ": offsets not monotone");
  }

  // C = A·B
  static void mm_nn(const Mat& A, const Mat& B, Mat& C) {
    for (int i = 0; i < A.rows; ++i)
      for (int k = 0; k < A.cols; ++k) {
        const double a = A(i, k);
        if (a == 0.0) continue;
        for (int j = 0; j < B.cols; ++j) C(i, j) += a * B(k, j);
      }
  }
  // C += A·Bᵀ
  static void mm_nt_acc(const Mat& A, const Mat& B, Mat& C) {
    for (int i = 0; i < A.rows; ++i)
      for (int j = 0; j < B.rows; ++j) {
        double s = 0.0;
        for (int k = 0; k < A.cols; ++k) s += A(i, k) * B(j, k);
        C(i, j) += s;
      }
  }
  // C += Aᵀ·B
  static void mm_tn_acc(const Mat& A, const Mat& B, Mat& C) {
    for (int k = 0; k < A.rows; ++k)
      for (int i = 0; i < A.cols; ++i) {
        const double a = A(k, i);
        if (a == 0.0) continue;
        for (int j = 0; j < B.cols; ++j) C(i, j) += a * B(k, j);
      }
  }

  std::vector<Node> nodes_;
};

}  // namespace msgcn
