#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "msgcn/error.hpp"

namespace msgcn {

struct EvalResult {
  std::string metric_name;
  double value = 0.0;
  size_t n = 0;
  std::vector<size_t> per_class_counts;
};

// Mann–Whitney AUROC via average ranks; ties count 0.5 per pair.
inline double auroc(const std::vector<double>& scores,
                    const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw DataError("auroc: scores/labels length mismatch");
  const size_t n = scores.size();
  size_t n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError("auroc: labels must be 0/1");
    n_pos += static_cast<size_t>(y);
  }
  const size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw DataError("auroc: both classes must be present");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos -
                   static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Quadratic weighted kappa. E is the outer product of the marginals scaled
// to the observed total. A degenerate weighted-E denominator is 0 when the
// observed matrix equals E elementwise, else an error.
inline double qwk(const std::vector<int>& pred, const std::vector<int>& truth,
                  int num_classes) {
  if (pred.size() != truth.size())
    throw DataError("qwk: pred/truth length mismatch");
  if (num_classes < 2) throw DataError("qwk: need at least two classes");
  const int C = num_classes;
  std::vector<double> obs(static_cast<size_t>(C) * C, 0.0);
  std::vector<double> mp(C, 0.0), mt(C, 0.0);
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= C || truth[i] < 0 || truth[i] >= C)
      throw DataError("qwk: class value out of range");
    obs[static_cast<size_t>(pred[i]) * C + truth[i]] += 1.0;
    mp[pred[i]] += 1.0;
    mt[truth[i]] += 1.0;
  }
  const double total = static_cast<double>(pred.size());
  double num = 0.0, den = 0.0;
  const double wscale = 1.0 / (static_cast<double>(C - 1) * (C - 1));
  bool obs_equals_exp = true;
  for (int a = 0; a < C; ++a)
    for (int b = 0; b < C; ++b) {
      const double w = static_cast<double>(a - b) * (a - b) * wscale;
      const double e = mp[a] * mt[b] / total;
      const double o = obs[static_cast<size_t>(a) * C + b];
      num += w * o;
      den += w * e;
      if (o != e) obs_equals_exp = false;
    }
  if (den == 0.0) {
    if (obs_equals_exp) return 0.0;
    throw DataError("qwk: degenerate expected matrix");
  }
  return 1.0 - num / den;
}

}  // namespace msgcn
