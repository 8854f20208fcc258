#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "msgcn/metrics.hpp"
#include "msgcn/model.hpp"

namespace msgcn {

enum class LossKind { BinaryCrossEntropy, CategoricalCrossEntropy };

inline std::string to_string(LossKind k) {
  return k == LossKind::BinaryCrossEntropy ? "binary_cross_entropy"
                                           : "categorical_cross_entropy";
}

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 8;
  int epochs = 30;
  LossKind loss = LossKind::BinaryCrossEntropy;
  uint64_t seed = 0;
  int folds = 5;
  double train_fraction = 0.8;

  // Always derived, never set independently.
  double weight_decay() const { return 0.05 * learning_rate; }

  void validate() const {
    if (learning_rate <= 0.0 || batch_size < 1 || epochs < 0 || folds < 2 ||
        train_fraction <= 0.0 || train_fraction >= 1.0)
      throw DataError("invalid train config");
  }
};

inline void to_json(nlohmann::ordered_json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"loss", to_string(c.loss)},
       {"seed", c.seed},
       {"folds", c.folds},
       {"train_fraction", c.train_fraction},
       {"weight_decay", c.weight_decay()}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  if (j.contains("loss")) {
    const std::string s = j.at("loss").get<std::string>();
    if (s == "binary_cross_entropy")
      c.loss = LossKind::BinaryCrossEntropy;
    else if (s == "categorical_cross_entropy")
      c.loss = LossKind::CategoricalCrossEntropy;
    else
      throw DataError("unknown loss kind: " + s);
  }
  c.seed = j.value("seed", c.seed);
  c.folds = j.value("folds", c.folds);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
}

struct GridSpec {
  std::vector<double> learning_rates = {2e-3, 2e-4, 2e-5, 5e-6};
  std::vector<int> hidden_dims = {32, 64, 128};
  std::vector<double> dropouts = {0.0, 0.25, 0.5};
  std::vector<int> batch_sizes = {8};

  void validate() const {
    if (learning_rates.empty() || hidden_dims.empty() || dropouts.empty() ||
        batch_sizes.empty())
      throw DataError("grid spec: all candidate lists must be non-empty");
  }
};

inline void to_json(nlohmann::ordered_json& j, const GridSpec& g) {
  j = {{"learning_rates", g.learning_rates},
       {"hidden_dims", g.hidden_dims},
       {"dropouts", g.dropouts},
       {"batch_sizes", g.batch_sizes}};
}

inline void from_json(const nlohmann::json& j, GridSpec& g) {
  if (j.contains("learning_rates"))
    g.learning_rates = j.at("learning_rates").get<std::vector<double>>();
  if (j.contains("hidden_dims"))
    g.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
  if (j.contains("dropouts"))
    g.dropouts = j.at("dropouts").get<std::vector<double>>();
  if (j.contains("batch_sizes"))
    g.batch_sizes = j.at("batch_sizes").get<std::vector<int>>();
}

struct Dataset {
  std::vector<std::string> wsi_ids;  // ascending
  std::vector<MultiScaleGraph> graphs;
  std::vector<int> labels;
  int num_classes = 0;

  size_t size() const { return graphs.size(); }
};

inline std::map<std::string, int> read_labels(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open labels file: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("wsi_id,label", 0) != 0)
    throw DataError("labels file must start with header 'wsi_id,label'");
  std::map<std::string, int> labels;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw DataError("malformed labels line " + std::to_string(lineno));
    try {
      labels[line.substr(0, comma)] = std::stoi(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw DataError("malformed label at line " + std::to_string(lineno));
    }
  }
  return labels;
}

// Loads every .msgg in a directory (sorted by wsi_id) and joins labels.
inline Dataset load_dataset(const std::filesystem::path& graphs_dir,
                            const std::filesystem::path& labels_path) {
  auto labels = read_labels(labels_path);
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(graphs_dir))
    if (e.path().extension() == ".msgg") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  Dataset ds;
  int max_label = -1;
  for (const auto& f : files) {
    MultiScaleGraph g = load_graph(f);
    auto it = labels.find(g.wsi_id);
    if (it == labels.end())
      throw DataError("no label for wsi " + g.wsi_id);
    if (it->second < 0) throw DataError("negative label for wsi " + g.wsi_id);
    max_label = std::max(max_label, it->second);
    ds.wsi_ids.push_back(g.wsi_id);
    ds.labels.push_back(it->second);
    ds.graphs.push_back(std::move(g));
  }
  ds.num_classes = std::max(2, max_label + 1);
  if (ds.graphs.empty()) throw DataError("no graphs found in " + graphs_dir.string());
  return ds;
}

// Stratified fold assignment: indices of each class are shuffled and dealt
// round-robin, so every fold's class histogram is within 1 of proportional.
inline std::vector<int> stratified_folds(const std::vector<int>& labels,
                                         int k, uint64_t seed) {
  std::vector<int> fold(labels.size(), -1);
  std::map<int, std::vector<size_t>> by_class;
  for (size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  Rng rng(Rng::derive(seed, "folds"));
  int next = 0;
  for (auto& [cls, idx] : by_class) {
    rng.shuffle(idx);
    for (size_t i : idx) {
      fold[i] = next;
      next = (next + 1) % k;
    }
  }
  return fold;
}

// Stratified 80/20 (train_fraction) split; returns (train, test) indices.
inline std::pair<std::vector<size_t>, std::vector<size_t>> stratified_split(
    const std::vector<int>& labels, double train_fraction, uint64_t seed) {
  std::map<int, std::vector<size_t>> by_class;
  for (size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  Rng rng(Rng::derive(seed, "split"));
  std::vector<size_t> train, test;
  for (auto& [cls, idx] : by_class) {
    rng.shuffle(idx);
    const size_t n_train =
        static_cast<size_t>(std::lround(train_fraction * idx.size()));
    for (size_t i = 0; i < idx.size(); ++i)
      (i < n_train ? train : test).push_back(idx[i]);
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

// Adam with the L2 term folded into the gradient before the moment updates.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& ps, double lr, double weight_decay) {
    if (m_.empty()) {
      m_.resize(ps.count());
      v_.resize(ps.count());
      for (size_t i = 0; i < ps.count(); ++i) {
        m_[i].assign(ps.value_at(i).size(), 0.0);
        v_[i].assign(ps.value_at(i).size(), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < ps.count(); ++i) {
      Mat& p = ps.value_at(i);
      const Mat& g = ps.grad_at(i);
      for (size_t k = 0; k < p.size(); ++k) {
        if (!std::isfinite(g.v[k]))
          throw DataError("non-finite gradient in parameter " + ps.name_at(i));
        const double eff = g.v[k] + weight_decay * p.v[k];
        m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * eff;
        v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * eff * eff;
        p.v[k] -= lr * (m_[i][k] / bc1) / (std::sqrt(v_[i][k] / bc2) + eps_);
      }
    }
  }

 private:
  double beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

struct EpochLog {
  int epoch;
  std::string split;
  double loss;
  double metric;
};

// Evaluation metric per task: AUROC on P(class 1) for binary, QWK on argmax
// predictions for multiclass.
inline double eval_metric(const Dataset& ds, const std::vector<size_t>& idx,
                          ParamStore& ps, const ModelConfig& mc) {
  std::vector<double> scores;
  std::vector<int> labels, preds, truths;
  for (size_t i : idx) {
    ForwardResult r = forward(ds.graphs[i], ps, mc);
    // softmax probabilities
    double mx = *std::max_element(r.logits.begin(), r.logits.end());
    double sum = 0.0;
    std::vector<double> p(r.logits.size());
    for (size_t c = 0; c < p.size(); ++c) sum += (p[c] = std::exp(r.logits[c] - mx));
    for (double& x : p) x /= sum;
    if (ds.num_classes == 2) {
      scores.push_back(p[1]);
      labels.push_back(ds.labels[i]);
    } else {
      preds.push_back(static_cast<int>(
          std::max_element(p.begin(), p.end()) - p.begin()));
      truths.push_back(ds.labels[i]);
    }
  }
  return ds.num_classes == 2 ? auroc(scores, labels)
                             : qwk(preds, truths, ds.num_classes);
}

// Mini-batch training over the given subset. Batches contribute the mean of
// per-graph losses; gradients accumulate in ascending dataset index within
// each batch so results are bitwise reproducible.
inline std::vector<EpochLog> train_model(const Dataset& ds,
                                         const std::vector<size_t>& idx,
                                         const ModelConfig& mc,
                                         const TrainConfig& tc,
                                         ParamStore& ps) {
  tc.validate();
  mc.validate();
  for (size_t i : idx)
    if (ds.labels[i] >= mc.num_classes)
      throw DataError("label out of range for model");
  Adam opt;
  std::vector<EpochLog> log;
  std::vector<size_t> order(idx);
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng erng(Rng::derive(tc.seed, "shuffle:" + std::to_string(epoch)));
    erng.shuffle(order);
    double epoch_loss = 0.0;
    for (size_t at = 0; at < order.size(); at += tc.batch_size) {
      const size_t end = std::min(order.size(), at + tc.batch_size);
      std::vector<size_t> batch(order.begin() + at, order.begin() + end);
      std::sort(batch.begin(), batch.end());
      ps.zero_grad();
      const double scale = 1.0 / static_cast<double>(batch.size());
      for (size_t i : batch) {
        const uint64_t dseed = Rng::derive(
            tc.seed, "drop:" + std::to_string(epoch) + ":" + std::to_string(i));
        const double l = forward_backward(ds.graphs[i], ds.labels[i], ps, mc,
                                          dseed, scale);
        if (!std::isfinite(l)) throw DataError("training diverged: non-finite loss");
        epoch_loss += l;
      }
      opt.step(ps, tc.learning_rate, tc.weight_decay());
    }
    epoch_loss /= static_cast<double>(order.size());
    log.push_back({epoch, "train", epoch_loss, eval_metric(ds, idx, ps, mc)});
  }
  return log;
}

struct GridPoint {
  double learning_rate;
  int hidden_dim;
  double dropout;
  int batch_size;
};

struct CvResult {
  GridPoint best{};
  double best_metric = 0.0;
  // One row per (grid point, fold): {lr, hidden, dropout, batch, fold, metric}.
  std::vector<std::array<double, 6>> table;
};

// Grid search over stratified k-fold CV. Ties break toward lower learning
// rate, then smaller hidden dim, lower dropout, smaller batch.
inline CvResult cross_validate(const Dataset& ds,
                               const std::vector<size_t>& idx,
                               const GridSpec& grid, const ModelConfig& base_mc,
                               const TrainConfig& base_tc) {
  grid.validate();
  base_tc.validate();
  if (idx.size() < static_cast<size_t>(base_tc.folds) * ds.num_classes)
    throw DataError("dataset too small for requested folds");

  std::vector<int> sub_labels;
  for (size_t i : idx) sub_labels.push_back(ds.labels[i]);
  const std::vector<int> fold =
      stratified_folds(sub_labels, base_tc.folds, base_tc.seed);
  for (int f = 0; f < base_tc.folds; ++f) {
    std::map<int, int> hist;
    for (size_t i = 0; i < fold.size(); ++i)
      if (fold[i] == f) ++hist[sub_labels[i]];
    if (hist.size() < 2)
      throw DataError("fold " + std::to_string(f) + " has a single class");
  }

  auto lrs = grid.learning_rates;
  auto hds = grid.hidden_dims;
  auto drs = grid.dropouts;
  auto bss = grid.batch_sizes;
  std::sort(lrs.begin(), lrs.end());
  std::sort(hds.begin(), hds.end());
  std::sort(drs.begin(), drs.end());
  std::sort(bss.begin(), bss.end());

  CvResult res;
  bool first = true;
  for (double lr : lrs)
    for (int hd : hds)
      for (double dr : drs)
        for (int bs : bss) {
          double mean = 0.0;
          for (int f = 0; f < base_tc.folds; ++f) {
            std::vector<size_t> tr, va;
            for (size_t i = 0; i < idx.size(); ++i)
              (fold[i] == f ? va : tr).push_back(idx[i]);
            ModelConfig mc = base_mc;
            mc.hidden_dim = hd;
            mc.dropout = dr;
            TrainConfig tc = base_tc;
            tc.learning_rate = lr;
            tc.batch_size = bs;
            std::ostringstream tag;
            tag << "cv:" << lr << ":" << hd << ":" << dr << ":" << bs << ":" << f;
            tc.seed = Rng::derive(base_tc.seed, tag.str());
            ParamStore ps(tc.seed);
            init_params(ps, mc);
            train_model(ds, tr, mc, tc, ps);
            const double m = eval_metric(ds, va, ps, mc);
            mean += m;
            res.table.push_back({lr, double(hd), dr, double(bs), double(f), m});
          }
          mean /= base_tc.folds;
          if (first || mean > res.best_metric) {
            first = false;
            res.best_metric = mean;
            res.best = {lr, hd, dr, bs};
          }
        }
  return res;
}

struct TrainedModel {
  ParamStore params;
  ModelConfig config;
  std::vector<EpochLog> log;
};

// Trains on the given subset and writes <model_path> (MSGP), a JSON sidecar
// <model_path>.json, and an epoch CSV log <model_path>.log.csv.
inline TrainedModel train_final(const Dataset& ds,
                                const std::vector<size_t>& idx,
                                const ModelConfig& mc, const TrainConfig& tc,
                                const std::filesystem::path& model_path) {
  TrainedModel tm{ParamStore(Rng::derive(tc.seed, "final")), mc, {}};
  init_params(tm.params, mc);
  tm.log = train_model(ds, idx, mc, tc, tm.params);
  tm.params.save(model_path);

  nlohmann::ordered_json meta;
  nlohmann::ordered_json jmc;
  to_json(jmc, mc);
  nlohmann::ordered_json jtc;
  to_json(jtc, tc);
  meta["model_config"] = jmc;
  meta["train_config"] = jtc;
  meta["seed"] = tc.seed;
  meta["num_classes"] = ds.num_classes;
  if (!ds.graphs.empty()) {
    meta["level_magnifications"] = ds.graphs.front().level_magnifications;
  }
  {
    std::vector<std::string> ids;
    for (size_t i : idx) ids.push_back(ds.wsi_ids[i]);
    meta["train_wsis"] = ids;
  }
  std::ofstream side(model_path.string() + ".json", std::ios::binary);
  side << meta.dump(2) << "\n";

  std::ofstream csv(model_path.string() + ".log.csv", std::ios::binary);
  csv << "epoch,split,loss,metric\n";
  for (const auto& e : tm.log) {
    std::ostringstream row;
    row.precision(17);
    row << e.epoch << "," << e.split << "," << e.loss << "," << e.metric;
    csv << row.str() << "\n";
  }
  return tm;
}

struct Prediction {
  std::string wsi_id;
  std::vector<double> probabilities;
  std::vector<double> attention;
};

inline ModelConfig load_model_config(const std::filesystem::path& model_path) {
  std::ifstream side(model_path.string() + ".json");
  if (!side) throw IoError("missing model sidecar: " + model_path.string() + ".json");
  nlohmann::json meta = nlohmann::json::parse(side);
  return meta.at("model_config").get<ModelConfig>();
}

inline std::vector<Prediction> predict(ParamStore& ps, const ModelConfig& mc,
                                       const std::vector<MultiScaleGraph>& graphs) {
  std::vector<Prediction> out;
  for (const auto& g : graphs) {
    ForwardResult r = forward(g, ps, mc);
    double mx = *std::max_element(r.logits.begin(), r.logits.end());
    double sum = 0.0;
    std::vector<double> p(r.logits.size());
    for (size_t c = 0; c < p.size(); ++c) sum += (p[c] = std::exp(r.logits[c] - mx));
    for (double& x : p) x /= sum;
    out.push_back({g.wsi_id, std::move(p), std::move(r.attention)});
  }
  return out;
}

}  // namespace msgcn
