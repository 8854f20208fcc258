#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "msgcn/graph.hpp"
#include "msgcn/params.hpp"
#include "msgcn/tape.hpp"

namespace msgcn {

struct ModelConfig {
  int input_dim = 64;
  int hidden_dim = 64;
  int num_layers = 3;
  int num_classes = 2;
  double dropout = 0.25;
  int attention_dim = 0;  // 0 means hidden_dim
  double softmax_beta = 1.0;

  int attn_dim() const { return attention_dim > 0 ? attention_dim : hidden_dim; }
  int dense_dim() const { return hidden_dim * (num_layers + 1); }
  int head_hidden() const { return (dense_dim() + 1) / 2; }

  void validate() const {
    if (input_dim < 1 || hidden_dim < 1 || num_layers < 1 || num_classes < 2)
      throw DataError("invalid model config");
    if (dropout < 0.0 || dropout >= 1.0)
      throw DataError("model config: dropout out of range");
  }
};

inline void to_json(nlohmann::ordered_json& j, const ModelConfig& c) {
  j = {{"input_dim", c.input_dim},       {"hidden_dim", c.hidden_dim},
       {"num_layers", c.num_layers},     {"num_classes", c.num_classes},
       {"dropout", c.dropout},           {"attention_dim", c.attention_dim},
       {"softmax_beta", c.softmax_beta}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.input_dim = j.value("input_dim", c.input_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.num_layers = j.value("num_layers", c.num_layers);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.dropout = j.value("dropout", c.dropout);
  c.attention_dim = j.value("attention_dim", c.attention_dim);
  c.softmax_beta = j.value("softmax_beta", c.softmax_beta);
}

// Creation order defines the on-disk parameter order; keep it stable.
inline void init_params(ParamStore& ps, const ModelConfig& c) {
  c.validate();
  const int h = c.hidden_dim;
  const int D = c.dense_dim();
  const int Da = c.attn_dim();
  ps.create("input.w", c.input_dim, h, InitScheme::UniformFanIn);
  ps.create("input.b", 1, h, InitScheme::Zeros);
  for (int l = 0; l < c.num_layers; ++l) {
    const std::string p = "gen" + std::to_string(l) + ".";
    ps.create(p + "w1", h, 2 * h, InitScheme::UniformFanIn);
    ps.create(p + "b1", 1, 2 * h, InitScheme::Zeros);
    ps.create(p + "w2", 2 * h, h, InitScheme::UniformFanIn);
    ps.create(p + "b2", 1, h, InitScheme::Zeros);
  }
  ps.create("attn.v", D, Da, InitScheme::UniformFanIn);
  ps.create("attn.u", D, Da, InitScheme::UniformFanIn);
  ps.create("attn.w", Da, 1, InitScheme::UniformFanIn);
  ps.create("head.w1", D, c.head_hidden(), InitScheme::UniformFanIn);
  ps.create("head.b1", 1, c.head_hidden(), InitScheme::Zeros);
  ps.create("head.w2", c.head_hidden(), c.num_classes, InitScheme::UniformFanIn);
  ps.create("head.b2", 1, c.num_classes, InitScheme::Zeros);
}

inline size_t count_params(const ModelConfig& c) {
  c.validate();
  const size_t h = c.hidden_dim;
  const size_t D = c.dense_dim();
  const size_t Da = c.attn_dim();
  const size_t Dh = c.head_hidden();
  size_t n = static_cast<size_t>(c.input_dim) * h + h;
  n += c.num_layers * (h * 2 * h + 2 * h + 2 * h * h + h);
  n += 2 * D * Da + Da;
  n += D * Dh + Dh + Dh * c.num_classes + c.num_classes;
  return n;
}

struct ForwardResult {
  std::vector<double> logits;
  std::vector<double> attention;  // z, length V, sums to 1
  std::vector<double> pooled;     // length h·(L+1)
  std::vector<Mat> layer_states;  // H⁰..H^L when requested
};

struct ForwardOptions {
  bool train = false;
  uint64_t dropout_seed = 0;
  bool keep_layer_states = false;
};

namespace detail {

struct BuiltModel {
  std::vector<Tape::Id> param_ids;  // parallel to ParamStore entry order
  Tape::Id logits = -1;
  Tape::Id z = -1;
  Tape::Id pooled = -1;
  std::vector<Tape::Id> layers;
};

// Emits the whole forward computation onto the tape. One GEN layer is:
// message m_ij = relu(h_j) + ε, per-channel softmax aggregation over N(i)
// (weights from β·m), then h ← MLP(h + agg) + h. Dense connections feed the
// concat of every layer state into gated attention pooling and the head.
inline BuiltModel build_forward(Tape& t, const MultiScaleGraph& g,
                                ParamStore& ps, const ModelConfig& c,
                                const ForwardOptions& opt) {
  c.validate();
  const int V = g.num_vertices();
  if (V == 0) throw DataError("forward: empty graph");
  if (g.feature_dim != static_cast<uint32_t>(c.input_dim))
    throw ShapeError("forward: graph feature dim " +
                     std::to_string(g.feature_dim) + " != config input_dim " +
                     std::to_string(c.input_dim));

  BuiltModel bm;
  for (size_t i = 0; i < ps.count(); ++i)
    bm.param_ids.push_back(t.input(ps.value_at(i)));
  auto pid = [&](const std::string& name) {
    for (size_t i = 0; i < ps.count(); ++i)
      if (ps.name_at(i) == name) return bm.param_ids[i];
    throw DataError("model parameter missing: " + name);
  };

  Mat H_raw(V, c.input_dim);
  for (size_t i = 0; i < H_raw.size(); ++i)
    H_raw.v[i] = static_cast<double>(g.features[i]);
  Tape::Id x = t.input(std::move(H_raw));

  Tape::Id H = t.relu(t.add_row(t.matmul(x, pid("input.w")), pid("input.b")));
  if (opt.train && c.dropout > 0.0)
    H = t.dropout(H, c.dropout, Rng::derive(opt.dropout_seed, "drop.in"));

  auto offsets = std::make_shared<std::vector<size_t>>(g.csr_offsets.begin(),
                                                       g.csr_offsets.end());
  auto targets = std::make_shared<std::vector<uint32_t>>(g.csr_targets);

  bm.layers.push_back(H);
  for (int l = 0; l < c.num_layers; ++l) {
    const std::string p = "gen" + std::to_string(l) + ".";
    Tape::Id msg = t.add_scalar(t.relu(t.gather_rows(H, targets)), 1e-7);
    Tape::Id alpha = t.segment_softmax(
        c.softmax_beta == 1.0 ? msg : t.scale(msg, c.softmax_beta), offsets);
    Tape::Id agg = t.segment_sum(t.mul(alpha, msg), offsets);
    Tape::Id pre = t.add(H, agg);
    Tape::Id hidden =
        t.relu(t.add_row(t.matmul(pre, pid(p + "w1")), pid(p + "b1")));
    Tape::Id mlp = t.add_row(t.matmul(hidden, pid(p + "w2")), pid(p + "b2"));
    H = t.add(mlp, H);
    bm.layers.push_back(H);
  }

  Tape::Id X = t.concat_cols(bm.layers);
  Tape::Id u = t.tanh_(t.matmul(X, pid("attn.v")));
  Tape::Id gate = t.sigmoid(t.matmul(X, pid("attn.u")));
  Tape::Id s = t.matmul(t.mul(u, gate), pid("attn.w"));  // V×1
  auto whole = std::make_shared<std::vector<size_t>>(
      std::vector<size_t>{0, static_cast<size_t>(V)});
  bm.z = t.segment_softmax(s, whole);
  bm.pooled = t.matmul(t.transpose(bm.z), X);  // 1×D

  Tape::Id hh =
      t.relu(t.add_row(t.matmul(bm.pooled, pid("head.w1")), pid("head.b1")));
  if (opt.train && c.dropout > 0.0)
    hh = t.dropout(hh, c.dropout, Rng::derive(opt.dropout_seed, "drop.head"));
  bm.logits = t.add_row(t.matmul(hh, pid("head.w2")), pid("head.b2"));
  return bm;
}

}  // namespace detail

inline ForwardResult forward(const MultiScaleGraph& g, ParamStore& ps,
                             const ModelConfig& c,
                             const ForwardOptions& opt = {}) {
  Tape t;
  auto bm = detail::build_forward(t, g, ps, c, opt);
  ForwardResult r;
  r.logits = t.val(bm.logits).v;
  r.attention = t.val(bm.z).v;
  r.pooled = t.val(bm.pooled).v;
  if (opt.keep_layer_states)
    for (Tape::Id id : bm.layers) r.layer_states.push_back(t.val(id));
  return r;
}

// Runs forward + cross-entropy backward and accumulates grad_scale × grads
// into the store. Returns the (unscaled) loss.
inline double forward_backward(const MultiScaleGraph& g, int label,
                               ParamStore& ps, const ModelConfig& c,
                               uint64_t dropout_seed, double grad_scale = 1.0,
                               bool train = true) {
  Tape t;
  ForwardOptions opt;
  opt.train = train;
  opt.dropout_seed = dropout_seed;
  auto bm = detail::build_forward(t, g, ps, c, opt);
  Tape::Id loss = t.softmax_cross_entropy(bm.logits, label);
  t.backward(loss);
  for (size_t i = 0; i < ps.count(); ++i) {
    const Mat& gmat = t.grad(bm.param_ids[i]);
    Mat& acc = ps.grad_at(i);
    for (size_t k = 0; k < gmat.size(); ++k)
      acc.v[k] += grad_scale * gmat.v[k];
  }
  return t.val(loss)(0, 0);
}

}  // namespace msgcn
