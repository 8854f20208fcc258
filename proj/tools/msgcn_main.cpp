// msgcn: command line front end for the MS-GCN pipeline.
//
// Subcommands: synth, build-graph, stats, cv, train, predict, influence,
// heatmap. Every command echoes its resolved configuration as JSON to stdout
// before doing any work. Exit codes: 0 success, 1 usage error, 2 data error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "msgcn/msgcn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw msgcn::IoError("cannot open config file: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw msgcn::DataError("malformed config file " + path + ": " + e.what());
  }
}

void echo_config(const std::string& command, const ordered_json& resolved) {
  ordered_json j;
  j["command"] = command;
  j["config"] = resolved;
  std::cout << j.dump(2) << "\n";
}

// All .msgg files under a directory (or the path itself), sorted by name so
// downstream reductions are deterministic.
std::vector<fs::path> graph_files(const fs::path& where) {
  std::vector<fs::path> files;
  if (fs::is_directory(where)) {
    for (const auto& e : fs::directory_iterator(where))
      if (e.path().extension() == ".msgg") files.push_back(e.path());
  } else if (fs::exists(where)) {
    files.push_back(where);
  }
  if (files.empty())
    throw msgcn::DataError("no graph files found at " + where.string());
  std::sort(files.begin(), files.end());
  return files;
}

std::string crc_hex(uint32_t crc) {
  std::ostringstream s;
  s << std::hex << std::setw(8) << std::setfill('0') << crc;
  return s.str();
}

uint32_t file_crc(const fs::path& path, uint32_t crc = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw msgcn::IoError("cannot open " + path.string());
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0)
    crc = msgcn::crc32(reinterpret_cast<const uint8_t*>(buf),
                       static_cast<size_t>(in.gcount()), crc);
  return crc;
}

ordered_json stats_json(const std::string& wsi_id, const msgcn::GraphStats& s) {
  ordered_json j;
  j["wsi_id"] = wsi_id;
  j["num_vertices"] = s.num_vertices;
  j["spatial_edges"] = s.spatial_edges;
  j["magnification_edges"] = s.magnification_edges;
  j["vertices_per_level"] = s.vertices_per_level;
  ordered_json hist = ordered_json::object();
  for (const auto& [deg, n] : s.degree_histogram)
    hist[std::to_string(deg)] = n;
  j["degree_histogram"] = hist;
  return j;
}

// Runs fn(i) for i in [0, n) on `threads` workers over contiguous chunks.
template <class Fn>
void parallel_for(size_t n, int threads, Fn fn) {
  if (threads <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const size_t w = std::min<size_t>(threads, n);
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::mutex err_mu;
  for (size_t t = 0; t < w; ++t)
    pool.emplace_back([&, t] {
      try {
        for (size_t i = t; i < n; i += w) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err) err = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string task, out, config;
  int num_wsis = -1;
  uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  msgcn::SyntheticDatasetSpec spec = load_config_file(a.config)
                                         .get<msgcn::SyntheticDatasetSpec>();
  if (!a.task.empty()) {
    if (a.task == "structure")
      spec.task = msgcn::SyntheticTask::Structure;
    else if (a.task == "cellular")
      spec.task = msgcn::SyntheticTask::Cellular;
    else
      throw CLI::ValidationError("--task must be structure or cellular");
  }
  if (a.num_wsis > 0) spec.num_wsis = a.num_wsis;
  spec.seed = a.seed;

  ordered_json resolved;
  to_json(resolved, spec);
  resolved["out"] = a.out;
  echo_config("synth", resolved);

  auto paths = msgcn::generate_synthetic(spec, a.out);
  ordered_json done;
  done["manifest"] = paths.manifest.string();
  done["labels"] = paths.labels.string();
  done["feature_dir"] = paths.feature_dir.string();
  std::cout << done.dump(2) << "\n";
  return 0;
}

struct BuildGraphArgs {
  std::string manifest, features_dir, out;
  int threads = 1;
};

int run_build_graph(const BuildGraphArgs& a) {
  const fs::path manifest = a.manifest;
  const fs::path feat_dir =
      a.features_dir.empty() ? manifest.parent_path() : fs::path(a.features_dir);

  ordered_json resolved;
  resolved["manifest"] = manifest.string();
  resolved["features_dir"] = feat_dir.string();
  resolved["out"] = a.out;
  resolved["threads"] = a.threads;
  echo_config("build-graph", resolved);

  auto groups = msgcn::parse_manifest(manifest);
  fs::create_directories(a.out);
  std::vector<const std::string*> ids;
  std::vector<const std::vector<msgcn::TileRecord>*> tiles;
  for (const auto& [id, ts] : groups) {
    ids.push_back(&id);
    tiles.push_back(&ts);
  }
  std::vector<std::string> lines(ids.size());
  parallel_for(ids.size(), a.threads, [&](size_t i) {
    // One provider per task keeps the feature cache thread-local.
    msgcn::FileFeatureProvider feats(feat_dir);
    auto g = msgcn::build_graph(*tiles[i], feats);
    msgcn::save_graph(g, fs::path(a.out) / (*ids[i] + ".msgg"));
    lines[i] = stats_json(*ids[i], msgcn::graph_stats(g)).dump();
  });
  for (const auto& l : lines) std::cout << l << "\n";
  return 0;
}

int run_stats(const std::string& graphs) {
  ordered_json resolved;
  resolved["graphs"] = graphs;
  echo_config("stats", resolved);
  for (const auto& f : graph_files(graphs)) {
    auto g = msgcn::load_graph(f);
    std::cout << stats_json(g.wsi_id, msgcn::graph_stats(g)).dump() << "\n";
  }
  return 0;
}

// Shared train/cv configuration: {"model": {...}, "train": {...}} JSON with
// CLI flags layered on top. input_dim, num_classes, and (unless configured)
// num_layers come from the data.
struct FitConfig {
  msgcn::ModelConfig model;
  msgcn::TrainConfig train;
  bool num_layers_configured = false;
};

FitConfig resolve_fit_config(const std::string& config_path, uint64_t seed,
                             int folds, const msgcn::Dataset& ds) {
  FitConfig fc;
  json cfg = load_config_file(config_path);
  if (cfg.contains("model")) fc.model = cfg.at("model").get<msgcn::ModelConfig>();
  if (cfg.contains("train")) fc.train = cfg.at("train").get<msgcn::TrainConfig>();
  fc.num_layers_configured =
      cfg.contains("model") && cfg.at("model").contains("num_layers");
  fc.train.seed = seed;
  if (folds > 0) fc.train.folds = folds;

  fc.model.input_dim = static_cast<int>(ds.graphs.front().feature_dim);
  fc.model.num_classes = ds.num_classes;
  fc.train.loss = ds.num_classes == 2 ? msgcn::LossKind::BinaryCrossEntropy
                                      : msgcn::LossKind::CategoricalCrossEntropy;
  const int M = ds.graphs.front().num_levels;
  if (!fc.num_layers_configured) fc.model.num_layers = std::max(1, M - 1);
  if (fc.model.num_layers != M - 1)
    std::cerr << "warning: num_layers=" << fc.model.num_layers
              << " differs from num_levels-1=" << M - 1 << "\n";
  return fc;
}

ordered_json fit_config_json(const FitConfig& fc) {
  ordered_json jm, jt;
  to_json(jm, fc.model);
  to_json(jt, fc.train);
  return ordered_json{{"model_config", jm}, {"train_config", jt}};
}

struct CvArgs {
  std::string graphs, labels, grid, config, out;
  uint64_t seed = 0;
  int folds = 0;
};

int run_cv(const CvArgs& a) {
  auto ds = msgcn::load_dataset(a.graphs, a.labels);
  FitConfig fc = resolve_fit_config(a.config, a.seed, a.folds, ds);
  msgcn::GridSpec grid;
  {
    json cfg = load_config_file(a.config);
    if (cfg.contains("grid")) grid = cfg.at("grid").get<msgcn::GridSpec>();
  }
  if (!a.grid.empty()) grid = load_config_file(a.grid).get<msgcn::GridSpec>();

  ordered_json resolved = fit_config_json(fc);
  ordered_json jg;
  to_json(jg, grid);
  resolved["grid"] = jg;
  resolved["graphs"] = a.graphs;
  resolved["labels"] = a.labels;
  resolved["out"] = a.out;
  echo_config("cv", resolved);

  auto [train_idx, test_idx] = msgcn::stratified_split(
      ds.labels, fc.train.train_fraction, fc.train.seed);
  auto res = msgcn::cross_validate(ds, train_idx, grid, fc.model, fc.train);

  ordered_json rep;
  rep["best"] = {{"learning_rate", res.best.learning_rate},
                 {"hidden_dim", res.best.hidden_dim},
                 {"dropout", res.best.dropout},
                 {"batch_size", res.best.batch_size}};
  rep["best_metric"] = res.best_metric;
  rep["columns"] = {"learning_rate", "hidden_dim", "dropout",
                    "batch_size", "fold", "metric"};
  rep["table"] = res.table;
  {
    std::vector<std::string> tr, te;
    for (size_t i : train_idx) tr.push_back(ds.wsi_ids[i]);
    for (size_t i : test_idx) te.push_back(ds.wsi_ids[i]);
    rep["train_wsis"] = tr;
    rep["test_wsis"] = te;
  }
  const std::string text = rep.dump(2);
  if (!a.out.empty()) {
    std::ofstream out(a.out, std::ios::binary);
    if (!out) throw msgcn::IoError("cannot write " + a.out);
    out << text << "\n";
  }
  std::cout << text << "\n";
  return 0;
}

struct TrainArgs {
  std::string graphs, labels, config, model;
  uint64_t seed = 0;
};

int run_train(const TrainArgs& a) {
  auto ds = msgcn::load_dataset(a.graphs, a.labels);
  FitConfig fc = resolve_fit_config(a.config, a.seed, 0, ds);

  ordered_json resolved = fit_config_json(fc);
  resolved["graphs"] = a.graphs;
  resolved["labels"] = a.labels;
  resolved["model"] = a.model;
  echo_config("train", resolved);

  auto [train_idx, test_idx] = msgcn::stratified_split(
      ds.labels, fc.train.train_fraction, fc.train.seed);
  fs::create_directories(fs::path(a.model).parent_path().empty()
                             ? fs::path(".")
                             : fs::path(a.model).parent_path());
  auto tm = msgcn::train_final(ds, train_idx, fc.model, fc.train, a.model);

  ordered_json summary;
  summary["model"] = a.model;
  summary["train_metric"] =
      msgcn::eval_metric(ds, train_idx, tm.params, tm.config);
  if (!test_idx.empty())
    summary["test_metric"] =
        msgcn::eval_metric(ds, test_idx, tm.params, tm.config);
  summary["final_train_loss"] =
      tm.log.empty() ? 0.0 : tm.log.back().loss;
  std::cout << summary.dump(2) << "\n";
  return 0;
}

struct PredictArgs {
  std::string model, graphs, out;
  int threads = 1;
};

int run_predict(const PredictArgs& a) {
  ordered_json resolved;
  resolved["model"] = a.model;
  resolved["graphs"] = a.graphs;
  resolved["out"] = a.out;
  resolved["threads"] = a.threads;
  echo_config("predict", resolved);

  auto ps = msgcn::ParamStore::load(a.model);
  auto mc = msgcn::load_model_config(a.model);
  auto files = graph_files(a.graphs);
  std::vector<msgcn::Prediction> preds(files.size());
  parallel_for(files.size(), a.threads, [&](size_t i) {
    auto g = msgcn::load_graph(files[i]);
    preds[i] = std::move(msgcn::predict(ps, mc, {g}).front());
  });

  std::ostringstream csv;
  csv.precision(17);
  csv << "wsi_id";
  for (int c = 0; c < mc.num_classes; ++c) csv << ",prob_" << c;
  csv << ",pred\n";
  for (const auto& p : preds) {
    csv << p.wsi_id;
    for (double x : p.probabilities) csv << "," << x;
    const int arg = static_cast<int>(
        std::max_element(p.probabilities.begin(), p.probabilities.end()) -
        p.probabilities.begin());
    csv << "," << arg << "\n";
  }
  if (!a.out.empty()) {
    fs::create_directories(fs::path(a.out).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(a.out).parent_path());
    std::ofstream out(a.out, std::ios::binary);
    if (!out) throw msgcn::IoError("cannot write " + a.out);
    out << csv.str();
  } else {
    std::cout << csv.str();
  }
  return 0;
}

struct InfluenceArgs {
  std::string model, graphs, out;
};

int run_influence(const InfluenceArgs& a) {
  ordered_json resolved;
  resolved["model"] = a.model;
  resolved["graphs"] = a.graphs;
  resolved["out"] = a.out;
  echo_config("influence", resolved);

  auto ps = msgcn::ParamStore::load(a.model);
  auto mc = msgcn::load_model_config(a.model);
  auto files = graph_files(a.graphs);
  std::vector<msgcn::MultiScaleGraph> graphs;
  std::vector<std::vector<double>> zs;
  uint32_t dataset_crc = 0;
  for (const auto& f : files) {
    dataset_crc = file_crc(f, dataset_crc);
    graphs.push_back(msgcn::load_graph(f));
    zs.push_back(msgcn::forward(graphs.back(), ps, mc).attention);
  }
  std::vector<const msgcn::MultiScaleGraph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  auto rep = msgcn::influence_scores(ptrs, zs, a.graphs);
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";

  auto j = msgcn::influence_report_json(rep, crc_hex(file_crc(a.model)),
                                        crc_hex(dataset_crc));
  const std::string text = j.dump(2);
  if (!a.out.empty()) {
    std::ofstream out(a.out, std::ios::binary);
    if (!out) throw msgcn::IoError("cannot write " + a.out);
    out << text << "\n";
  }
  std::cout << text << "\n";
  return 0;
}

struct HeatmapArgs {
  std::string model, graphs, out;
  int mag_level = 1;
};

int run_heatmap(const HeatmapArgs& a) {
  ordered_json resolved;
  resolved["model"] = a.model;
  resolved["graphs"] = a.graphs;
  resolved["mag_level"] = a.mag_level;
  resolved["out"] = a.out;
  echo_config("heatmap", resolved);

  auto ps = msgcn::ParamStore::load(a.model);
  auto mc = msgcn::load_model_config(a.model);
  fs::create_directories(a.out);
  for (const auto& f : graph_files(a.graphs)) {
    auto g = msgcn::load_graph(f);
    auto r = msgcn::forward(g, ps, mc);
    const std::string stem =
        g.wsi_id + "_level" + std::to_string(a.mag_level);
    msgcn::export_heatmap(g, r.attention, a.mag_level,
                          fs::path(a.out) / (stem + ".csv"),
                          fs::path(a.out) / (stem + ".pgm"));
    std::cout << "wrote " << (fs::path(a.out) / stem).string()
              << ".{csv,pgm}\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MS-GCN multi-scale graph pipeline"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand(
      "synth", "Generate a synthetic tile manifest, features, and labels");
  c_synth->add_option("--task", synth.task, "Task: structure or cellular")
      ->required();
  c_synth->add_option("--num-wsis", synth.num_wsis, "Number of WSIs")
      ->default_val(40);
  c_synth->add_option("--seed", synth.seed, "Random seed")->required();
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--config", synth.config, "JSON dataset spec")
      ->default_val("");

  BuildGraphArgs bg;
  auto* c_bg = app.add_subcommand(
      "build-graph", "Build one multi-scale graph per WSI from a manifest");
  c_bg->add_option("--manifest", bg.manifest, "Tile manifest (JSONL)")
      ->required();
  c_bg->add_option("--features-dir", bg.features_dir,
                   "Feature file directory (default: manifest directory)")
      ->default_val("");
  c_bg->add_option("--out", bg.out, "Output directory for .msgg files")
      ->required();
  c_bg->add_option("--threads", bg.threads, "Worker threads")->default_val(1);

  std::string stats_graphs;
  auto* c_stats =
      app.add_subcommand("stats", "Print per-graph statistics as JSON lines");
  c_stats->add_option("--graphs", stats_graphs, "Graph directory or file")
      ->required();

  CvArgs cv;
  auto* c_cv = app.add_subcommand(
      "cv", "Grid search over stratified k-fold cross-validation");
  c_cv->add_option("--graphs", cv.graphs, "Graph directory")->required();
  c_cv->add_option("--labels", cv.labels, "Labels CSV")->required();
  c_cv->add_option("--seed", cv.seed, "Random seed")->required();
  c_cv->add_option("--folds", cv.folds, "Number of folds")->default_val(5);
  c_cv->add_option("--grid", cv.grid, "JSON grid spec file")->default_val("");
  c_cv->add_option("--config", cv.config, "JSON model/train config")
      ->default_val("");
  c_cv->add_option("--out", cv.out, "CV report JSON path")->default_val("");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand(
      "train", "Train a final model on the stratified train split");
  c_tr->add_option("--graphs", tr.graphs, "Graph directory")->required();
  c_tr->add_option("--labels", tr.labels, "Labels CSV")->required();
  c_tr->add_option("--seed", tr.seed, "Random seed")->required();
  c_tr->add_option("--config", tr.config, "JSON model/train config")
      ->default_val("");
  c_tr->add_option("--model", tr.model, "Output model path (.msgp)")
      ->required();

  PredictArgs pr;
  auto* c_pr =
      app.add_subcommand("predict", "Predict class probabilities per WSI");
  c_pr->add_option("--model", pr.model, "Model path (.msgp)")->required();
  c_pr->add_option("--graphs", pr.graphs, "Graph directory or file")
      ->required();
  c_pr->add_option("--out", pr.out, "Predictions CSV path (default: stdout)")
      ->default_val("");
  c_pr->add_option("--threads", pr.threads, "Worker threads")->default_val(1);

  InfluenceArgs inf;
  auto* c_inf = app.add_subcommand(
      "influence", "Compute per-magnification influence scores");
  c_inf->add_option("--model", inf.model, "Model path (.msgp)")->required();
  c_inf->add_option("--graphs", inf.graphs, "Graph directory or file")
      ->required();
  c_inf->add_option("--out", inf.out, "Report JSON path (default: stdout)")
      ->default_val("");

  HeatmapArgs hm;
  auto* c_hm = app.add_subcommand(
      "heatmap", "Export attention heatmaps for one magnification level");
  c_hm->add_option("--model", hm.model, "Model path (.msgp)")->required();
  c_hm->add_option("--graphs", hm.graphs, "Graph directory or file")
      ->required();
  c_hm->add_option("--mag-level", hm.mag_level, "Magnification level (1-based)")
      ->required();
  c_hm->add_option("--out", hm.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // help text, exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*c_synth) return run_synth(synth);
    if (*c_bg) return run_build_graph(bg);
    if (*c_stats) return run_stats(stats_graphs);
    if (*c_cv) return run_cv(cv);
    if (*c_tr) return run_train(tr);
    if (*c_pr) return run_predict(pr);
    if (*c_inf) return run_influence(inf);
    if (*c_hm) return run_heatmap(hm);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const msgcn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
