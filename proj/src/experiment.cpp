#include "xclr/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace xclr {

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(Errc::ConfigError, what); }

// Walks an object, dispatching known keys and rejecting the rest.
template <typename Handlers>
void for_keys(const Json& j, const std::string& section, Handlers&& handle) {
  if (!j.is_object()) config_error(section + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    try {
      if (!handle(it.key(), it.value())) config_error("unknown key '" + section + "." + it.key() + "'");
    } catch (const nlohmann::json::exception& e) {
      config_error("bad value for '" + section + "." + it.key() + "': " + e.what());
    }
  }
}

class AugmentationSource final : public GraphSource {
 public:
  explicit AugmentationSource(std::size_t n) : n_(n) {}
  std::size_t size() const override { return n_; }
  double similarity(std::size_t i, std::size_t j) const override { return i == j ? 1.0 : 0.0; }

 private:
  std::size_t n_;
};

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  ExperimentConfig c;
  for_keys(j, "config", [&](const std::string& key, const Json& v) {
    if (key == "output_dir") {
      c.output_dir = v.get<std::string>();
    } else if (key == "train") {
      TrainConfig& t = c.train;
      for_keys(v, "train", [&](const std::string& k, const Json& x) {
        if (k == "batch_size") t.batch_size = x.get<std::size_t>();
        else if (k == "epochs") t.epochs = x.get<std::size_t>();
        else if (k == "learning_rate") t.learning_rate = x.get<double>();
        else if (k == "momentum") t.momentum = x.get<double>();
        else if (k == "weight_decay") t.weight_decay = x.get<double>();
        else if (k == "optimizer") t.optimizer = parse_optimizer(x.get<std::string>());
        else if (k == "cosine_schedule") t.cosine_schedule = x.get<bool>();
        else if (k == "tau") t.tau = x.get<double>();
        else if (k == "tau_s") t.tau_s = x.get<double>();
        else if (k == "seed") t.seed = x.get<std::uint64_t>();
        else if (k == "aug_noise") t.aug_noise = x.get<double>();
        else if (k == "dropout") t.dropout = x.get<double>();
        else if (k == "objective") t.objective = parse_objective(x.get<std::string>());
        else if (k == "arch") {
          for_keys(x, "train.arch", [&](const std::string& a, const Json& y) {
            if (a == "hidden_width") t.arch.hidden_width = y.get<std::size_t>();
            else if (a == "backbone_depth") t.arch.backbone_depth = y.get<std::size_t>();
            else if (a == "projector_width") t.arch.projector_width = y.get<std::size_t>();
            else if (a == "embedding_dim") t.arch.embedding_dim = y.get<std::size_t>();
            else return false;
            return true;
          });
        } else return false;
        return true;
      });
    } else if (key == "data") {
      DataSpec& d = c.data;
      for_keys(v, "data", [&](const std::string& k, const Json& x) {
        if (k == "dir") d.dir = x.get<std::string>();
        else if (k == "n_super") d.n_super = x.get<std::size_t>();
        else if (k == "n_sub_per_super") d.n_sub_per_super = x.get<std::size_t>();
        else if (k == "samples_per_sub") d.samples_per_sub = x.get<std::size_t>();
        else if (k == "dim") d.dim = x.get<std::size_t>();
        else if (k == "caption_dim") d.caption_dim = x.get<std::size_t>();
        else if (k == "caption_noise") d.caption_noise = x.get<double>();
        else if (k == "within") d.separation.within = x.get<double>();
        else if (k == "sub_spread") d.separation.sub_spread = x.get<double>();
        else if (k == "super_spread") d.separation.super_spread = x.get<double>();
        else if (k == "seed") d.seed = x.get<std::uint64_t>();
        else if (k == "samples_per_class") d.samples_per_class = x.get<std::size_t>();
        else return false;
        return true;
      });
    } else if (key == "graph") {
      for_keys(v, "graph", [&](const std::string& k, const Json& x) {
        if (k == "source") c.graph.source = x.get<std::string>();
        else if (k == "labels") c.graph.labels = x.get<std::string>();
        else if (k == "seed") c.graph.seed = x.get<std::uint64_t>();
        else return false;
        return true;
      });
    } else if (key == "eval") {
      EvalSpec& e = c.eval;
      for_keys(v, "eval", [&](const std::string& k, const Json& x) {
        if (k == "knn_k") e.knn_k = x.get<std::vector<std::size_t>>();
        else if (k == "probe_iterations") e.probe.iterations = x.get<std::size_t>();
        else if (k == "probe_learning_rate") e.probe.learning_rate = x.get<double>();
        else if (k == "probe_l2") e.probe.l2 = x.get<double>();
        else if (k == "probe_standardize") e.probe.standardize = x.get<bool>();
        else if (k == "pair_samples") e.pair_samples = x.get<std::size_t>();
        else if (k == "split_seed") e.split_seed = x.get<std::uint64_t>();
        else return false;
        return true;
      });
    } else {
      return false;
    }
    return true;
  });
  c.validate();
  return c;
}

Json ExperimentConfig::to_json() const {
  Json j;
  const TrainConfig& t = train;
  j["train"] = {{"batch_size", t.batch_size},
                {"epochs", t.epochs},
                {"learning_rate", t.learning_rate},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"optimizer", to_string(t.optimizer)},
                {"cosine_schedule", t.cosine_schedule},
                {"tau", t.tau},
                {"tau_s", t.tau_s},
                {"seed", t.seed},
                {"aug_noise", t.aug_noise},
                {"dropout", t.dropout},
                {"objective", to_string(t.objective)},
                {"arch",
                 {{"hidden_width", t.arch.hidden_width},
                  {"backbone_depth", t.arch.backbone_depth},
                  {"projector_width", t.arch.projector_width},
                  {"embedding_dim", t.arch.embedding_dim}}}};
  j["data"] = {{"dir", data.dir},
               {"n_super", data.n_super},
               {"n_sub_per_super", data.n_sub_per_super},
               {"samples_per_sub", data.samples_per_sub},
               {"dim", data.dim},
               {"caption_dim", data.caption_dim},
               {"caption_noise", data.caption_noise},
               {"within", data.separation.within},
               {"sub_spread", data.separation.sub_spread},
               {"super_spread", data.separation.super_spread},
               {"seed", data.seed},
               {"samples_per_class", data.samples_per_class}};
  j["graph"] = {{"source", graph.source}, {"labels", graph.labels}, {"seed", graph.seed}};
  j["eval"] = {{"knn_k", eval.knn_k},
               {"probe_iterations", eval.probe.iterations},
               {"probe_learning_rate", eval.probe.learning_rate},
               {"probe_l2", eval.probe.l2},
               {"probe_standardize", eval.probe.standardize},
               {"pair_samples", eval.pair_samples},
               {"split_seed", eval.split_seed}};
  j["output_dir"] = output_dir;
  return j;
}

void ExperimentConfig::validate() const {
  train.validate();
  if (!data.dir.empty() && !std::filesystem::exists(std::filesystem::path(data.dir) / "manifest.json"))
    config_error("data.dir '" + data.dir + "' has no manifest.json");
  if (data.dir.empty()) {
    if (data.n_super < 1 || data.n_sub_per_super < 1 || data.samples_per_sub < 1)
      config_error("class and sample counts must be >= 1");
    if (data.dim < 2 || data.caption_dim < 2) config_error("dimensions must be >= 2");
  }
  static const std::set<std::string> kSources{"class", "caption", "hierarchy", "random-class",
                                              "random-sample", "augmentation"};
  if (graph.source.rfind("table:", 0) == 0) {
    if (!std::filesystem::exists(graph.source.substr(6)))
      config_error("graph table '" + graph.source.substr(6) + "' does not exist");
  } else if (!kSources.contains(graph.source)) {
    config_error("unknown graph source '" + graph.source + "'");
  }
  if (graph.labels != "subclass" && graph.labels != "superclass")
    config_error("graph.labels must be subclass or superclass");
  for (std::size_t k : eval.knn_k)
    if (k < 1) config_error("knn k values must be >= 1");
  if (eval.pair_samples < 1) config_error("eval.pair_samples must be >= 1");
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) config_error("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    config_error("config " + path.string() + ": " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

Json generator_json(const DataSpec& spec) {
  return {{"n_super", spec.n_super},
          {"n_sub_per_super", spec.n_sub_per_super},
          {"samples_per_sub", spec.samples_per_sub},
          {"dim", spec.dim},
          {"caption_dim", spec.caption_dim},
          {"caption_noise", spec.caption_noise},
          {"within", spec.separation.within},
          {"sub_spread", spec.separation.sub_spread},
          {"super_spread", spec.separation.super_spread},
          {"seed", spec.seed}};
}

SyntheticDataset materialize_dataset(const DataSpec& spec) {
  if (!spec.dir.empty()) return load_dataset(spec.dir);
  SyntheticDataset ds = gen_synthetic(spec.n_super, spec.n_sub_per_super, spec.samples_per_sub, spec.dim,
                                      spec.separation, spec.seed);
  ds.captions = synth_caption_embeddings(ds, spec.caption_dim, spec.caption_noise, mix_seed(spec.seed, 1));
  return ds;
}

std::vector<std::size_t> graph_labels(const SyntheticDataset& ds, const std::string& level) {
  return level == "superclass" ? ds.superclass : ds.subclass;
}

HierarchyTree dataset_hierarchy(const SyntheticDataset& ds) {
  HierarchyTree t;
  t.parent.push_back(HierarchyTree::kNoParent);
  for (std::size_t s = 0; s < ds.n_super; ++s) t.parent.push_back(0);
  std::vector<std::size_t> super_of(ds.n_sub, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) super_of[ds.subclass[i]] = ds.superclass[i];
  for (std::size_t c = 0; c < ds.n_sub; ++c) {
    t.class_leaf.push_back(t.parent.size());
    t.parent.push_back(1 + super_of[c]);
  }
  return t;
}

std::unique_ptr<GraphSource> make_graph_source(const GraphSpec& spec, const SyntheticDataset& ds) {
  const auto labels = graph_labels(ds, spec.labels);
  const std::size_t classes = spec.labels == "superclass" ? ds.n_super : ds.n_sub;
  if (spec.source == "caption") {
    if (ds.captions.empty()) throw Error(Errc::ConfigError, "caption graph needs caption embeddings");
    return std::make_unique<EmbeddingGraphSource>(ds.captions);
  }
  if (spec.source == "class")
    return std::make_unique<TableGraphSource>(ClassSimilarityTable(Matrix::identity(classes)), labels);
  if (spec.source == "random-class")
    return std::make_unique<TableGraphSource>(random_class_table(classes, spec.seed), labels);
  if (spec.source == "random-sample")
    return std::make_unique<SimilarityGraph>(
        build_random_graph(RandomGraphMode::PerSamplePair, ds.size(), std::nullopt, spec.seed));
  if (spec.source == "augmentation") return std::make_unique<AugmentationSource>(ds.size());
  if (spec.source == "hierarchy") {
    std::vector<std::size_t> class_ids(ds.n_sub);
    for (std::size_t c = 0; c < ds.n_sub; ++c) class_ids[c] = c;
    const SimilarityGraph per_class = build_hierarchy_graph(dataset_hierarchy(ds), class_ids);
    return std::make_unique<TableGraphSource>(ClassSimilarityTable(per_class.values()), ds.subclass);
  }
  if (spec.source.rfind("table:", 0) == 0) {
    Matrix t = read_xmat(spec.source.substr(6));
    // f32 storage can leave asymmetry at the 1e-7 level; average it out.
    for (std::size_t a = 0; a < t.rows() && t.rows() == t.cols(); ++a) {
      t(a, a) = 1.0;
      for (std::size_t b = 0; b < a; ++b) t(a, b) = t(b, a) = 0.5 * (t(a, b) + t(b, a));
    }
    return std::make_unique<TableGraphSource>(ClassSimilarityTable(std::move(t)), labels);
  }
  throw Error(Errc::ConfigError, "unknown graph source '" + spec.source + "'");
}

TrainRun run_training(const ExperimentConfig& cfg, const SyntheticDataset& train_set,
                      const TrainState* resume) {
  TrainRun run;
  run.state = resume ? *resume : initial_state(train_set.features.cols(), cfg.train);
  std::unique_ptr<GraphSource> graph;
  if (cfg.train.objective == Objective::Xclr) graph = make_graph_source(cfg.graph, train_set);
  const auto labels = graph_labels(train_set, cfg.graph.labels);
  TrainData data{train_set.features, labels, graph.get()};
  run.metrics = train(data, cfg.train, run.state);
  return run;
}

Json evaluate(const EncoderParams& params, const SyntheticDataset& ds, const EvalSpec& spec) {
  const Matrix feats = encode(params, ds.features);
  const Split split = even_split(ds.size(), spec.split_seed);
  const Matrix train_x = select_rows(feats, split.train);
  const Matrix test_x = select_rows(feats, split.test);

  auto probe_json = [](const ProbeReport& r) {
    return Json{{"accuracy", r.accuracy},
                {"per_class_accuracy", r.per_class_accuracy},
                {"class_counts", r.class_counts},
                {"initial_loss", r.loss_trace.empty() ? 0.0 : r.loss_trace.front()},
                {"final_loss", r.loss_trace.empty() ? 0.0 : r.loss_trace.back()}};
  };

  Json report;
  Json probes;
  for (const char* level : {"subclass", "superclass"}) {
    const auto labels = graph_labels(ds, level);
    probes[level] = probe_json(linear_probe(train_x, select(labels, split.train), test_x,
                                            select(labels, split.test), spec.probe));
  }
  report["linear_probe"] = probes;

  Json knn = Json::array();
  const auto train_sub = select(ds.subclass, split.train);
  const auto test_sub = select(ds.subclass, split.test);
  const auto train_super = select(ds.superclass, split.train);
  const auto test_super = select(ds.superclass, split.test);
  for (std::size_t k : spec.knn_k) {
    if (k > train_x.rows()) continue;
    knn.push_back({{"k", k},
                   {"subclass_accuracy", knn_accuracy(train_x, train_sub, test_x, test_sub, k).accuracy},
                   {"superclass_accuracy", knn_accuracy(train_x, train_super, test_x, test_super, k).accuracy}});
  }
  report["knn"] = knn;

  const auto learned = class_pair_similarity(feats, ds.subclass, spec.pair_samples, spec.split_seed);
  Json pair{{"samples_per_class", learned.sample_counts}, {"learned", Json::array()}};
  for (std::size_t a = 0; a < learned.values.rows(); ++a)
    pair["learned"].push_back(std::vector<double>(learned.values.row(a).begin(), learned.values.row(a).end()));
  if (!ds.captions.empty()) {
    const auto target = class_pair_similarity(ds.captions, ds.subclass, spec.pair_samples, spec.split_seed);
    pair["caption_correlation"] = pearson(off_diagonal(learned.values), off_diagonal(target.values));
  }
  report["class_pair_similarity"] = pair;

  const GraphMetrics gm = graph_metrics(feats, ds.subclass);
  report["graph_metrics"] = {{"definition_version", 1},
                             {"label_error", gm.label_error},
                             {"intra_class_connectivity", gm.intra_class_connectivity},
                             {"within_mean", gm.within_mean},
                             {"cross_mean", gm.cross_mean},
                             {"denominator_floored", gm.denominator_floored}};
  return report;
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string metrics_csv(const std::vector<EpochMetrics>& metrics) {
  std::string out = "epoch,mean_loss\n";
  for (const auto& m : metrics) out += std::to_string(m.epoch) + "," + format_number(m.mean_loss) + "\n";
  return out;
}

std::string timing_csv(const std::vector<EpochMetrics>& metrics) {
  std::string out = "epoch,wall_seconds\n";
  for (const auto& m : metrics) out += std::to_string(m.epoch) + "," + format_number(m.wall_seconds) + "\n";
  return out;
}

std::string matrix_csv(const Matrix& m) {
  std::string out;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_number(m(i, j));
    }
    out += '\n';
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(Errc::IoError, "short write to " + path.string());
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const SweepRequest& request) {
  if (request.axis != "tau-s" && request.axis != "samples-per-class")
    throw Error(Errc::ConfigError, "sweep axis must be tau-s or samples-per-class");
  if (request.values.empty()) throw Error(Errc::ConfigError, "sweep needs at least one value");
  if (request.seeds < 1) throw Error(Errc::ConfigError, "sweep needs at least one seed");
  for (double v : request.values) {
    if (request.axis == "tau-s" && !(v > 0.0)) throw Error(Errc::ConfigError, "tau-s values must be > 0");
    if (request.axis == "samples-per-class" && !(v >= 1.0 && v == std::floor(v)))
      throw Error(Errc::ConfigError, "samples-per-class values must be positive integers");
  }

  const SyntheticDataset full = materialize_dataset(cfg.data);
  std::vector<SweepRow> rows;
  for (std::size_t vi = 0; vi < request.values.size(); ++vi) {
    const double value = request.values[vi];
    for (std::size_t r = 0; r < request.seeds; ++r) {
      const std::uint64_t seed = cfg.train.seed + vi * request.seeds + r;
      for (Objective objective : request.objectives) {
        ExperimentConfig run_cfg = cfg;
        run_cfg.train.seed = seed;
        run_cfg.train.objective = objective;
        SyntheticDataset train_set = full;
        if (request.axis == "tau-s") {
          run_cfg.train.tau_s = value;
          if (cfg.data.samples_per_class > 0)
            train_set = subsample_per_class(full, cfg.data.samples_per_class, mix_seed(seed, 2));
        } else {
          train_set = subsample_per_class(full, static_cast<std::size_t>(value), mix_seed(seed, 2));
        }
        run_cfg.train.batch_size = std::min(run_cfg.train.batch_size, train_set.size());
        const std::size_t batches = train_set.size() / run_cfg.train.batch_size;
        if (request.step_budget > 0)
          run_cfg.train.epochs = std::max(run_cfg.train.epochs, (request.step_budget + batches - 1) / batches);

        TrainRun run = run_training(run_cfg, train_set);
        const Json report = evaluate(run.state.params, full, run_cfg.eval);

        SweepRow row;
        row.axis = request.axis;
        row.value = value;
        row.objective = objective;
        row.seed = seed;
        row.train_samples = train_set.size();
        row.epochs = run_cfg.train.epochs;
        row.probe_subclass = report["linear_probe"]["subclass"]["accuracy"].get<double>();
        row.probe_superclass = report["linear_probe"]["superclass"]["accuracy"].get<double>();
        for (const auto& k : report["knn"])
          row.knn_subclass.emplace_back(k["k"].get<std::size_t>(), k["subclass_accuracy"].get<double>());
        row.final_loss = run.metrics.empty() ? 0.0 : run.metrics.back().mean_loss;
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows, const std::vector<std::size_t>& knn_k) {
  std::string out = "axis,value,objective,seed,train_samples,epochs,final_loss,probe_subclass,probe_superclass";
  for (std::size_t k : knn_k) out += ",knn" + std::to_string(k) + "_subclass";
  out += '\n';
  for (const auto& r : rows) {
    out += r.axis + "," + format_number(r.value) + "," + to_string(r.objective) + "," + std::to_string(r.seed) +
           "," + std::to_string(r.train_samples) + "," + std::to_string(r.epochs) + "," +
           format_number(r.final_loss) + "," + format_number(r.probe_subclass) + "," +
           format_number(r.probe_superclass);
    for (std::size_t k : knn_k) {
      out += ',';
      for (const auto& [kk, acc] : r.knn_subclass)
        if (kk == k) out += format_number(acc);
    }
    out += '\n';
  }
  return out;
}

Json run_analyze(const SimilarityGraph& graph, std::span<const std::size_t> labels,
                 const Matrix* learned_features, const AnalyzeRequest& request, std::uint64_t seed,
                 const std::filesystem::path& out) {
  const Histogram h = similarity_histogram(graph, request.bins);
  std::string hist = "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b)
    hist += format_number(h.edges[b]) + "," + format_number(h.edges[b + 1]) + "," + std::to_string(h.counts[b]) + "\n";
  write_text(out / "histogram.csv", hist);

  std::vector<double> offdiag = request.offdiag_grid;
  offdiag.push_back(h.mean);
  std::string mass = "tau_s,batch_size,offdiag,diagonal_mass\n";
  for (double t : request.tau_s_grid)
    for (std::size_t nb : request.batch_grid)
      for (double o : offdiag)
        mass += format_number(t) + "," + std::to_string(nb) + "," + format_number(o) + "," +
                format_number(diagonal_mass(t, nb, o)) + "\n";
  write_text(out / "diagonal_mass.csv", mass);

  Matrix pair;
  std::string pair_source;
  if (learned_features) {
    pair = class_pair_similarity(*learned_features, labels, 100, seed).values;
    pair_source = "learned";
  } else {
    // Class-mean of the graph over the Cartesian product of members.
    std::size_t classes = 0;
    for (std::size_t l : labels) classes = std::max(classes, l + 1);
    if (labels.size() != graph.size()) throw Error(Errc::SizeMismatch, "labels do not cover the graph");
    pair = Matrix(classes, classes);
    Matrix counts(classes, classes);
    for (std::size_t i = 0; i < graph.size(); ++i)
      for (std::size_t j = 0; j < graph.size(); ++j) {
        pair(labels[i], labels[j]) += graph.similarity(i, j);
        counts(labels[i], labels[j]) += 1.0;
      }
    for (std::size_t k = 0; k < pair.size(); ++k)
      if (counts.values()[k] > 0) pair.values()[k] /= counts.values()[k];
    for (std::size_t a = 0; a < classes; ++a)
      for (std::size_t b = 0; b < a; ++b) pair(a, b) = pair(b, a);
    pair_source = "graph";
  }
  write_text(out / "class_pair.csv", matrix_csv(pair));

  std::size_t total = 0;
  for (std::size_t c : h.counts) total += c;
  Json summary{{"histogram",
                {{"bins", request.bins}, {"pairs", total}, {"mean", h.mean}, {"counts", h.counts}}},
               {"class_pair_source", pair_source},
               {"files", {"histogram.csv", "diagonal_mass.csv", "class_pair.csv"}}};
  write_text(out / "histogram.json", summary.dump(2) + "\n");
  return summary;
}

}  // namespace xclr
