#include "xclr/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "xclr/experiment.hpp"

namespace xclr {

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

// Flags that override the experiment config; only flags given on the command line apply.
struct Overrides {
  std::optional<std::string> config;
  std::optional<std::string> data;
  std::optional<std::string> objective;
  std::optional<std::string> graph;
  std::optional<std::string> graph_labels;
  std::optional<std::uint64_t> graph_seed;
  std::optional<double> tau;
  std::optional<double> tau_s;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<double> momentum;
  std::optional<double> weight_decay;
  std::optional<std::string> optimizer;
  bool cosine = false;
  std::optional<std::uint64_t> seed;
  std::optional<double> aug_noise;
  std::optional<double> dropout;
  std::optional<std::size_t> samples_per_class;
  std::optional<std::size_t> hidden_width;
  std::optional<std::size_t> embedding_dim;
  std::optional<double> caption_noise;
  std::optional<std::size_t> threads;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "Experiment config JSON")->check(CLI::ExistingFile);
    cmd->add_option("--data", data, "Dataset directory written by gen-data");
    cmd->add_option("--objective", objective, "xclr | simclr | supcon")
        ->check(CLI::IsMember({"xclr", "simclr", "supcon"}));
    cmd->add_option("--graph", graph,
                    "class | caption | hierarchy | random-class | random-sample | augmentation | table:<path>");
    cmd->add_option("--graph-labels", graph_labels, "subclass | superclass")
        ->check(CLI::IsMember({"subclass", "superclass"}));
    cmd->add_option("--graph-seed", graph_seed, "Seed for random graphs");
    cmd->add_option("--tau", tau, "Temperature of the learned similarities");
    cmd->add_option("--tau-s", tau_s, "Temperature of the target similarities");
    cmd->add_option("--epochs", epochs);
    cmd->add_option("--batch-size", batch_size, "Originals per batch (N_b)");
    cmd->add_option("--lr", lr);
    cmd->add_option("--momentum", momentum);
    cmd->add_option("--weight-decay", weight_decay);
    cmd->add_option("--optimizer", optimizer, "sgd-momentum | lars")
        ->check(CLI::IsMember({"sgd-momentum", "sgd", "lars"}));
    cmd->add_flag("--cosine", cosine, "Cosine learning-rate decay");
    cmd->add_option("--seed", seed);
    cmd->add_option("--aug-noise", aug_noise);
    cmd->add_option("--dropout", dropout);
    cmd->add_option("--samples-per-class", samples_per_class, "Subsample training data per subclass");
    cmd->add_option("--hidden-width", hidden_width);
    cmd->add_option("--embedding-dim", embedding_dim);
    cmd->add_option("--caption-noise", caption_noise, "Caption noise when generating data");
    cmd->add_option("--threads", threads, "Worker thread cap (default XCLR_THREADS or 1)");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c = config ? load_config(*config) : ExperimentConfig{};
    if (data) c.data.dir = *data;
    if (objective) c.train.objective = parse_objective(*objective);
    if (graph) c.graph.source = *graph;
    if (graph_labels) c.graph.labels = *graph_labels;
    if (graph_seed) c.graph.seed = *graph_seed;
    if (tau) c.train.tau = *tau;
    if (tau_s) c.train.tau_s = *tau_s;
    if (epochs) c.train.epochs = *epochs;
    if (batch_size) c.train.batch_size = *batch_size;
    if (lr) c.train.learning_rate = *lr;
    if (momentum) c.train.momentum = *momentum;
    if (weight_decay) c.train.weight_decay = *weight_decay;
    if (optimizer) c.train.optimizer = parse_optimizer(*optimizer);
    if (cosine) c.train.cosine_schedule = true;
    if (seed) c.train.seed = *seed;
    if (aug_noise) c.train.aug_noise = *aug_noise;
    if (dropout) c.train.dropout = *dropout;
    if (samples_per_class) c.data.samples_per_class = *samples_per_class;
    if (hidden_width) c.train.arch.hidden_width = *hidden_width;
    if (embedding_dim) c.train.arch.embedding_dim = *embedding_dim;
    if (caption_noise) c.data.caption_noise = *caption_noise;
    if (threads) set_num_threads(*threads);
    c.validate();
    return c;
  }
};

SyntheticDataset training_subset(const ExperimentConfig& cfg, const SyntheticDataset& full) {
  if (cfg.data.samples_per_class == 0) return full;
  return subsample_per_class(full, cfg.data.samples_per_class, mix_seed(cfg.train.seed, 2));
}

int cmd_gen_data(const DataSpec& spec, const std::string& out) {
  SyntheticDataset ds = materialize_dataset(spec);
  save_dataset(out, ds, generator_json(spec).dump());
  std::cout << "wrote " << ds.size() << " samples to " << out << "\n";
  return kOk;
}

int cmd_train(const Overrides& flags, const std::optional<std::string>& out,
              const std::optional<std::string>& resume) {
  ExperimentConfig cfg = flags.resolve();
  if (out) cfg.output_dir = *out;
  std::optional<TrainState> start;
  if (resume) {
    if (!std::filesystem::exists(std::filesystem::path(*resume) / "manifest.json"))
      throw Error(Errc::ConfigError, "no checkpoint at " + *resume);
    start = load_checkpoint(*resume);
  }
  const SyntheticDataset full = materialize_dataset(cfg.data);
  const SyntheticDataset train_set = training_subset(cfg, full);
  TrainRun run = run_training(cfg, train_set, start ? &*start : nullptr);

  const std::filesystem::path dir = cfg.output_dir;
  const Json resolved = cfg.to_json();
  save_checkpoint(dir / "checkpoint", run.state, resolved.dump());
  write_text(dir / "metrics.csv", metrics_csv(run.metrics));
  write_text(dir / "timing.csv", timing_csv(run.metrics));
  write_text(dir / "config.json", resolved.dump(2) + "\n");
  if (!run.metrics.empty())
    std::cout << "epoch " << run.metrics.back().epoch << " mean loss " << run.metrics.back().mean_loss << "\n";
  std::cout << "checkpoint: " << (dir / "checkpoint").string() << "\n";
  return kOk;
}

// Eval reuses the config stored with the checkpoint unless one is given explicitly.
ExperimentConfig checkpoint_config(const std::filesystem::path& ckpt, const Overrides& flags) {
  if (flags.config) return flags.resolve();
  std::ifstream in(ckpt / "manifest.json", std::ios::binary);
  Json manifest = Json::parse(in);
  ExperimentConfig c = manifest.contains("config") && manifest["config"].is_object()
                           ? ExperimentConfig::from_json(manifest["config"])
                           : ExperimentConfig{};
  if (flags.data) c.data.dir = *flags.data;
  if (flags.threads) set_num_threads(*flags.threads);
  c.validate();
  return c;
}

int cmd_eval(const Overrides& flags, const std::string& checkpoint, const std::optional<std::string>& out,
             const std::optional<std::vector<std::size_t>>& knn_k) {
  if (!std::filesystem::exists(std::filesystem::path(checkpoint) / "manifest.json"))
    throw Error(Errc::ConfigError, "no checkpoint at " + checkpoint);
  ExperimentConfig cfg = checkpoint_config(checkpoint, flags);
  if (knn_k) cfg.eval.knn_k = *knn_k;
  const TrainState state = load_checkpoint(checkpoint);
  const SyntheticDataset ds = materialize_dataset(cfg.data);

  Json report;
  report["checkpoint"] = checkpoint;
  report["epochs_completed"] = state.epochs_completed;
  report["config"] = cfg.to_json();
  const Json sections = evaluate(state.params, ds, cfg.eval);
  for (const auto& [key, value] : sections.items()) report[key] = value;

  const std::filesystem::path dir = out ? *out : cfg.output_dir;
  write_text(dir / "report.json", report.dump(2) + "\n");
  std::cout << "superclass probe " << report["linear_probe"]["superclass"]["accuracy"].get<double>()
            << ", subclass probe " << report["linear_probe"]["subclass"]["accuracy"].get<double>() << "\n";
  std::cout << "report: " << (dir / "report.json").string() << "\n";
  return kOk;
}

int cmd_sweep(const Overrides& flags, const SweepRequest& request, const std::optional<std::string>& out) {
  ExperimentConfig cfg = flags.resolve();
  if (out) cfg.output_dir = *out;
  const auto rows = run_sweep(cfg, request);
  const std::filesystem::path dir = cfg.output_dir;
  write_text(dir / "sweep.csv", sweep_csv(rows, cfg.eval.knn_k));
  Json meta{{"axis", request.axis},
            {"values", request.values},
            {"seeds", request.seeds},
            {"step_budget", request.step_budget},
            {"config", cfg.to_json()}};
  for (Objective o : request.objectives) meta["objectives"].push_back(to_string(o));
  write_text(dir / "sweep.json", meta.dump(2) + "\n");
  std::cout << rows.size() << " rows: " << (dir / "sweep.csv").string() << "\n";
  return kOk;
}

int cmd_analyze(const Overrides& flags, const std::optional<std::string>& graph_file,
                const std::optional<std::string>& checkpoint, const AnalyzeRequest& request,
                const std::optional<std::string>& out) {
  ExperimentConfig cfg = flags.resolve();
  if (out) cfg.output_dir = *out;
  const SyntheticDataset ds = materialize_dataset(cfg.data);
  const auto labels = graph_labels(ds, cfg.graph.labels);

  SimilarityGraph graph;
  if (graph_file) {
    Matrix g = read_xmat(*graph_file);
    if (g.rows() != g.cols()) throw Error(Errc::ShapeMismatch, "graph file is not square");
    for (std::size_t i = 0; i < g.rows(); ++i) {
      g(i, i) = 1.0;
      for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i) = 0.5 * (g(i, j) + g(j, i));
    }
    graph = SimilarityGraph(std::move(g));
  } else if (cfg.graph.source == "caption") {
    graph = build_caption_graph(ds.captions);
  } else {
    const auto source = make_graph_source(cfg.graph, ds);
    Matrix g(ds.size(), ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
      for (std::size_t j = 0; j < ds.size(); ++j) g(i, j) = source->similarity(i, j);
    graph = SimilarityGraph(std::move(g));
  }

  std::optional<Matrix> learned;
  if (checkpoint) {
    if (!std::filesystem::exists(std::filesystem::path(*checkpoint) / "manifest.json"))
      throw Error(Errc::ConfigError, "no checkpoint at " + *checkpoint);
    learned = encode(load_checkpoint(*checkpoint).params, ds.features);
  }
  const Json summary = run_analyze(graph, labels, learned ? &*learned : nullptr, request,
                                   cfg.eval.split_seed, cfg.output_dir);
  std::cout << "mean off-diagonal similarity " << summary["histogram"]["mean"].get<double>() << "\n";
  std::cout << "wrote analysis to " << cfg.output_dir << "\n";
  return kOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"X-sample contrastive learning on synthetic hierarchical data"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset with caption embeddings");
  DataSpec gen_spec;
  std::string gen_out;
  gen->add_option("--super", gen_spec.n_super, "Superclasses")->check(CLI::PositiveNumber);
  gen->add_option("--sub", gen_spec.n_sub_per_super, "Subclasses per superclass")->check(CLI::PositiveNumber);
  gen->add_option("--per-sub", gen_spec.samples_per_sub, "Samples per subclass")->check(CLI::PositiveNumber);
  gen->add_option("--dim", gen_spec.dim, "Feature dimension")->check(CLI::Range(std::size_t{2}, std::size_t{1} << 20));
  gen->add_option("--caption-dim", gen_spec.caption_dim)->check(CLI::Range(std::size_t{2}, std::size_t{1} << 20));
  gen->add_option("--caption-noise", gen_spec.caption_noise)->check(CLI::NonNegativeNumber);
  gen->add_option("--within", gen_spec.separation.within)->check(CLI::NonNegativeNumber);
  gen->add_option("--sub-spread", gen_spec.separation.sub_spread)->check(CLI::NonNegativeNumber);
  gen->add_option("--super-spread", gen_spec.separation.super_spread)->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", gen_spec.seed);
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train an encoder");
  Overrides train_flags;
  train_flags.attach(train_cmd);
  std::optional<std::string> train_out, resume;
  train_cmd->add_option("--out", train_out, "Output directory");
  train_cmd->add_option("--resume", resume, "Checkpoint directory to continue from");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Probe a trained encoder");
  Overrides eval_flags;
  std::string eval_ckpt;
  std::optional<std::string> eval_out;
  std::optional<std::vector<std::size_t>> knn_k;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint directory")->required();
  eval_cmd->add_option("--config", eval_flags.config, "Experiment config JSON")->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval_flags.data, "Dataset directory");
  eval_cmd->add_option("--knn-k", knn_k, "KNN k values")->delimiter(',');
  eval_cmd->add_option("--threads", eval_flags.threads);
  eval_cmd->add_option("--out", eval_out, "Output directory for report.json");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Train and evaluate across one axis");
  Overrides sweep_flags;
  sweep_flags.attach(sweep_cmd);
  SweepRequest sweep_req;
  std::vector<std::string> sweep_objectives;
  std::optional<std::string> sweep_out;
  sweep_cmd->add_option("--axis", sweep_req.axis, "tau-s | samples-per-class")
      ->required()
      ->check(CLI::IsMember({"tau-s", "samples-per-class"}));
  sweep_cmd->add_option("--values", sweep_req.values, "Axis values")->required()->delimiter(',');
  sweep_cmd->add_option("--objectives", sweep_objectives, "Objectives to compare")
      ->delimiter(',')
      ->check(CLI::IsMember({"xclr", "simclr", "supcon"}));
  sweep_cmd->add_option("--seeds", sweep_req.seeds, "Replicates per value")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--step-budget", sweep_req.step_budget, "Minimum optimizer steps per run");
  sweep_cmd->add_option("--out", sweep_out, "Output directory");

  // analyze
  auto* analyze_cmd = app.add_subcommand("analyze", "Similarity histograms, diagonal mass and class-pair tables");
  Overrides analyze_flags;
  analyze_flags.attach(analyze_cmd);
  AnalyzeRequest analyze_req;
  std::optional<std::string> graph_file, analyze_ckpt, analyze_out;
  analyze_cmd->add_option("--graph-file", graph_file, "Dense n×n graph in XMAT format")->check(CLI::ExistingFile);
  analyze_cmd->add_option("--checkpoint", analyze_ckpt, "Checkpoint for learned class-pair similarities");
  analyze_cmd->add_option("--bins", analyze_req.bins)->check(CLI::PositiveNumber);
  analyze_cmd->add_option("--tau-s-grid", analyze_req.tau_s_grid)->delimiter(',')->check(CLI::PositiveNumber);
  analyze_cmd->add_option("--batch-grid", analyze_req.batch_grid)->delimiter(',')->check(CLI::PositiveNumber);
  analyze_cmd->add_option("--offdiag-grid", analyze_req.offdiag_grid)->delimiter(',')->check(CLI::Range(-1.0, 1.0));
  analyze_cmd->add_option("--out", analyze_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (*gen) return cmd_gen_data(gen_spec, gen_out);
    if (*train_cmd) return cmd_train(train_flags, train_out, resume);
    if (*eval_cmd) return cmd_eval(eval_flags, eval_ckpt, eval_out, knn_k);
    if (*sweep_cmd) {
      for (const auto& o : sweep_objectives) sweep_req.objectives.push_back(parse_objective(o));
      if (sweep_req.objectives.empty()) sweep_req.objectives.push_back(sweep_flags.resolve().train.objective);
      return cmd_sweep(sweep_flags, sweep_req, sweep_out);
    }
    if (*analyze_cmd) return cmd_analyze(analyze_flags, graph_file, analyze_ckpt, analyze_req, analyze_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == Errc::ConfigError ? kUsageError : kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"xclr"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace xclr
