#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "xclr/data.hpp"
#include "xclr/encoder.hpp"
#include "xclr/eval.hpp"
#include "xclr/graph.hpp"

namespace xclr {

using Json = nlohmann::ordered_json;

struct DataSpec {
  std::string dir;  // load from here when set, otherwise generate
  std::size_t n_super = 4;
  std::size_t n_sub_per_super = 3;
  std::size_t samples_per_sub = 200;
  std::size_t dim = 32;
  std::size_t caption_dim = 16;
  double caption_noise = 0.1;
  Separation separation;
  std::uint64_t seed = 1;
  std::size_t samples_per_class = 0;  // 0 keeps every sample for training
};

/// source: class | caption | hierarchy | random-class | random-sample | augmentation | table:<path>
struct GraphSpec {
  std::string source = "caption";
  std::string labels = "subclass";  // label level for class-based sources
  std::uint64_t seed = 7;
};

struct EvalSpec {
  std::vector<std::size_t> knn_k{1, 5, 10, 20};
  ProbeConfig probe;
  std::size_t pair_samples = 100;
  std::uint64_t split_seed = 12345;
};

struct ExperimentConfig {
  TrainConfig train;
  DataSpec data;
  GraphSpec graph;
  EvalSpec eval;
  std::string output_dir = "out";

  /// Rejects unknown keys and missing referenced paths (ConfigError).
  static ExperimentConfig from_json(const Json& j);
  Json to_json() const;
  void validate() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

SyntheticDataset materialize_dataset(const DataSpec& spec);
Json generator_json(const DataSpec& spec);

std::vector<std::size_t> graph_labels(const SyntheticDataset& ds, const std::string& level);
std::unique_ptr<GraphSource> make_graph_source(const GraphSpec& spec, const SyntheticDataset& ds);

/// Subclass -> superclass tree built from the dataset's label columns.
HierarchyTree dataset_hierarchy(const SyntheticDataset& ds);

struct TrainRun {
  TrainState state;
  std::vector<EpochMetrics> metrics;
};

/// Trains on `train_set` (already subsampled if requested), continuing from `resume` when given.
TrainRun run_training(const ExperimentConfig& cfg, const SyntheticDataset& train_set,
                      const TrainState* resume = nullptr);

/// Linear probes (subclass, superclass), KNN sweep, class-pair similarity against the
/// caption class table, and graph metrics, all on backbone features of `ds`.
Json evaluate(const EncoderParams& params, const SyntheticDataset& ds, const EvalSpec& spec);

/// CSV helpers: LF endings, shortest round-trip number formatting.
std::string format_number(double v);
std::string metrics_csv(const std::vector<EpochMetrics>& metrics);
std::string timing_csv(const std::vector<EpochMetrics>& metrics);
std::string matrix_csv(const Matrix& m);
void write_text(const std::filesystem::path& path, const std::string& text);

struct SweepRequest {
  std::string axis;  // tau-s | samples-per-class
  std::vector<double> values;
  std::vector<Objective> objectives;
  std::size_t seeds = 1;
  std::size_t step_budget = 0;  // >0: at least this many optimizer steps per run
};

struct SweepRow {
  std::string axis;
  double value = 0.0;
  Objective objective = Objective::Xclr;
  std::uint64_t seed = 0;
  std::size_t train_samples = 0;
  std::size_t epochs = 0;
  double probe_subclass = 0.0;
  double probe_superclass = 0.0;
  std::vector<std::pair<std::size_t, double>> knn_subclass;
  double final_loss = 0.0;
};

/// Seed for (value index v, replicate r) is base + v*seeds + r, shared by every objective.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const SweepRequest& request);
std::string sweep_csv(const std::vector<SweepRow>& rows, const std::vector<std::size_t>& knn_k);

struct AnalyzeRequest {
  std::size_t bins = 40;
  std::vector<double> tau_s_grid{0.03, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0};
  std::vector<std::size_t> batch_grid{2, 8, 32, 64, 128, 256, 512, 1024};
  std::vector<double> offdiag_grid{0.0};  // the graph's mean similarity is appended
};

/// Writes histogram.csv, histogram.json, diagonal_mass.csv and class_pair.csv into `out`.
Json run_analyze(const SimilarityGraph& graph, std::span<const std::size_t> labels,
                 const Matrix* learned_features, const AnalyzeRequest& request,
                 std::uint64_t seed, const std::filesystem::path& out);

}  // namespace xclr
