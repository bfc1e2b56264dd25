#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xclr/graph.hpp"
#include "xclr/numerics.hpp"
#include "xclr/rng.hpp"

namespace xclr {

/// y = x·weight + bias, weight stored in×out.
struct Layer {
  Matrix weight;
  std::vector<double> bias;

  std::size_t in_dim() const noexcept { return weight.rows(); }
  std::size_t out_dim() const noexcept { return weight.cols(); }
  bool operator==(const Layer&) const = default;
};

/// MLP with ReLU after every layer except the last. The first `backbone_layers`
/// layers form the backbone; the rest is the projector.
struct EncoderParams {
  std::vector<Layer> layers;
  std::size_t backbone_layers = 0;

  /// He-normal weights, zero biases. `dims` = {input, h1, ..., output}.
  static EncoderParams init(std::span<const std::size_t> dims, std::size_t backbone_layers,
                            std::uint64_t seed);
  static EncoderParams zeros_like(const EncoderParams& other);

  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.back().out_dim(); }
  std::size_t backbone_dim() const;
  std::vector<std::size_t> dims() const;

  /// Throws ShapeMismatch when layer widths do not chain or the split is out of range.
  void validate() const;
  bool operator==(const EncoderParams&) const = default;
};

struct Architecture {
  std::size_t hidden_width = 256;
  std::size_t backbone_depth = 2;
  std::size_t projector_width = 256;
  std::size_t embedding_dim = 128;

  std::vector<std::size_t> dims(std::size_t input_dim) const;
};

enum class OptimizerKind { SgdMomentum, Lars };
enum class Objective { Xclr, Simclr, Supcon };

std::string to_string(OptimizerKind kind);
std::string to_string(Objective objective);
OptimizerKind parse_optimizer(const std::string& name);
Objective parse_objective(const std::string& name);

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-6;
  OptimizerKind optimizer = OptimizerKind::SgdMomentum;
  bool cosine_schedule = false;
  double tau = 0.1;
  double tau_s = 0.1;
  std::uint64_t seed = 1;
  double aug_noise = 0.5;
  double dropout = 0.1;
  Objective objective = Objective::Xclr;
  Architecture arch;

  /// Throws ConfigError on non-positive sizes/temperatures or dropout outside [0,1).
  void validate() const;
};

struct ForwardCache {
  std::vector<Matrix> inputs;          // input to each layer
  std::vector<Matrix> pre_activations; // x·W + b of each layer
};

struct ForwardResult {
  Matrix backbone;   // representation used for evaluation
  Matrix projected;  // z fed to the loss
  ForwardCache cache;
};

ForwardResult forward(const EncoderParams& params, const Matrix& x);

/// Backbone features only; skips the projector.
Matrix encode(const EncoderParams& params, const Matrix& x);

/// Reverse pass; returns gradients shaped like `params`.
EncoderParams backward(const EncoderParams& params, const ForwardCache& cache,
                       const Matrix& grad_projected);

struct OptimizerState {
  std::vector<Matrix> velocity_w;
  std::vector<std::vector<double>> velocity_b;

  static OptimizerState zeros_like(const EncoderParams& params);
};

/// LARS trust ratio ||w|| / (||g|| + wd·||w|| + 1e-9); 1 when either norm is zero.
double lars_trust_ratio(double weight_norm, double grad_norm, double weight_decay);

/// sgd-momentum: v <- m·v + g + wd·w ; w <- w - lr·v.
/// lars: weights use the per-layer trust ratio on (g + wd·w); biases take the plain update.
void optimizer_step(EncoderParams& params, const EncoderParams& grads, OptimizerState& state,
                    const TrainConfig& config);

/// Gaussian noise of scale aug_noise, then each coordinate is zeroed with probability dropout.
std::vector<double> augment(std::span<const double> x_row, const TrainConfig& config, Rng& rng);

/// Loss and encoder gradients for one augmented batch. `batch_indices[i]` names the
/// original behind row i of `views`; `labels` are indexed by original.
struct StepResult {
  double loss = 0.0;
  EncoderParams grads;
};
StepResult loss_and_gradients(const EncoderParams& params, const Matrix& views,
                              std::span<const std::size_t> batch_indices,
                              std::span<const std::size_t> labels, const GraphSource* graph,
                              const TrainConfig& config);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based, continues across resumes
  double mean_loss = 0.0;
  double wall_seconds = 0.0;
};

struct TrainState {
  EncoderParams params;
  OptimizerState optimizer;
  std::size_t epochs_completed = 0;
};

struct TrainData {
  const Matrix& features;
  std::span<const std::size_t> labels;  // needed for the supcon objective
  const GraphSource* graph = nullptr;   // needed for the xclr objective
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Fresh state: initialized weights and zero momentum.
TrainState initial_state(std::size_t input_dim, const TrainConfig& config);

/// Runs config.epochs further epochs on top of `state`. Deterministic given the
/// seed: epoch e draws its shuffle and augmentations from a stream keyed by (seed, e).
std::vector<EpochMetrics> train(const TrainData& data, const TrainConfig& config, TrainState& state,
                                const EpochCallback& on_epoch = {});

/// Checkpoint directory: layer_<i>_weight.xmat, layer_<i>_bias.xmat, momentum files
/// and manifest.json (layer dims, split point, epochs, config echo).
void save_checkpoint(const std::filesystem::path& dir, const TrainState& state,
                     const std::string& config_json);
TrainState load_checkpoint(const std::filesystem::path& dir);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace xclr
