#include "xclr/encoder.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "xclr/data.hpp"
#include "xclr/losses.hpp"

namespace xclr {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

EncoderParams EncoderParams::init(std::span<const std::size_t> dims, std::size_t backbone_layers,
                                  std::uint64_t seed) {
  if (dims.size() < 2) throw Error(Errc::ShapeMismatch, "an encoder needs at least one layer");
  Rng rng(seed);
  EncoderParams p;
  p.backbone_layers = backbone_layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer layer{Matrix(dims[l], dims[l + 1]), std::vector<double>(dims[l + 1], 0.0)};
    const double scale = std::sqrt(2.0 / static_cast<double>(dims[l]));
    for (double& w : layer.weight.values()) w = scale * rng.normal();
    p.layers.push_back(std::move(layer));
  }
  p.validate();
  return p;
}

EncoderParams EncoderParams::zeros_like(const EncoderParams& other) {
  EncoderParams p;
  p.backbone_layers = other.backbone_layers;
  for (const auto& l : other.layers)
    p.layers.push_back({Matrix(l.in_dim(), l.out_dim()), std::vector<double>(l.out_dim(), 0.0)});
  return p;
}

std::size_t EncoderParams::backbone_dim() const {
  return backbone_layers == 0 ? input_dim() : layers[backbone_layers - 1].out_dim();
}

std::vector<std::size_t> EncoderParams::dims() const {
  std::vector<std::size_t> d{input_dim()};
  for (const auto& l : layers) d.push_back(l.out_dim());
  return d;
}

void EncoderParams::validate() const {
  if (layers.empty()) throw Error(Errc::ShapeMismatch, "encoder has no layers");
  if (backbone_layers >= layers.size())
    throw Error(Errc::ShapeMismatch, "the projector needs at least one layer");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].bias.size() != layers[l].out_dim())
      throw Error(Errc::ShapeMismatch, "bias width", l);
    if (l > 0 && layers[l].in_dim() != layers[l - 1].out_dim())
      throw Error(Errc::ShapeMismatch, "layer widths do not chain", l);
  }
}

std::vector<std::size_t> Architecture::dims(std::size_t input_dim) const {
  std::vector<std::size_t> d{input_dim};
  for (std::size_t i = 0; i < backbone_depth; ++i) d.push_back(hidden_width);
  d.push_back(projector_width);
  d.push_back(embedding_dim);
  return d;
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Lars ? "lars" : "sgd-momentum";
}

std::string to_string(Objective objective) {
  switch (objective) {
    case Objective::Xclr: return "xclr";
    case Objective::Simclr: return "simclr";
    case Objective::Supcon: return "supcon";
  }
  return "xclr";
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd-momentum" || name == "sgd") return OptimizerKind::SgdMomentum;
  if (name == "lars") return OptimizerKind::Lars;
  throw Error(Errc::ConfigError, "unknown optimizer '" + name + "'");
}

Objective parse_objective(const std::string& name) {
  if (name == "xclr") return Objective::Xclr;
  if (name == "simclr") return Objective::Simclr;
  if (name == "supcon") return Objective::Supcon;
  throw Error(Errc::ConfigError, "unknown objective '" + name + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::ConfigError, what); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) fail("learning_rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(tau > 0.0)) fail("tau must be > 0");
  if (!(tau_s > 0.0)) fail("tau_s must be > 0");
  if (!(aug_noise >= 0.0)) fail("aug_noise must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0,1)");
  if (arch.hidden_width < 1 || arch.projector_width < 1 || arch.embedding_dim < 1)
    fail("layer widths must be >= 1");
}

ForwardResult forward(const EncoderParams& params, const Matrix& x) {
  if (x.cols() != params.input_dim())
    throw Error(Errc::DimMismatch, "input has " + std::to_string(x.cols()) + " columns, encoder expects " +
                                       std::to_string(params.input_dim()));
  ForwardResult out;
  Matrix h = x;
  if (params.backbone_layers == 0) out.backbone = h;
  const std::size_t last = params.layers.size() - 1;
  for (std::size_t l = 0; l <= last; ++l) {
    const Layer& layer = params.layers[l];
    Matrix a = matmul(h, layer.weight);
    for (std::size_t i = 0; i < a.rows(); ++i) {
      auto r = a.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] += layer.bias[j];
    }
    out.cache.inputs.push_back(std::move(h));
    h = a;
    if (l != last)
      for (double& v : h.values()) v = v > 0.0 ? v : 0.0;
    out.cache.pre_activations.push_back(std::move(a));
    if (l + 1 == params.backbone_layers) out.backbone = h;
  }
  out.projected = std::move(h);
  return out;
}

Matrix encode(const EncoderParams& params, const Matrix& x) {
  if (x.cols() != params.input_dim()) throw Error(Errc::DimMismatch, "input width");
  Matrix h = x;
  for (std::size_t l = 0; l < params.backbone_layers; ++l) {
    const Layer& layer = params.layers[l];
    h = matmul(h, layer.weight);
    for (std::size_t i = 0; i < h.rows(); ++i) {
      auto r = h.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] = std::max(r[j] + layer.bias[j], 0.0);
    }
  }
  return h;
}

EncoderParams backward(const EncoderParams& params, const ForwardCache& cache,
                       const Matrix& grad_projected) {
  const std::size_t n_layers = params.layers.size();
  if (cache.inputs.size() != n_layers || cache.pre_activations.size() != n_layers)
    throw Error(Errc::ShapeMismatch, "cache does not match the encoder");
  const Matrix& out = cache.pre_activations.back();
  if (grad_projected.rows() != out.rows() || grad_projected.cols() != out.cols())
    throw Error(Errc::ShapeMismatch, "grad_projected shape differs from projected");

  EncoderParams grads = EncoderParams::zeros_like(params);
  Matrix g = grad_projected;
  for (std::size_t l = n_layers; l-- > 0;) {
    if (l != n_layers - 1) {
      const Matrix& a = cache.pre_activations[l];
      for (std::size_t k = 0; k < g.size(); ++k)
        if (!(a.values()[k] > 0.0)) g.values()[k] = 0.0;
    }
    grads.layers[l].weight = matmul_tn(cache.inputs[l], g);
    auto& db = grads.layers[l].bias;
    for (std::size_t i = 0; i < g.rows(); ++i) {
      auto r = g.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) db[j] += r[j];
    }
    if (l > 0) g = matmul_nt(g, params.layers[l].weight);
  }
  return grads;
}

OptimizerState OptimizerState::zeros_like(const EncoderParams& params) {
  OptimizerState s;
  for (const auto& l : params.layers) {
    s.velocity_w.emplace_back(l.in_dim(), l.out_dim());
    s.velocity_b.emplace_back(l.out_dim(), 0.0);
  }
  return s;
}

double lars_trust_ratio(double weight_norm, double grad_norm, double weight_decay) {
  if (weight_norm == 0.0 || grad_norm == 0.0) return 1.0;
  return weight_norm / (grad_norm + weight_decay * weight_norm + 1e-9);
}

void optimizer_step(EncoderParams& params, const EncoderParams& grads, OptimizerState& state,
                    const TrainConfig& config) {
  if (grads.layers.size() != params.layers.size() ||
      state.velocity_w.size() != params.layers.size())
    throw Error(Errc::ShapeMismatch, "gradient/state layer count differs from params");
  const double lr = config.learning_rate;
  const double m = config.momentum;
  const double wd = config.weight_decay;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto w = params.layers[l].weight.values();
    auto gw = grads.layers[l].weight.values();
    auto vw = state.velocity_w[l].values();
    if (gw.size() != w.size() || vw.size() != w.size())
      throw Error(Errc::ShapeMismatch, "weight shape", l);
    double trust = 1.0;
    if (config.optimizer == OptimizerKind::Lars) trust = lars_trust_ratio(l2_norm(w), l2_norm(gw), wd);
    for (std::size_t k = 0; k < w.size(); ++k) {
      vw[k] = m * vw[k] + trust * (gw[k] + wd * w[k]);
      w[k] -= lr * vw[k];
    }

    auto& b = params.layers[l].bias;
    const auto& gb = grads.layers[l].bias;
    auto& vb = state.velocity_b[l];
    if (gb.size() != b.size() || vb.size() != b.size())
      throw Error(Errc::ShapeMismatch, "bias shape", l);
    for (std::size_t k = 0; k < b.size(); ++k) {
      vb[k] = m * vb[k] + gb[k] + wd * b[k];
      b[k] -= lr * vb[k];
    }
  }
}

std::vector<double> augment(std::span<const double> x_row, const TrainConfig& config, Rng& rng) {
  std::vector<double> out(x_row.begin(), x_row.end());
  if (config.aug_noise > 0.0)
    for (double& v : out) v += config.aug_noise * rng.normal();
  if (config.dropout > 0.0)
    for (double& v : out)
      if (rng.uniform() < config.dropout) v = 0.0;
  return out;
}

StepResult loss_and_gradients(const EncoderParams& params, const Matrix& views,
                              std::span<const std::size_t> batch_indices,
                              std::span<const std::size_t> labels, const GraphSource* graph,
                              const TrainConfig& config) {
  ForwardResult fwd = forward(params, views);
  LossResult loss;
  switch (config.objective) {
    case Objective::Xclr: {
      if (!graph) throw Error(Errc::ConfigError, "the xclr objective needs a similarity graph");
      loss = xclr_loss(fwd.projected, batch_targets(*graph, batch_indices, config.tau_s), config.tau);
      break;
    }
    case Objective::Simclr:
      loss = simclr_loss(fwd.projected, pair_index_from_batch(batch_indices), config.tau);
      break;
    case Objective::Supcon: {
      std::vector<std::size_t> view_labels(batch_indices.size());
      for (std::size_t i = 0; i < batch_indices.size(); ++i) {
        if (batch_indices[i] >= labels.size()) throw Error(Errc::MissingLabels, "supcon needs labels");
        view_labels[i] = labels[batch_indices[i]];
      }
      loss = supcon_loss(fwd.projected, view_labels, pair_index_from_batch(batch_indices), config.tau);
      break;
    }
  }
  return {loss.value, backward(params, fwd.cache, loss.grad_z)};
}

TrainState initial_state(std::size_t input_dim, const TrainConfig& config) {
  const auto dims = config.arch.dims(input_dim);
  TrainState s;
  s.params = EncoderParams::init(dims, config.arch.backbone_depth, mix_seed(config.seed, 0));
  s.optimizer = OptimizerState::zeros_like(s.params);
  return s;
}

std::vector<EpochMetrics> train(const TrainData& data, const TrainConfig& config, TrainState& state,
                                const EpochCallback& on_epoch) {
  config.validate();
  const std::size_t n = data.features.rows();
  if (n == 0) throw Error(Errc::EmptySplit, "training set is empty");
  if (config.batch_size > n)
    throw Error(Errc::InvalidArgument, "batch size " + std::to_string(config.batch_size) +
                                           " exceeds dataset size " + std::to_string(n));
  if (config.objective == Objective::Xclr && (!data.graph || data.graph->size() != n))
    throw Error(Errc::SizeMismatch, "similarity graph must cover the training set");
  if (config.objective == Objective::Supcon && data.labels.size() != n)
    throw Error(Errc::MissingLabels, "supcon needs one label per sample");

  const std::size_t nb = config.batch_size;
  const std::size_t batches = n / nb;
  const std::size_t d = data.features.cols();
  const std::size_t first_epoch = state.epochs_completed + 1;
  const std::size_t last_epoch = state.epochs_completed + config.epochs;

  std::vector<EpochMetrics> log;
  std::vector<std::size_t> order(n);
  std::vector<std::size_t> batch_indices(2 * nb);
  Matrix views(2 * nb, d);
  TrainConfig step_config = config;

  for (std::size_t epoch = first_epoch; epoch <= last_epoch; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(mix_seed(config.seed, epoch));
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    if (config.cosine_schedule) {
      const double progress = static_cast<double>(epoch - 1) / static_cast<double>(last_epoch);
      step_config.learning_rate = 0.5 * config.learning_rate * (1.0 + std::cos(std::numbers::pi * progress));
    }

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      for (std::size_t k = 0; k < nb; ++k) {
        const std::size_t original = order[b * nb + k];
        for (std::size_t v = 0; v < 2; ++v) {
          const auto aug = augment(data.features.row(original), config, rng);
          std::copy(aug.begin(), aug.end(), views.row(2 * k + v).begin());
          batch_indices[2 * k + v] = original;
        }
      }
      StepResult step =
          loss_and_gradients(state.params, views, batch_indices, data.labels, data.graph, config);
      optimizer_step(state.params, step.grads, state.optimizer, step_config);
      loss_sum += step.loss;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.mean_loss = loss_sum / static_cast<double>(batches);
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    state.epochs_completed = epoch;
    log.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return log;
}

namespace {

Matrix as_row(const std::vector<double>& v) { return Matrix(1, v.size(), v); }

std::vector<double> from_row(const Matrix& m, std::size_t expected, const std::string& what) {
  if (m.rows() != 1 || m.cols() != expected) throw Error(Errc::ShapeMismatch, what + " has the wrong shape");
  return {m.values().begin(), m.values().end()};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state,
                     const std::string& config_json) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + dir.string() + ": " + ec.message());
  const auto& p = state.params;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string stem = "layer_" + std::to_string(l);
    write_xmat(dir / (stem + "_weight.xmat"), p.layers[l].weight);
    write_xmat(dir / (stem + "_bias.xmat"), as_row(p.layers[l].bias));
    write_xmat(dir / (stem + "_weight_velocity.xmat"), state.optimizer.velocity_w[l]);
    write_xmat(dir / (stem + "_bias_velocity.xmat"), as_row(state.optimizer.velocity_b[l]));
  }
  nlohmann::ordered_json manifest;
  manifest["format"] = "xclr-checkpoint";
  manifest["version"] = 1;
  manifest["dims"] = p.dims();
  manifest["backbone_layers"] = p.backbone_layers;
  manifest["epochs_completed"] = state.epochs_completed;
  manifest["config"] = nlohmann::ordered_json::parse(config_json);
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

TrainState load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw Error(Errc::IoError, "no checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, "checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "xclr-checkpoint")
    throw Error(Errc::ParseError, "not an xclr checkpoint manifest");
  const auto dims = manifest.at("dims").get<std::vector<std::size_t>>();
  TrainState s;
  s.params.backbone_layers = manifest.at("backbone_layers").get<std::size_t>();
  s.epochs_completed = manifest.at("epochs_completed").get<std::size_t>();
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::string stem = "layer_" + std::to_string(l);
    Layer layer{read_xmat(dir / (stem + "_weight.xmat")),
                from_row(read_xmat(dir / (stem + "_bias.xmat")), dims[l + 1], stem + " bias")};
    if (layer.in_dim() != dims[l] || layer.out_dim() != dims[l + 1])
      throw Error(Errc::ShapeMismatch, stem + " weight has the wrong shape", l);
    s.params.layers.push_back(std::move(layer));
    s.optimizer.velocity_w.push_back(read_xmat(dir / (stem + "_weight_velocity.xmat")));
    s.optimizer.velocity_b.push_back(
        from_row(read_xmat(dir / (stem + "_bias_velocity.xmat")), dims[l + 1], stem + " bias velocity"));
  }
  s.params.validate();
  return s;
}

}  // namespace xclr
