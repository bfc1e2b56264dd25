#include "xclr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace xclr {

namespace {

struct Normalized {
  Matrix unit;
  std::vector<double> norms;
};

Normalized normalize(const Matrix& z) {
  Normalized out{l2_normalize_rows(z), row_norms(z)};
  return out;
}

// Cosine logits over the batch: cos(z_i, z_j)/tau.
Matrix scaled_cosines(const Matrix& unit, double tau) {
  Matrix s = matmul_nt(unit, unit);
  for (double& v : s.values()) v = std::clamp(v, -1.0, 1.0) / tau;
  return s;
}

// Row-wise log-partition over k (skipping k == i when exclude_self).
std::vector<double> log_partition(const Matrix& logits, bool exclude_self) {
  std::vector<double> lse(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < logits.cols(); ++k)
      if (!(exclude_self && k == i)) mx = std::max(mx, logits(i, k));
    double acc = 0.0;
    for (std::size_t k = 0; k < logits.cols(); ++k)
      if (!(exclude_self && k == i)) acc += std::exp(logits(i, k) - mx);
    lse[i] = mx + std::log(acc);
  }
  return lse;
}

// Maps dL/dlogits (logits = cos/tau) back to the raw rows of z.
Matrix backprop_cosine_logits(const Matrix& grad_logits, const Normalized& zn, double tau) {
  const std::size_t m = grad_logits.rows();
  Matrix sym(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) sym(i, j) = (grad_logits(i, j) + grad_logits(j, i)) / tau;
  Matrix grad_unit = matmul(sym, zn.unit);
  Matrix grad_z(m, zn.unit.cols());
  for (std::size_t i = 0; i < m; ++i) {
    const auto u = zn.unit.row(i);
    const auto gu = grad_unit.row(i);
    const double radial = dot(gu, u);
    auto out = grad_z.row(i);
    for (std::size_t k = 0; k < u.size(); ++k) out[k] = (gu[k] - radial * u[k]) / zn.norms[i];
  }
  return grad_z;
}

void require_positive_tau(double tau) {
  if (!(tau > 0.0)) throw Error(Errc::NonPositiveTemperature, std::to_string(tau));
}

}  // namespace

std::vector<ProbRow> predicted_rows(const Matrix& z, double tau) {
  require_positive_tau(tau);
  if (z.rows() < 2) throw Error(Errc::TooFewSamples, "need at least two rows");
  const Matrix logits = scaled_cosines(l2_normalize_rows(z), tau);
  std::vector<ProbRow> rows;
  rows.reserve(z.rows());
  // Logits are already divided by tau.
  for (std::size_t i = 0; i < z.rows(); ++i) rows.push_back(row_softmax(logits.row(i), 1.0, i));
  return rows;
}

LossResult xclr_loss(const Matrix& z, const TargetBatch& targets, double tau) {
  require_positive_tau(tau);
  const std::size_t m = z.rows();
  if (targets.size() != m)
    throw Error(Errc::SizeMismatch, std::to_string(targets.size()) + " target rows for " +
                                        std::to_string(m) + " embeddings");
  if (m < 2) throw Error(Errc::TooFewSamples, "need at least two rows");
  for (std::size_t i = 0; i < m; ++i) {
    const ProbRow& s = targets.rows[i];
    if (s.size() != m) throw Error(Errc::SizeMismatch, "target row length", i);
    if (s.excluded_index != i || s.values[i] != 0.0)
      throw Error(Errc::SupportMismatch, "target row must exclude its own anchor", i);
  }

  const Normalized zn = normalize(z);
  const Matrix logits = scaled_cosines(zn.unit, tau);
  const auto lse = log_partition(logits, true);

  const double inv_m = 1.0 / static_cast<double>(m);
  double total = 0.0;
  Matrix grad_logits(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& s = targets.rows[i].values;
    double row_mass = 0.0;
    double h = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i || s[j] == 0.0) continue;
      h -= s[j] * (logits(i, j) - lse[i]);
      row_mass += s[j];
    }
    total += h;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      const double p = std::exp(logits(i, j) - lse[i]);
      grad_logits(i, j) = (row_mass * p - s[j]) * inv_m;
    }
  }
  return {total * inv_m, backprop_cosine_logits(grad_logits, zn, tau)};
}

LossResult simclr_loss(const Matrix& z, std::span<const std::size_t> pair_index, double tau) {
  const std::size_t m = pair_index.size();
  TargetBatch targets;
  targets.pair_index.assign(pair_index.begin(), pair_index.end());
  for (std::size_t i = 0; i < m; ++i) {
    if (pair_index[i] >= m || pair_index[i] == i || pair_index[pair_index[i]] != i)
      throw Error(Errc::BadPairing, "pair index is not a fixed-point-free involution", i);
    ProbRow row{std::vector<double>(m, 0.0), i};
    row.values[pair_index[i]] = 1.0;
    targets.rows.push_back(std::move(row));
  }
  return xclr_loss(z, targets, tau);
}

LossResult supcon_loss(const Matrix& z, std::span<const std::size_t> labels,
                       std::span<const std::size_t> pair_index, double tau) {
  const std::size_t m = pair_index.size();
  if (labels.size() != m) throw Error(Errc::SizeMismatch, "labels must cover the augmented batch");
  TargetBatch targets;
  targets.pair_index.assign(pair_index.begin(), pair_index.end());
  for (std::size_t i = 0; i < m; ++i) {
    if (pair_index[i] >= m || pair_index[i] == i || pair_index[pair_index[i]] != i)
      throw Error(Errc::BadPairing, "pair index is not a fixed-point-free involution", i);
    ProbRow row{std::vector<double>(m, 0.0), i};
    std::size_t positives = 0;
    for (std::size_t j = 0; j < m; ++j)
      if (j != i && (labels[j] == labels[i] || j == pair_index[i])) ++positives;
    for (std::size_t j = 0; j < m; ++j)
      if (j != i && (labels[j] == labels[i] || j == pair_index[i]))
        row.values[j] = 1.0 / static_cast<double>(positives);
    targets.rows.push_back(std::move(row));
  }
  return xclr_loss(z, targets, tau);
}

LossResult vic2_graph_loss(const Matrix& z, const SimilarityGraph& g) {
  if (z.rows() != g.size()) throw Error(Errc::SizeMismatch, "graph size differs from batch size");
  Matrix r = matmul_nt(z, z);
  const Matrix& gv = g.values();
  for (std::size_t i = 0; i < r.size(); ++i) r.values()[i] -= gv.values()[i];
  Matrix sym(r.rows(), r.cols());
  for (std::size_t i = 0; i < r.rows(); ++i)
    for (std::size_t j = 0; j < r.cols(); ++j) sym(i, j) = 2.0 * (r(i, j) + r(j, i));
  return {frobenius_sq(r), matmul(sym, z)};
}

LossResult simclr_graph_loss(const Matrix& z, const SimilarityGraph& g, double tau,
                             bool exclude_self) {
  require_positive_tau(tau);
  const std::size_t m = z.rows();
  if (m != g.size()) throw Error(Errc::SizeMismatch, "graph size differs from batch size");
  if (exclude_self && m < 2) throw Error(Errc::TooFewSamples, "need at least two rows");

  const Normalized zn = normalize(z);
  const Matrix logits = scaled_cosines(zn.unit, tau);
  const auto lse = log_partition(logits, exclude_self);

  double total = 0.0;
  Matrix grad_logits(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    double row_weight = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (exclude_self && j == i) continue;
      const double w = g.similarity(i, j);
      if (w != 0.0) total -= w * (logits(i, j) - lse[i]);
      row_weight += w;
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (exclude_self && j == i) continue;
      const double p = std::exp(logits(i, j) - lse[i]);
      grad_logits(i, j) = row_weight * p - g.similarity(i, j);
    }
  }
  return {total, backprop_cosine_logits(grad_logits, zn, tau)};
}

LossResult barlow_graph_loss(const Matrix& z, const SimilarityGraph& g) {
  const std::size_t n = z.rows();
  const std::size_t k = z.cols();
  if (n != g.size()) throw Error(Errc::SizeMismatch, "graph size differs from batch size");

  std::vector<double> col_norm(k, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) col_norm[c] += z(i, c) * z(i, c);
  for (std::size_t c = 0; c < k; ++c) {
    col_norm[c] = std::sqrt(col_norm[c]);
    if (!(col_norm[c] >= 1e-12)) throw Error(Errc::ZeroNormColumn, "column " + std::to_string(c), c);
  }
  Matrix zt(n, k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) zt(i, c) = z(i, c) / col_norm[c];

  const Matrix gz = matmul(g.values(), zt);      // G Z̃
  Matrix r = matmul_tn(zt, gz);                  // Z̃ᵀ G Z̃
  for (std::size_t c = 0; c < k; ++c) r(c, c) -= 1.0;
  const double value = frobenius_sq(r);

  // dL/dZ̃ = 2 (G Z̃ Rᵀ + Gᵀ Z̃ R)
  const Matrix gtz = matmul_tn(g.values(), zt);  // Gᵀ Z̃
  const Matrix a = matmul_nt(gz, r);
  const Matrix b = matmul(gtz, r);
  Matrix grad(n, k);
  for (std::size_t c = 0; c < k; ++c) {
    double radial = 0.0;
    for (std::size_t i = 0; i < n; ++i) radial += 2.0 * (a(i, c) + b(i, c)) * zt(i, c);
    for (std::size_t i = 0; i < n; ++i)
      grad(i, c) = (2.0 * (a(i, c) + b(i, c)) - radial * zt(i, c)) / col_norm[c];
  }
  return {value, std::move(grad)};
}

}  // namespace xclr
