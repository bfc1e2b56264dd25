#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "xclr/graph.hpp"
#include "xclr/numerics.hpp"

namespace xclr {

struct LossResult {
  double value = 0.0;  // nats for the cross-entropy family
  Matrix grad_z;       // d value / d z, same shape as z
};

/// p_i: softmax over cos(z_i, z_j)/tau for j != i.
std::vector<ProbRow> predicted_rows(const Matrix& z, double tau);

/// Mean over anchors of H(s_i, p_i). The gradient is taken w.r.t. the raw
/// (un-normalized) rows of z and chains through the row normalization.
LossResult xclr_loss(const Matrix& z, const TargetBatch& targets, double tau);

/// One-hot targets on the paired view; delegates to xclr_loss.
LossResult simclr_loss(const Matrix& z, std::span<const std::size_t> pair_index, double tau);

/// Uniform targets over P(i): same-label slots and the pair, self excluded.
LossResult supcon_loss(const Matrix& z, std::span<const std::size_t> labels,
                       std::span<const std::size_t> pair_index, double tau);

/// ||Z Zᵀ - G||_F².
LossResult vic2_graph_loss(const Matrix& z, const SimilarityGraph& g);

/// -Σ_ij G_ij log softmax_j(<z̃_i, z̃_j>/tau). With exclude_self the softmax runs
/// over k != i and the diagonal G_ii terms are dropped.
LossResult simclr_graph_loss(const Matrix& z, const SimilarityGraph& g, double tau,
                             bool exclude_self = true);

/// ||Z̃ᵀ G Z̃ - I||_F² with Z̃ the column-normalized Z.
LossResult barlow_graph_loss(const Matrix& z, const SimilarityGraph& g);

}  // namespace xclr
