#include "xclr/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>

#include "xclr/rng.hpp"

namespace xclr {

namespace {

void require_square_symmetric_unit_diag(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) throw Error(Errc::ShapeMismatch, std::string(what) + " must be square");
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (m(i, i) != 1.0)
      throw Error(Errc::ShapeMismatch, std::string(what) + " diagonal entry is not 1", i);
    for (std::size_t j = i + 1; j < m.cols(); ++j) {
      if (!(std::abs(m(i, j) - m(j, i)) <= 1e-9))
        throw Error(Errc::ShapeMismatch, std::string(what) + " is not symmetric", i);
    }
  }
}

}  // namespace

SimilarityGraph::SimilarityGraph(Matrix values) : values_(std::move(values)) {
  require_square_symmetric_unit_diag(values_, "similarity graph");
}

ClassSimilarityTable::ClassSimilarityTable(Matrix values) : values_(std::move(values)) {
  require_square_symmetric_unit_diag(values_, "class table");
}

TableGraphSource::TableGraphSource(ClassSimilarityTable table, std::vector<std::size_t> labels)
    : table_(std::move(table)), labels_(std::move(labels)) {
  for (std::size_t i = 0; i < labels_.size(); ++i)
    if (labels_[i] >= table_.classes())
      throw Error(Errc::LabelOutOfRange, "label " + std::to_string(labels_[i]), i);
}

double TableGraphSource::similarity(std::size_t i, std::size_t j) const {
  return i == j ? 1.0 : table_(labels_[i], labels_[j]);
}

EmbeddingGraphSource::EmbeddingGraphSource(const Matrix& embeddings)
    : unit_(l2_normalize_rows(embeddings)) {}

double EmbeddingGraphSource::similarity(std::size_t i, std::size_t j) const {
  if (i == j) return 1.0;
  return std::clamp(dot(unit_.row(i), unit_.row(j)), -1.0, 1.0);
}

HierarchyTree HierarchyTree::two_level(std::size_t n_super, std::size_t n_sub_per_super) {
  HierarchyTree t;
  t.parent.push_back(kNoParent);
  for (std::size_t s = 0; s < n_super; ++s) t.parent.push_back(0);
  for (std::size_t s = 0; s < n_super; ++s) {
    for (std::size_t k = 0; k < n_sub_per_super; ++k) {
      t.class_leaf.push_back(t.parent.size());
      t.parent.push_back(1 + s);
    }
  }
  return t;
}

void HierarchyTree::validate() const {
  const std::size_t n = parent.size();
  std::size_t roots = 0;
  std::vector<bool> has_child(n, false);
  for (std::size_t v = 0; v < n; ++v) {
    if (parent[v] == kNoParent) {
      ++roots;
    } else {
      if (parent[v] >= n) throw Error(Errc::DegenerateTree, "parent out of range", v);
      has_child[parent[v]] = true;
    }
  }
  if (roots != 1) throw Error(Errc::DegenerateTree, std::to_string(roots) + " roots");
  for (std::size_t v = 0; v < n; ++v) {
    std::size_t cur = v;
    for (std::size_t steps = 0; parent[cur] != kNoParent; ++steps) {
      if (steps > n) throw Error(Errc::DegenerateTree, "cycle through node", v);
      cur = parent[cur];
    }
  }
  for (std::size_t c = 0; c < class_leaf.size(); ++c) {
    if (class_leaf[c] >= n || has_child[class_leaf[c]])
      throw Error(Errc::DegenerateTree, "class is not mapped to a leaf", c);
  }
}

SimilarityGraph build_augmentation_graph(std::size_t n_originals, std::size_t views) {
  const std::size_t n = n_originals * views;
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g(i, j) = (i / views == j / views) ? 1.0 : 0.0;
  return SimilarityGraph(std::move(g));
}

SimilarityGraph build_class_graph(std::span<const std::size_t> labels) {
  const std::size_t n = labels.size();
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g(i, j) = labels[i] == labels[j] ? 1.0 : 0.0;
  return SimilarityGraph(std::move(g));
}

SimilarityGraph build_caption_graph(const Matrix& caption_embeddings) {
  Matrix g = cosine_similarity_matrix(caption_embeddings, caption_embeddings);
  for (std::size_t i = 0; i < g.rows(); ++i) {
    g(i, i) = 1.0;
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  }
  return SimilarityGraph(std::move(g));
}

SimilarityGraph build_hierarchy_graph(const HierarchyTree& tree, std::span<const std::size_t> labels) {
  tree.validate();
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= tree.class_leaf.size())
      throw Error(Errc::UnknownClass, "class " + std::to_string(labels[i]), i);

  const std::size_t nodes = tree.parent.size();
  std::vector<std::vector<std::size_t>> adj(nodes);
  for (std::size_t v = 0; v < nodes; ++v) {
    if (tree.parent[v] == HierarchyTree::kNoParent) continue;
    adj[v].push_back(tree.parent[v]);
    adj[tree.parent[v]].push_back(v);
  }

  // Unweighted path lengths between every pair of class leaves.
  const std::size_t c = tree.class_leaf.size();
  Matrix dist(c, c);
  for (std::size_t a = 0; a < c; ++a) {
    std::vector<std::size_t> d(nodes, static_cast<std::size_t>(-1));
    std::deque<std::size_t> queue{tree.class_leaf[a]};
    d[tree.class_leaf[a]] = 0;
    while (!queue.empty()) {
      const std::size_t v = queue.front();
      queue.pop_front();
      for (std::size_t w : adj[v]) {
        if (d[w] == static_cast<std::size_t>(-1)) {
          d[w] = d[v] + 1;
          queue.push_back(w);
        }
      }
    }
    for (std::size_t b = 0; b < c; ++b) dist(a, b) = static_cast<double>(d[tree.class_leaf[b]]);
  }
  double d_max = 0.0;
  for (double v : dist.values()) d_max = std::max(d_max, v);

  const std::size_t n = labels.size();
  Matrix g(n, n, 1.0);
  if (d_max > 0.0) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) g(i, j) = 1.0 - dist(labels[i], labels[j]) / d_max;
  }
  return SimilarityGraph(std::move(g));
}

ClassSimilarityTable random_class_table(std::size_t classes, std::uint64_t seed) {
  Rng rng(seed);
  Matrix t = Matrix::identity(classes);
  for (std::size_t a = 0; a < classes; ++a)
    for (std::size_t b = a + 1; b < classes; ++b) t(a, b) = t(b, a) = rng.uniform();
  return ClassSimilarityTable(std::move(t));
}

SimilarityGraph build_random_graph(RandomGraphMode mode, std::size_t n,
                                   std::optional<std::span<const std::size_t>> labels,
                                   std::uint64_t seed) {
  if (mode == RandomGraphMode::PerClassPair) {
    if (!labels) throw Error(Errc::MissingLabels, "per-class-pair mode needs labels");
    std::size_t classes = 0;
    for (std::size_t l : *labels) classes = std::max(classes, l + 1);
    return table_lookup_graph(random_class_table(classes, seed), *labels);
  }
  Rng rng(seed);
  Matrix g = Matrix::identity(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) g(i, j) = g(j, i) = rng.uniform();
  return SimilarityGraph(std::move(g));
}

SimilarityGraph table_lookup_graph(const ClassSimilarityTable& table,
                                   std::span<const std::size_t> labels) {
  const std::size_t n = labels.size();
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] >= table.classes())
      throw Error(Errc::LabelOutOfRange, "label " + std::to_string(labels[i]), i);
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g(i, j) = i == j ? 1.0 : table(labels[i], labels[j]);
  return SimilarityGraph(std::move(g));
}

std::vector<std::size_t> pair_index_from_batch(std::span<const std::size_t> batch_indices) {
  const std::size_t m = batch_indices.size();
  constexpr std::size_t kUnset = static_cast<std::size_t>(-1);
  std::vector<std::size_t> pair(m, kUnset);
  for (std::size_t i = 0; i < m; ++i) {
    if (pair[i] != kUnset) continue;
    for (std::size_t j = i + 1; j < m; ++j) {
      if (batch_indices[j] != batch_indices[i]) continue;
      if (pair[i] != kUnset)
        throw Error(Errc::BadPairing, "original " + std::to_string(batch_indices[i]) +
                                          " has more than two views", i);
      pair[i] = j;
      pair[j] = i;
    }
    if (pair[i] == kUnset)
      throw Error(Errc::BadPairing, "original " + std::to_string(batch_indices[i]) +
                                        " has a single view", i);
  }
  return pair;
}

TargetBatch batch_targets(const GraphSource& graph, std::span<const std::size_t> batch_indices,
                          double tau_s) {
  if (!(tau_s > 0.0)) throw Error(Errc::NonPositiveTemperature, std::to_string(tau_s));
  TargetBatch out;
  out.pair_index = pair_index_from_batch(batch_indices);
  const std::size_t m = batch_indices.size();
  out.rows.reserve(m);
  std::vector<double> logits(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) logits[j] = 0.0;
      else if (j == out.pair_index[i]) logits[j] = 1.0;
      else logits[j] = graph.similarity(batch_indices[i], batch_indices[j]);
    }
    out.rows.push_back(row_softmax(logits, tau_s, i));
  }
  return out;
}

double diagonal_mass(double tau_s, std::size_t batch_size_nb, double offdiag_similarity) {
  if (!(tau_s > 0.0)) throw Error(Errc::NonPositiveTemperature, std::to_string(tau_s));
  if (batch_size_nb < 1) throw Error(Errc::InvalidArgument, "batch size must be >= 1");
  // e^{1/τ} / (e^{1/τ} + k e^{o/τ}) with the positive's logit subtracted out.
  const double competitors = 2.0 * static_cast<double>(batch_size_nb) - 2.0;
  return 1.0 / (1.0 + competitors * std::exp((offdiag_similarity - 1.0) / tau_s));
}

}  // namespace xclr
