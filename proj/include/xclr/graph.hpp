#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "xclr/numerics.hpp"

namespace xclr {

/// Anything that can answer "how similar are originals i and j".
class GraphSource {
 public:
  virtual ~GraphSource() = default;
  virtual std::size_t size() const = 0;
  virtual double similarity(std::size_t i, std::size_t j) const = 0;
};

/// Dense symmetric adjacency matrix with unit diagonal.
class SimilarityGraph final : public GraphSource {
 public:
  SimilarityGraph() = default;
  /// Validates symmetry (1e-9) and a unit diagonal; throws ShapeMismatch otherwise.
  explicit SimilarityGraph(Matrix values);

  std::size_t size() const override { return values_.rows(); }
  double similarity(std::size_t i, std::size_t j) const override { return values_(i, j); }
  const Matrix& values() const noexcept { return values_; }

 private:
  Matrix values_;
};

/// Precomputed c×c class similarity table.
class ClassSimilarityTable {
 public:
  ClassSimilarityTable() = default;
  explicit ClassSimilarityTable(Matrix values);

  std::size_t classes() const noexcept { return values_.rows(); }
  double operator()(std::size_t a, std::size_t b) const { return values_(a, b); }
  const Matrix& values() const noexcept { return values_; }

 private:
  Matrix values_;
};

/// Looks similarities up per sample through a class table; never materializes n×n.
class TableGraphSource final : public GraphSource {
 public:
  TableGraphSource(ClassSimilarityTable table, std::vector<std::size_t> labels);
  std::size_t size() const override { return labels_.size(); }
  double similarity(std::size_t i, std::size_t j) const override;

 private:
  ClassSimilarityTable table_;
  std::vector<std::size_t> labels_;
};

/// Cosine similarity of stored encodings, computed on demand for each batch pair.
class EmbeddingGraphSource final : public GraphSource {
 public:
  explicit EmbeddingGraphSource(const Matrix& embeddings);
  std::size_t size() const override { return unit_.rows(); }
  double similarity(std::size_t i, std::size_t j) const override;

 private:
  Matrix unit_;
};

/// Rooted tree given by a parent array; `class_leaf[c]` is the leaf node of class c.
struct HierarchyTree {
  static constexpr std::size_t kNoParent = static_cast<std::size_t>(-1);
  std::vector<std::size_t> parent;
  std::vector<std::size_t> class_leaf;

  /// Root -> one node per superclass -> one leaf per subclass (class id = subclass id).
  static HierarchyTree two_level(std::size_t n_super, std::size_t n_sub_per_super);

  /// Throws DegenerateTree on zero or several roots, cycles, or classes mapped to inner nodes.
  void validate() const;
};

/// Soft targets for an augmented batch. rows[i] excludes i; pair_index[i] is i's other view.
struct TargetBatch {
  std::vector<ProbRow> rows;
  std::vector<std::size_t> pair_index;

  std::size_t size() const noexcept { return rows.size(); }
};

SimilarityGraph build_augmentation_graph(std::size_t n_originals, std::size_t views);
SimilarityGraph build_class_graph(std::span<const std::size_t> labels);
SimilarityGraph build_caption_graph(const Matrix& caption_embeddings);
SimilarityGraph build_hierarchy_graph(const HierarchyTree& tree, std::span<const std::size_t> labels);

enum class RandomGraphMode { PerClassPair, PerSamplePair };

/// Symmetric c×c table, uniform[0,1) off the diagonal, ones on it.
ClassSimilarityTable random_class_table(std::size_t classes, std::uint64_t seed);

/// `n` is only read in per-sample mode; per-class mode requires labels (MissingLabels).
SimilarityGraph build_random_graph(RandomGraphMode mode, std::size_t n,
                                   std::optional<std::span<const std::size_t>> labels,
                                   std::uint64_t seed);

SimilarityGraph table_lookup_graph(const ClassSimilarityTable& table,
                                   std::span<const std::size_t> labels);

/// Pairs every augmented slot with the other slot holding the same original.
/// Throws BadPairing unless every original occurs exactly twice.
std::vector<std::size_t> pair_index_from_batch(std::span<const std::size_t> batch_indices);

/// `batch_indices[i]` is the original behind augmented slot i. The pair gets logit 1,
/// every other slot the graph value between originals, softmaxed at tau_s without self.
TargetBatch batch_targets(const GraphSource& graph, std::span<const std::size_t> batch_indices,
                          double tau_s);

/// Target mass on the true positive when all other 2N_b-2 candidates share one similarity.
double diagonal_mass(double tau_s, std::size_t batch_size_nb, double offdiag_similarity);

}  // namespace xclr
