#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xclr/graph.hpp"
#include "xclr/numerics.hpp"

namespace xclr {

struct ProbeReport {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;  // 0 for classes absent from the test split
  std::vector<std::size_t> class_counts;   // test samples per class
  std::string method;                      // "knn" or "linear"
  std::size_t k = 0;                       // knn only
  std::vector<double> loss_trace;          // linear probe: training loss per iteration (incl. initial)
};

/// Majority vote over the k nearest training points under cosine distance. Neighbors are
/// ordered by (distance, training index); vote ties go to the smallest class id.
ProbeReport knn_accuracy(const Matrix& train_feats, std::span<const std::size_t> train_labels,
                         const Matrix& test_feats, std::span<const std::size_t> test_labels,
                         std::size_t k);

struct ProbeConfig {
  std::size_t iterations = 500;
  double learning_rate = 0.1;
  double l2 = 0.0;
  bool standardize = true;  // z-score with training-split statistics
};

/// Multinomial logistic regression on frozen features, full-batch gradient descent from zero.
ProbeReport linear_probe(const Matrix& train_feats, std::span<const std::size_t> train_labels,
                         const Matrix& test_feats, std::span<const std::size_t> test_labels,
                         const ProbeConfig& config = {});

/// Random half split (first half train) used for held-out probing.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
Split even_split(std::size_t n, std::uint64_t seed);

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows);
std::vector<std::size_t> select(std::span<const std::size_t> v, std::span<const std::size_t> rows);

struct ClassPairSimilarity {
  Matrix values;                         // c×c mean cosine over the Cartesian product
  std::vector<std::size_t> sample_counts;  // examples drawn per class
};

ClassPairSimilarity class_pair_similarity(const Matrix& feats, std::span<const std::size_t> labels,
                                          std::size_t samples_per_class, std::uint64_t seed);

struct GraphMetrics {
  double label_error = 0.0;               // mean cosine over cross-class pairs
  double intra_class_connectivity = 0.0;  // within mean / max(cross mean, 1e-6)
  double within_mean = 0.0;
  double cross_mean = 0.0;
  bool denominator_floored = false;
};

GraphMetrics graph_metrics(const Matrix& feats, std::span<const std::size_t> labels);

struct Histogram {
  std::vector<double> edges;  // bins + 1 uniform edges over [-1, 1]
  std::vector<std::size_t> counts;
  double mean = 0.0;          // mean of the off-diagonal entries
};

/// Strict upper triangle only. Bins are half-open except the last, which includes 1.
Histogram similarity_histogram(const SimilarityGraph& graph, std::size_t bins);

double pearson(std::span<const double> a, std::span<const double> b);

/// Off-diagonal entries (i != j) in row-major order.
std::vector<double> off_diagonal(const Matrix& m);

}  // namespace xclr
