#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "oracles.hpp"
#include "xclr/eval.hpp"
#include "xclr/losses.hpp"

using namespace xclr;

namespace {

struct Batch {
  Matrix z;
  std::vector<std::size_t> originals;  // original behind each slot
  std::vector<std::size_t> pairs;
  std::vector<std::size_t> slot_labels;
};

Batch random_batch(std::size_t n_originals, std::size_t k, std::size_t classes, Rng& rng) {
  Batch b;
  for (std::size_t o = 0; o < n_originals; ++o) {
    b.originals.push_back(o);
    b.originals.push_back(o);
  }
  rng.shuffle(std::span<std::size_t>(b.originals));
  b.pairs = pair_index_from_batch(b.originals);
  std::vector<std::size_t> cls(n_originals);
  for (auto& c : cls) c = rng.below(classes);
  for (std::size_t o : b.originals) b.slot_labels.push_back(cls[o]);
  b.z = oracle::random_matrix(2 * n_originals, k, rng);
  return b;
}

// Row-normalized copy of a random matrix; the analytic minimum of the graph losses.
SimilarityGraph gram_graph(const Matrix& unit) {
  Matrix g = matmul_nt(unit, unit);
  for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) = 1.0;
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  return SimilarityGraph(g);
}

}  // namespace

TEST_CASE("gradients match central differences") {
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.below(3);  // 4..8 slots
    const std::size_t k = 2 + rng.below(15);
    Batch b = random_batch(n, k, 2, rng);
    const double tau = 0.2 + rng.uniform();

    const SimilarityGraph caption = build_caption_graph(oracle::random_matrix(n, 6, rng));
    const TargetBatch targets = batch_targets(caption, b.originals, 0.1 + rng.uniform());
    auto xclr_f = [&](const Matrix& z) { return xclr_loss(z, targets, tau).value; };
    CHECK(oracle::relative_error(xclr_loss(b.z, targets, tau).grad_z, oracle::numeric_gradient(xclr_f, b.z)) < 1e-4);

    auto simclr_f = [&](const Matrix& z) { return simclr_loss(z, b.pairs, tau).value; };
    CHECK(oracle::relative_error(simclr_loss(b.z, b.pairs, tau).grad_z, oracle::numeric_gradient(simclr_f, b.z)) < 1e-4);

    auto supcon_f = [&](const Matrix& z) { return supcon_loss(z, b.slot_labels, b.pairs, tau).value; };
    CHECK(oracle::relative_error(supcon_loss(b.z, b.slot_labels, b.pairs, tau).grad_z,
                                 oracle::numeric_gradient(supcon_f, b.z)) < 1e-4);

    const SimilarityGraph g = build_caption_graph(oracle::random_matrix(2 * n, 5, rng));
    auto vic_f = [&](const Matrix& z) { return vic2_graph_loss(z, g).value; };
    CHECK(oracle::relative_error(vic2_graph_loss(b.z, g).grad_z, oracle::numeric_gradient(vic_f, b.z)) < 1e-4);

    for (bool exclude : {true, false}) {
      auto sg_f = [&](const Matrix& z) { return simclr_graph_loss(z, g, tau, exclude).value; };
      CHECK(oracle::relative_error(simclr_graph_loss(b.z, g, tau, exclude).grad_z,
                                   oracle::numeric_gradient(sg_f, b.z)) < 1e-4);
    }

    auto bt_f = [&](const Matrix& z) { return barlow_graph_loss(z, g).value; };
    CHECK(oracle::relative_error(barlow_graph_loss(b.z, g).grad_z, oracle::numeric_gradient(bt_f, b.z)) < 1e-4);
  }
}

TEST_CASE("simclr_loss hand example") {
  // two orthogonal pairs: each anchor sees its pair at cos 1 and two others at cos 0
  const Matrix z{{1, 0}, {1, 0}, {0, 1}, {0, 1}};
  const std::vector<std::size_t> pairs{1, 0, 3, 2};
  const double tau = 0.5;
  const double expected = -std::log(std::exp(2.0) / (std::exp(2.0) + 2.0));
  CHECK(simclr_loss(z, pairs, tau).value == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("xclr at small tau_s reduces to supcon with a class graph") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 3 + rng.below(4);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = rng.below(3);
    Batch b = random_batch(n, 8, 3, rng);
    for (std::size_t i = 0; i < b.originals.size(); ++i) b.slot_labels[i] = labels[b.originals[i]];
    const SimilarityGraph g = build_class_graph(labels);
    const TargetBatch t = batch_targets(g, b.originals, 1e-3);
    const double x = xclr_loss(b.z, t, 0.2).value;
    const double s = supcon_loss(b.z, b.slot_labels, b.pairs, 0.2).value;
    CHECK(std::abs(x - s) < 1e-5);
  }
}

TEST_CASE("xclr at small tau_s reduces to simclr with a caption graph") {
  Rng rng(78);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 3 + rng.below(4);
    Batch b = random_batch(n, 8, 1, rng);
    const SimilarityGraph g = build_caption_graph(oracle::random_matrix(n, 12, rng));
    for (double v : off_diagonal(g.values())) REQUIRE(v < 0.95);
    const TargetBatch t = batch_targets(g, b.originals, 1e-3);
    CHECK(std::abs(xclr_loss(b.z, t, 0.2).value - simclr_loss(b.z, b.pairs, 0.2).value) < 1e-6);
  }
}

TEST_CASE("simclr_graph_loss on the augmentation graph is 2N_b times simclr_loss") {
  Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t nb = 2 + rng.below(6);
    const Matrix z = oracle::random_matrix(2 * nb, 6, rng);
    std::vector<std::size_t> pairs(2 * nb);
    for (std::size_t i = 0; i < 2 * nb; ++i) pairs[i] = i ^ 1u;
    const SimilarityGraph g = build_augmentation_graph(nb, 2);
    const double graph_value = simclr_graph_loss(z, g, 0.3, true).value;
    CHECK(std::abs(graph_value - 2.0 * nb * simclr_loss(z, pairs, 0.3).value) < 1e-9);
  }
}

TEST_CASE("graph losses vanish at their analytic minima") {
  Rng rng(5);
  const Matrix unit = l2_normalize_rows(oracle::random_matrix(6, 4, rng));
  CHECK(vic2_graph_loss(unit, gram_graph(unit)).value < 1e-20);

  // Barlow: columns of Z̃ orthonormal under G = I
  const Matrix eye = Matrix::identity(4);
  const Matrix z{{2, 0}, {0, 3}, {0, 0}, {0, 0}};
  CHECK(barlow_graph_loss(z, SimilarityGraph(eye)).value < 1e-20);
}

TEST_CASE("xclr_loss is invariant to row scaling") {
  Rng rng(12);
  Batch b = random_batch(4, 6, 2, rng);
  const SimilarityGraph g = build_caption_graph(oracle::random_matrix(4, 5, rng));
  const TargetBatch t = batch_targets(g, b.originals, 0.1);
  Matrix scaled = b.z;
  for (double& v : scaled.row(3)) v *= 3.7;
  CHECK(std::abs(xclr_loss(b.z, t, 0.1).value - xclr_loss(scaled, t, 0.1).value) < 1e-9);
}

TEST_CASE("loss errors") {
  const Matrix one{{1, 0}};
  CHECK(code_of([&] { predicted_rows(one, 0.1); }) == Errc::TooFewSamples);
  const Matrix z{{1, 0}, {0, 1}, {1, 1}, {1, -1}};
  const std::vector<std::size_t> pairs{1, 0, 3, 2};
  CHECK(code_of([&] { simclr_loss(z, pairs, 0.0); }) == Errc::NonPositiveTemperature);
  const Matrix zero_row{{1, 0}, {0, 0}, {1, 1}, {1, -1}};
  CHECK(code_of([&] { simclr_loss(zero_row, pairs, 0.1); }) == Errc::ZeroNormRow);
  const SimilarityGraph g3 = build_augmentation_graph(3, 1);
  CHECK(code_of([&] { vic2_graph_loss(z, g3); }) == Errc::SizeMismatch);
  const Matrix zero_col{{1, 0}, {2, 0}, {3, 0}, {4, 0}};
  CHECK(code_of([&] { barlow_graph_loss(zero_col, build_augmentation_graph(2, 2)); }) == Errc::ZeroNormColumn);
}
