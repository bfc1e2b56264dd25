#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "oracles.hpp"
#include "xclr/graph.hpp"

using namespace xclr;

namespace {

std::vector<std::size_t> shuffled_pairs(std::size_t originals, Rng& rng) {
  std::vector<std::size_t> batch;
  for (std::size_t k = 0; k < originals; ++k) {
    batch.push_back(k);
    batch.push_back(k);
  }
  rng.shuffle(std::span<std::size_t>(batch));
  return batch;
}

}  // namespace

TEST_CASE("SimilarityGraph validation") {
  CHECK_NOTHROW(SimilarityGraph(Matrix{{1, 0.5}, {0.5, 1}}));
  CHECK(code_of([] { SimilarityGraph(Matrix{{1, 0.5}, {0.4, 1}}); }) == Errc::ShapeMismatch);
  CHECK(code_of([] { SimilarityGraph(Matrix{{0.9, 0.5}, {0.5, 1}}); }) == Errc::ShapeMismatch);
  CHECK(code_of([] { SimilarityGraph(Matrix(2, 3, 1.0)); }) == Errc::ShapeMismatch);
}

TEST_CASE("augmentation graph is block diagonal") {
  const SimilarityGraph g = build_augmentation_graph(3, 2);
  CHECK(g.size() == 6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) CHECK(g.similarity(i, j) == (i / 2 == j / 2 ? 1.0 : 0.0));
}

TEST_CASE("class graph") {
  const std::vector<std::size_t> labels{0, 1, 0, 2};
  const SimilarityGraph g = build_class_graph(labels);
  CHECK(g.similarity(0, 2) == 1.0);
  CHECK(g.similarity(0, 1) == 0.0);
  CHECK(g.similarity(3, 3) == 1.0);
}

TEST_CASE("caption graph matches naive cosine") {
  Rng rng(4);
  const Matrix caps = oracle::random_matrix(9, 5, rng);
  const SimilarityGraph g = build_caption_graph(caps);
  const Matrix ref = oracle::naive_cosine_matrix(caps, caps);
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(g.similarity(i, i) == 1.0);
    for (std::size_t j = 0; j < 9; ++j) {
      CHECK(std::abs(g.similarity(i, j) - ref(i, j)) < 1e-9);
      CHECK(g.similarity(i, j) == g.similarity(j, i));
    }
  }
  CHECK(code_of([] { build_caption_graph(Matrix{{1, 0}, {0, 0}}); }) == Errc::ZeroNormRow);
}

TEST_CASE("embedding source agrees with the dense caption graph") {
  Rng rng(6);
  const Matrix caps = oracle::random_matrix(7, 4, rng);
  const SimilarityGraph dense = build_caption_graph(caps);
  const EmbeddingGraphSource lazy(caps);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) CHECK(std::abs(lazy.similarity(i, j) - dense.similarity(i, j)) < 1e-12);
}

TEST_CASE("hierarchy graph uses tree distances") {
  const HierarchyTree tree = HierarchyTree::two_level(2, 2);
  CHECK_NOTHROW(tree.validate());
  const std::vector<std::size_t> labels{0, 1, 2, 3, 0};
  const SimilarityGraph g = build_hierarchy_graph(tree, labels);
  // leaves: siblings at distance 2, cousins at distance 4
  CHECK(g.similarity(0, 1) == doctest::Approx(0.5));
  CHECK(g.similarity(0, 2) == doctest::Approx(0.0));
  CHECK(g.similarity(0, 4) == doctest::Approx(1.0));

  SUBCASE("random trees against a BFS oracle") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
      HierarchyTree t;
      const std::size_t inner = 1 + rng.below(5);
      t.parent.push_back(HierarchyTree::kNoParent);
      for (std::size_t v = 1; v < inner; ++v) t.parent.push_back(rng.below(v));
      const std::size_t classes = 2 + rng.below(5);
      for (std::size_t c = 0; c < classes; ++c) {
        t.class_leaf.push_back(t.parent.size());
        t.parent.push_back(rng.below(inner));
      }
      std::vector<std::size_t> lab(12);
      for (auto& l : lab) l = rng.below(classes);
      const SimilarityGraph hg = build_hierarchy_graph(t, lab);

      std::size_t dmax = 0;
      for (std::size_t a = 0; a < classes; ++a)
        for (std::size_t b = 0; b < classes; ++b)
          dmax = std::max(dmax, oracle::tree_distance(t.parent, t.class_leaf[a], t.class_leaf[b]));
      for (std::size_t i = 0; i < lab.size(); ++i)
        for (std::size_t j = 0; j < lab.size(); ++j) {
          const double d = static_cast<double>(
              oracle::tree_distance(t.parent, t.class_leaf[lab[i]], t.class_leaf[lab[j]]));
          CHECK(std::abs(hg.similarity(i, j) - (1.0 - d / static_cast<double>(dmax))) < 1e-12);
        }
    }
  }

  SUBCASE("errors") {
    const std::vector<std::size_t> unknown{0, 7};
    CHECK(code_of([&] { build_hierarchy_graph(tree, unknown); }) == Errc::UnknownClass);
    HierarchyTree two_roots = tree;
    two_roots.parent[1] = HierarchyTree::kNoParent;
    CHECK(code_of([&] { two_roots.validate(); }) == Errc::DegenerateTree);
    HierarchyTree cycle = tree;
    cycle.parent[0] = 1;
    CHECK(code_of([&] { cycle.validate(); }) == Errc::DegenerateTree);
  }
}

TEST_CASE("random graphs") {
  const std::vector<std::size_t> labels{0, 1, 2, 0, 1};
  const SimilarityGraph a = build_random_graph(RandomGraphMode::PerClassPair, 0, labels, 9);
  const SimilarityGraph b = build_random_graph(RandomGraphMode::PerClassPair, 0, labels, 9);
  CHECK(a.values() == b.values());
  CHECK(a.similarity(0, 1) == a.similarity(3, 4));  // same class pair, same value
  for (double v : a.values().values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  const SimilarityGraph s = build_random_graph(RandomGraphMode::PerSamplePair, 6, std::nullopt, 2);
  CHECK(s.size() == 6);
  CHECK(code_of([] { build_random_graph(RandomGraphMode::PerClassPair, 4, std::nullopt, 1); }) ==
        Errc::MissingLabels);
}

TEST_CASE("table lookup") {
  const ClassSimilarityTable table(Matrix{{1, 0.3}, {0.3, 1}});
  const std::vector<std::size_t> labels{0, 1, 1};
  const SimilarityGraph g = table_lookup_graph(table, labels);
  CHECK(g.similarity(0, 1) == 0.3);
  CHECK(g.similarity(1, 2) == 1.0);
  const TableGraphSource lazy(table, labels);
  CHECK(lazy.similarity(0, 2) == 0.3);
  const std::vector<std::size_t> bad{0, 2};
  CHECK(code_of([&] { TableGraphSource(table, bad); }) == Errc::LabelOutOfRange);
}

TEST_CASE("pair_index_from_batch") {
  const std::vector<std::size_t> batch{4, 9, 4, 9};
  const auto pairs = pair_index_from_batch(batch);
  CHECK(pairs == std::vector<std::size_t>{2, 3, 0, 1});
  const std::vector<std::size_t> triple{1, 1, 1, 2};
  CHECK(code_of([&] { pair_index_from_batch(triple); }) == Errc::BadPairing);
  const std::vector<std::size_t> single{1, 2};
  CHECK(code_of([&] { pair_index_from_batch(single); }) == Errc::BadPairing);
}

TEST_CASE("batch targets") {
  SUBCASE("augmentation graph puts almost all mass on the pair") {
    const SimilarityGraph g = build_augmentation_graph(4, 1);
    const std::vector<std::size_t> batch{0, 0, 1, 1, 2, 2, 3, 3};
    const TargetBatch t = batch_targets(g, batch, 0.1);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t.rows[i].values[t.pair_index[i]] > 0.99);
  }
  SUBCASE("invariants on random graphs") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 3 + rng.below(6);
      const SimilarityGraph g = build_random_graph(RandomGraphMode::PerSamplePair, n, std::nullopt, trial);
      const auto batch = shuffled_pairs(n, rng);
      const double tau_s = 0.05 + rng.uniform();
      const TargetBatch t = batch_targets(g, batch, tau_s);
      for (std::size_t i = 0; i < t.size(); ++i) {
        CHECK(std::abs(t.rows[i].sum() - 1.0) < 1e-9);
        CHECK(t.rows[i].values[i] == 0.0);
        // direct softmax of the logits the row was built from
        std::vector<double> logits(batch.size(), 0.0);
        for (std::size_t j = 0; j < batch.size(); ++j)
          if (j == t.pair_index[i]) logits[j] = 1.0;
          else if (j != i) logits[j] = g.similarity(batch[i], batch[j]);
        const auto ref = oracle::direct_softmax(logits, tau_s, i);
        for (std::size_t j = 0; j < batch.size(); ++j) CHECK(std::abs(t.rows[i].values[j] - ref[j]) < 1e-12);
      }
    }
  }
  SUBCASE("binary class graph at small tau_s is uniform over positives") {
    const std::vector<std::size_t> labels{0, 0, 1};
    const SimilarityGraph g = build_class_graph(labels);
    const std::vector<std::size_t> batch{0, 1, 2, 0, 1, 2};
    const TargetBatch t = batch_targets(g, batch, 1e-3);
    // slot 0 (class 0): positives are slots 1, 3, 4
    CHECK(std::abs(t.rows[0].values[1] - 1.0 / 3) < 1e-9);
    CHECK(std::abs(t.rows[0].values[3] - 1.0 / 3) < 1e-9);
    CHECK(std::abs(t.rows[0].values[4] - 1.0 / 3) < 1e-9);
    CHECK(t.rows[0].values[2] < 1e-9);
  }
  SUBCASE("errors") {
    const SimilarityGraph g = build_augmentation_graph(2, 1);
    const std::vector<std::size_t> batch{0, 1, 0, 1};
    CHECK(code_of([&] { batch_targets(g, batch, 0.0); }) == Errc::NonPositiveTemperature);
  }
}

TEST_CASE("diagonal mass closed form") {
  for (double tau_s : {0.03, 0.1, 0.3, 1.0})
    for (std::size_t nb : {2u, 64u, 1024u})
      for (double o : {0.0, 0.35}) {
        std::vector<double> logits(2 * nb, o);
        logits[0] = 0.0;  // self, excluded
        logits[1] = 1.0;  // pair
        const auto ref = oracle::direct_softmax(logits, tau_s, 0);
        CHECK(std::abs(diagonal_mass(tau_s, nb, o) - ref[1]) < 1e-9);
      }
  CHECK(diagonal_mass(0.1, 2, 0.0) > diagonal_mass(0.1, 8, 0.0));
  CHECK(diagonal_mass(0.1, 8, 0.0) > diagonal_mass(0.3, 8, 0.0));
  CHECK(diagonal_mass(0.1, 8, 1.0) == doctest::Approx(1.0 / 15));
}
