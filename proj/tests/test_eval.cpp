#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "oracles.hpp"
#include "xclr/eval.hpp"

using namespace xclr;

namespace {

// Small integer coordinates make equal distances (and vote ties) common.
Matrix lattice_points(std::size_t n, std::size_t d, Rng& rng) {
  Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    do {
      for (double& v : m.row(i)) v = static_cast<double>(rng.below(3)) - 1.0;
    } while (l2_norm(m.row(i)) == 0.0);
  }
  return m;
}

std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<std::size_t> l(n);
  for (auto& v : l) v = rng.below(classes);
  return l;
}

}  // namespace

TEST_CASE("knn trivial cases") {
  const Matrix train{{1, 0}, {0, 1}, {-1, 0}};
  const std::vector<std::size_t> labels{0, 1, 2};
  const Matrix test{{0, 1}};
  const std::vector<std::size_t> test_labels{1};
  CHECK(knn_accuracy(train, labels, test, test_labels, 1).accuracy == 1.0);

  const Matrix two{{1, 0}, {1.1, 0.1}, {0.9, -0.1}, {-1, 0}, {-1.1, 0.1}, {-0.9, -0.1}};
  const std::vector<std::size_t> two_labels{0, 0, 0, 1, 1, 1};
  const Matrix q{{2, 0.3}, {-3, 0.2}};
  const std::vector<std::size_t> q_labels{0, 1};
  CHECK(knn_accuracy(two, two_labels, q, q_labels, 3).accuracy == 1.0);
}

TEST_CASE("knn vote ties go to the smallest class") {
  const Matrix train{{1, 0}, {0, 1}};
  const std::vector<std::size_t> labels{3, 1};
  const Matrix test{{1, 1}};
  const std::vector<std::size_t> want1{1}, want3{3};
  CHECK(knn_accuracy(train, labels, test, want1, 2).accuracy == 1.0);
  CHECK(knn_accuracy(train, labels, test, want3, 2).accuracy == 0.0);
}

TEST_CASE("knn matches a brute-force oracle") {
  Rng rng(123);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + rng.below(3);
    const Matrix train = lattice_points(10 + rng.below(30), d, rng);
    const Matrix test = lattice_points(5 + rng.below(10), d, rng);
    const auto train_labels = random_labels(train.rows(), 3, rng);
    const std::size_t k = 1 + rng.below(std::min<std::size_t>(train.rows(), 9));
    const auto expected = oracle::brute_force_knn(train, train_labels, test, k);
    // score against the oracle's predictions: exact agreement means accuracy 1
    const ProbeReport r = knn_accuracy(train, train_labels, test, expected, k);
    CHECK(r.accuracy == 1.0);
    CHECK(r.method == "knn");
    CHECK(r.k == k);
  }
}

TEST_CASE("knn errors") {
  const Matrix train{{1, 0}};
  const std::vector<std::size_t> labels{0};
  CHECK(code_of([&] { knn_accuracy(train, labels, Matrix(0, 2), {}, 1); }) == Errc::EmptySplit);
  CHECK(code_of([&] { knn_accuracy(train, labels, train, labels, 2); }) == Errc::InvalidArgument);
  CHECK(code_of([&] { knn_accuracy(train, labels, train, labels, 0); }) == Errc::InvalidArgument);
  const Matrix zero{{0, 0}};
  CHECK(code_of([&] { knn_accuracy(train, labels, zero, labels, 1); }) == Errc::ZeroNormRow);
}

TEST_CASE("linear probe") {
  SUBCASE("separable two-class data") {
    const Matrix x{{1, 2}, {2, 1}, {1.5, 1.5}, {-1, -2}, {-2, -1}, {-1.5, -1.5}};
    const std::vector<std::size_t> y{0, 0, 0, 1, 1, 1};
    const ProbeReport r = linear_probe(x, y, x, y);
    CHECK(r.accuracy == 1.0);
    CHECK(r.loss_trace.back() <= r.loss_trace.front());
  }
  SUBCASE("labels independent of features score near chance") {
    Rng rng(55);
    const Matrix xtr = oracle::random_matrix(400, 8, rng);
    const Matrix xte = oracle::random_matrix(400, 8, rng);
    std::vector<std::size_t> ytr(400), yte(400);
    for (std::size_t i = 0; i < 400; ++i) {
      ytr[i] = i % 4;
      yte[i] = (i * 7 + 1) % 4;
    }
    const ProbeReport r = linear_probe(xtr, ytr, xte, yte);
    CHECK(std::abs(r.accuracy - 0.25) <= 0.08);
    for (std::size_t it = 1; it < r.loss_trace.size(); ++it)
      CHECK(r.loss_trace[it] <= r.loss_trace[it - 1] + 1e-12);
  }
  SUBCASE("accuracy is the count-weighted mean of per-class accuracies") {
    Rng rng(56);
    const Matrix x = oracle::random_matrix(90, 5, rng);
    const auto y = random_labels(90, 3, rng);
    const ProbeReport r = linear_probe(x, y, x, y);
    double weighted = 0;
    std::size_t total = 0;
    for (std::size_t c = 0; c < r.per_class_accuracy.size(); ++c) {
      weighted += r.per_class_accuracy[c] * static_cast<double>(r.class_counts[c]);
      total += r.class_counts[c];
    }
    CHECK(std::abs(r.accuracy - weighted / static_cast<double>(total)) < 1e-12);
  }
  SUBCASE("single class") {
    const Matrix x{{1, 0}, {0, 1}};
    const std::vector<std::size_t> y{2, 2};
    CHECK(code_of([&] { linear_probe(x, y, x, y); }) == Errc::SingleClass);
  }
}

TEST_CASE("even split") {
  const Split s = even_split(11, 3);
  CHECK(s.train.size() == 5);
  CHECK(s.test.size() == 6);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> want(11);
  std::iota(want.begin(), want.end(), std::size_t{0});
  CHECK(all == want);
  CHECK(even_split(11, 3).train == s.train);
}

TEST_CASE("class pair similarity") {
  Rng rng(8);
  const Matrix f = oracle::random_matrix(30, 4, rng);
  std::vector<std::size_t> labels(30);
  for (std::size_t i = 0; i < 30; ++i) labels[i] = i % 3;
  const ClassPairSimilarity all = class_pair_similarity(f, labels, 100, 1);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) {
      CHECK(std::abs(all.values(a, b) - all.values(b, a)) < 1e-12);
      double s = 0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < 30; ++i)
        for (std::size_t j = 0; j < 30; ++j)
          if (labels[i] == a && labels[j] == b) {
            s += oracle::naive_cosine(f.row(i), f.row(j));
            ++n;
          }
      CHECK(std::abs(all.values(a, b) - s / static_cast<double>(n)) < 1e-9);
    }
  CHECK(all.sample_counts == std::vector<std::size_t>{10, 10, 10});
  const ClassPairSimilarity few = class_pair_similarity(f, labels, 4, 1);
  CHECK(few.sample_counts == std::vector<std::size_t>{4, 4, 4});
}

TEST_CASE("graph metrics") {
  SUBCASE("orthogonal classes") {
    const Matrix f{{1, 0}, {2, 0}, {0, 1}, {0, 3}};
    const std::vector<std::size_t> y{0, 0, 1, 1};
    const GraphMetrics m = graph_metrics(f, y);
    CHECK(m.label_error == 0.0);
    CHECK(m.denominator_floored);
    CHECK(m.intra_class_connectivity == doctest::Approx(1.0 / 1e-6));
  }
  SUBCASE("random instance against a pairwise loop") {
    Rng rng(4);
    const Matrix f = oracle::random_matrix(15, 3, rng);
    std::vector<std::size_t> y(15);
    for (std::size_t i = 0; i < 15; ++i) y[i] = (i * 7) % 3;
    const GraphMetrics m = graph_metrics(f, y);
    double ws = 0, cs = 0;
    std::size_t wn = 0, cn = 0;
    for (std::size_t i = 0; i < 15; ++i)
      for (std::size_t j = 0; j < 15; ++j) {
        if (i == j) continue;
        const double c = oracle::naive_cosine(f.row(i), f.row(j));
        if (y[i] == y[j]) {
          ws += c;
          ++wn;
        } else {
          cs += c;
          ++cn;
        }
      }
    CHECK(std::abs(m.label_error - cs / cn) < 1e-9);
    CHECK(std::abs(m.within_mean - ws / wn) < 1e-9);
    CHECK(std::abs(m.intra_class_connectivity - (ws / wn) / std::max(cs / cn, 1e-6)) < 1e-9);
  }
  SUBCASE("degenerate") {
    const Matrix f{{1, 0}, {0, 1}};
    const std::vector<std::size_t> y{0, 0};
    CHECK(code_of([&] { graph_metrics(f, y); }) == Errc::DegenerateClasses);
  }
}

TEST_CASE("similarity histogram") {
  const SimilarityGraph g(Matrix{{1, 0.5, -1}, {0.5, 1, 1}, {-1, 1, 1}});
  const Histogram h = similarity_histogram(g, 4);
  CHECK(h.edges.size() == 5);
  CHECK(h.counts == std::vector<std::size_t>{1, 0, 0, 2});
  CHECK(h.mean == doctest::Approx(0.5 / 3));
}

TEST_CASE("pearson and off_diagonal") {
  const std::vector<double> a{1, 2, 3, 4}, b{2, 4, 6, 8}, c{4, 3, 2, 1};
  CHECK(pearson(a, b) == doctest::Approx(1.0));
  CHECK(pearson(a, c) == doctest::Approx(-1.0));
  const Matrix m{{1, 2}, {3, 4}};
  CHECK(off_diagonal(m) == std::vector<double>{2, 3});
}
