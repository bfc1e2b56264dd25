#include "xclr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "xclr/rng.hpp"

namespace xclr {

namespace {

std::size_t class_count(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  std::size_t c = 0;
  for (std::size_t l : a) c = std::max(c, l + 1);
  for (std::size_t l : b) c = std::max(c, l + 1);
  return c;
}

void require_rows(const Matrix& feats, std::span<const std::size_t> labels, const char* split) {
  if (feats.rows() == 0) throw Error(Errc::EmptySplit, std::string(split) + " split is empty");
  if (labels.size() != feats.rows())
    throw Error(Errc::SizeMismatch, std::string(split) + " labels differ in length from features");
}

void score(ProbeReport& report, std::span<const std::size_t> predicted,
           std::span<const std::size_t> truth, std::size_t classes) {
  report.class_counts.assign(classes, 0);
  std::vector<std::size_t> correct(classes, 0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++report.class_counts[truth[i]];
    if (predicted[i] == truth[i]) {
      ++correct[truth[i]];
      ++hits;
    }
  }
  report.per_class_accuracy.assign(classes, 0.0);
  for (std::size_t c = 0; c < classes; ++c)
    if (report.class_counts[c] > 0)
      report.per_class_accuracy[c] = static_cast<double>(correct[c]) / static_cast<double>(report.class_counts[c]);
  report.accuracy = static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace

ProbeReport knn_accuracy(const Matrix& train_feats, std::span<const std::size_t> train_labels,
                         const Matrix& test_feats, std::span<const std::size_t> test_labels,
                         std::size_t k) {
  require_rows(train_feats, train_labels, "train");
  require_rows(test_feats, test_labels, "test");
  if (train_feats.cols() != test_feats.cols()) throw Error(Errc::DimMismatch, "feature widths differ");
  if (k < 1 || k > train_feats.rows())
    throw Error(Errc::InvalidArgument, "k must be in [1, train size]");

  const auto train_norm = row_norms(train_feats);
  const auto test_norm = row_norms(test_feats);
  for (std::size_t i = 0; i < train_norm.size(); ++i)
    if (!(train_norm[i] >= 1e-12)) throw Error(Errc::ZeroNormRow, "train row", i);
  for (std::size_t i = 0; i < test_norm.size(); ++i)
    if (!(test_norm[i] >= 1e-12)) throw Error(Errc::ZeroNormRow, "test row", i);

  const std::size_t classes = class_count(train_labels, test_labels);
  const std::size_t n_train = train_feats.rows();
  std::vector<std::size_t> predicted(test_feats.rows());
  std::vector<double> dist(n_train);
  std::vector<std::size_t> idx(n_train);
  std::vector<std::size_t> votes(classes);

  for (std::size_t t = 0; t < test_feats.rows(); ++t) {
    for (std::size_t j = 0; j < n_train; ++j)
      dist[j] = 1.0 - dot(test_feats.row(t), train_feats.row(j)) / (test_norm[t] * train_norm[j]);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
                      });
    std::fill(votes.begin(), votes.end(), 0);
    for (std::size_t r = 0; r < k; ++r) ++votes[train_labels[idx[r]]];
    // max_element returns the first maximum, i.e. the smallest class id.
    predicted[t] = static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  }

  ProbeReport report;
  report.method = "knn";
  report.k = k;
  score(report, predicted, test_labels, classes);
  return report;
}

ProbeReport linear_probe(const Matrix& train_feats, std::span<const std::size_t> train_labels,
                         const Matrix& test_feats, std::span<const std::size_t> test_labels,
                         const ProbeConfig& config) {
  require_rows(train_feats, train_labels, "train");
  require_rows(test_feats, test_labels, "test");
  if (train_feats.cols() != test_feats.cols()) throw Error(Errc::DimMismatch, "feature widths differ");
  {
    std::vector<std::size_t> distinct(train_labels.begin(), train_labels.end());
    std::sort(distinct.begin(), distinct.end());
    if (std::unique(distinct.begin(), distinct.end()) - distinct.begin() < 2)
      throw Error(Errc::SingleClass, "linear probe needs at least two classes in the train split");
  }

  const std::size_t n = train_feats.rows();
  const std::size_t d = train_feats.cols();
  const std::size_t classes = class_count(train_labels, test_labels);

  Matrix xtr = train_feats;
  Matrix xte = test_feats;
  if (config.standardize) {
    std::vector<double> mean(d, 0.0), sd(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) mean[k] += xtr(i, k);
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) sd[k] += (xtr(i, k) - mean[k]) * (xtr(i, k) - mean[k]);
    for (double& s : sd) {
      s = std::sqrt(s / static_cast<double>(n));
      if (!(s > 1e-12)) s = 1.0;
    }
    for (Matrix* x : {&xtr, &xte})
      for (std::size_t i = 0; i < x->rows(); ++i)
        for (std::size_t k = 0; k < d; ++k) (*x)(i, k) = ((*x)(i, k) - mean[k]) / sd[k];
  }

  Matrix w(d, classes);
  std::vector<double> b(classes, 0.0);
  ProbeReport report;
  report.method = "linear";

  auto logits_of = [&](const Matrix& x) {
    Matrix z = matmul(x, w);
    for (std::size_t i = 0; i < z.rows(); ++i)
      for (std::size_t c = 0; c < classes; ++c) z(i, c) += b[c];
    return z;
  };

  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t it = 0; it <= config.iterations; ++it) {
    Matrix z = logits_of(xtr);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const ProbRow p = row_softmax(z.row(i), 1.0);
      const double mx = *std::max_element(z.row(i).begin(), z.row(i).end());
      double acc = 0.0;
      for (double v : z.row(i)) acc += std::exp(v - mx);
      loss += (mx + std::log(acc) - z(i, train_labels[i])) * inv_n;
      auto zr = z.row(i);
      for (std::size_t c = 0; c < classes; ++c) zr[c] = (p.values[c] - (c == train_labels[i] ? 1.0 : 0.0)) * inv_n;
    }
    if (config.l2 > 0.0) loss += 0.5 * config.l2 * frobenius_sq(w);
    report.loss_trace.push_back(loss);
    if (it == config.iterations) break;

    // z now holds dL/dlogits.
    Matrix gw = matmul_tn(xtr, z);
    for (std::size_t k = 0; k < w.size(); ++k)
      w.values()[k] -= config.learning_rate * (gw.values()[k] + config.l2 * w.values()[k]);
    for (std::size_t c = 0; c < classes; ++c) {
      double gb = 0.0;
      for (std::size_t i = 0; i < n; ++i) gb += z(i, c);
      b[c] -= config.learning_rate * gb;
    }
  }

  const Matrix zt = logits_of(xte);
  std::vector<std::size_t> predicted(xte.rows());
  for (std::size_t i = 0; i < xte.rows(); ++i) {
    const auto r = zt.row(i);
    predicted[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  score(report, predicted, test_labels, classes);
  return report;
}

Split even_split(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n / 2));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n / 2), order.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) std::ranges::copy(m.row(rows[r]), out.row(r).begin());
  return out;
}

std::vector<std::size_t> select(std::span<const std::size_t> v, std::span<const std::size_t> rows) {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(v[r]);
  return out;
}

ClassPairSimilarity class_pair_similarity(const Matrix& feats, std::span<const std::size_t> labels,
                                          std::size_t samples_per_class, std::uint64_t seed) {
  if (labels.size() != feats.rows()) throw Error(Errc::SizeMismatch, "labels differ in length from features");
  if (samples_per_class < 1) throw Error(Errc::InvalidArgument, "samples_per_class must be >= 1");
  const std::size_t classes = class_count(labels, {});
  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);

  Rng rng(seed);
  ClassPairSimilarity out;
  for (std::size_t c = 0; c < classes; ++c) {
    if (members[c].empty()) throw Error(Errc::DegenerateClasses, "class has no samples", c);
    rng.shuffle(std::span<std::size_t>(members[c]));
    members[c].resize(std::min(samples_per_class, members[c].size()));
    out.sample_counts.push_back(members[c].size());
  }

  const Matrix unit = l2_normalize_rows(feats);
  out.values = Matrix(classes, classes);
  for (std::size_t a = 0; a < classes; ++a) {
    for (std::size_t b = a; b < classes; ++b) {
      double sum = 0.0;
      for (std::size_t i : members[a])
        for (std::size_t j : members[b]) sum += dot(unit.row(i), unit.row(j));
      const double mean = sum / static_cast<double>(members[a].size() * members[b].size());
      out.values(a, b) = out.values(b, a) = mean;
    }
  }
  return out;
}

GraphMetrics graph_metrics(const Matrix& feats, std::span<const std::size_t> labels) {
  if (labels.size() != feats.rows()) throw Error(Errc::SizeMismatch, "labels differ in length from features");
  const std::size_t classes = class_count(labels, {});
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t l : labels) ++counts[l];
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) continue;
    ++present;
    if (counts[c] < 2) throw Error(Errc::DegenerateClasses, "class with a single sample", c);
  }
  if (present < 2) throw Error(Errc::DegenerateClasses, "need at least two classes");

  const Matrix unit = l2_normalize_rows(feats);
  const Matrix gram = matmul_nt(unit, unit);
  double within = 0.0, cross = 0.0;
  std::size_t n_within = 0, n_cross = 0;
  for (std::size_t i = 0; i < gram.rows(); ++i) {
    for (std::size_t j = i + 1; j < gram.cols(); ++j) {
      const double s = std::clamp(gram(i, j), -1.0, 1.0);
      if (labels[i] == labels[j]) {
        within += s;
        ++n_within;
      } else {
        cross += s;
        ++n_cross;
      }
    }
  }
  GraphMetrics m;
  m.within_mean = within / static_cast<double>(n_within);
  m.cross_mean = cross / static_cast<double>(n_cross);
  m.label_error = m.cross_mean;
  constexpr double kFloor = 1e-6;
  m.denominator_floored = m.cross_mean < kFloor;
  m.intra_class_connectivity = m.within_mean / std::max(m.cross_mean, kFloor);
  return m;
}

Histogram similarity_histogram(const SimilarityGraph& graph, std::size_t bins) {
  if (bins < 1) throw Error(Errc::InvalidArgument, "bins must be >= 1");
  Histogram h;
  for (std::size_t b = 0; b <= bins; ++b)
    h.edges.push_back(-1.0 + 2.0 * static_cast<double>(b) / static_cast<double>(bins));
  h.counts.assign(bins, 0);
  const std::size_t n = graph.size();
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = std::clamp(graph.similarity(i, j), -1.0, 1.0);
      auto bin = static_cast<std::size_t>(std::floor((v + 1.0) / 2.0 * static_cast<double>(bins)));
      ++h.counts[std::min(bin, bins - 1)];
      sum += graph.similarity(i, j);
      ++pairs;
    }
  }
  h.mean = pairs ? sum / static_cast<double>(pairs) : 0.0;
  return h;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw Error(Errc::SizeMismatch, "pearson needs equal lengths >= 2");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> off_diagonal(const Matrix& m) {
  std::vector<double> out;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (i != j) out.push_back(m(i, j));
  return out;
}

}  // namespace xclr
