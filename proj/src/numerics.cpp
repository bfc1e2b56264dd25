#include "xclr/numerics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <thread>

namespace xclr {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::ZeroNormRow: return "ZeroNormRow";
    case Errc::ZeroNormColumn: return "ZeroNormColumn";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::SizeMismatch: return "SizeMismatch";
    case Errc::NonPositiveTemperature: return "NonPositiveTemperature";
    case Errc::EmptySupport: return "EmptySupport";
    case Errc::SupportMismatch: return "SupportMismatch";
    case Errc::TooFewSamples: return "TooFewSamples";
    case Errc::UnknownClass: return "UnknownClass";
    case Errc::DegenerateTree: return "DegenerateTree";
    case Errc::MissingLabels: return "MissingLabels";
    case Errc::BadPairing: return "BadPairing";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::IoError: return "IoError";
    case Errc::BadMagic: return "BadMagic";
    case Errc::TruncatedPayload: return "TruncatedPayload";
    case Errc::VersionUnsupported: return "VersionUnsupported";
    case Errc::ParseError: return "ParseError";
    case Errc::NonContiguousIndex: return "NonContiguousIndex";
    case Errc::EmptySplit: return "EmptySplit";
    case Errc::SingleClass: return "SingleClass";
    case Errc::DegenerateClasses: return "DegenerateClasses";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(Errc::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                         " != " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw Error(Errc::ShapeMismatch, "ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

double ProbRow::sum() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::size_t threads_from_env() {
  if (const char* env = std::getenv("XCLR_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<std::size_t>(v);
  }
  return 1;
}

std::atomic<std::size_t> g_threads{threads_from_env()};

ConstMap view(const Matrix& m) {
  return ConstMap(m.values().data(), static_cast<Eigen::Index>(m.rows()),
                  static_cast<Eigen::Index>(m.cols()));
}

// Splits output rows into contiguous blocks, one per worker.
template <typename Fn>
void for_row_blocks(std::size_t rows, Fn&& fn) {
  const std::size_t workers = std::min(num_threads(), std::max<std::size_t>(rows / 64, 1));
  if (workers <= 1) {
    fn(std::size_t{0}, rows);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (rows + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(rows, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

void set_num_threads(std::size_t n) { g_threads = std::max<std::size_t>(n, 1); }
std::size_t num_threads() { return g_threads; }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error(Errc::DimMismatch, "matmul inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  auto bv = view(b);
  for_row_blocks(a.rows(), [&](std::size_t lo, std::size_t hi) {
    const auto n = static_cast<Eigen::Index>(hi - lo);
    ConstMap ab(a.values().data() + lo * a.cols(), n, static_cast<Eigen::Index>(a.cols()));
    MutMap ob(out.values().data() + lo * out.cols(), n, static_cast<Eigen::Index>(out.cols()));
    ob.noalias() = ab * bv;
  });
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw Error(Errc::DimMismatch, "matmul_tn row counts differ");
  Matrix out(a.cols(), b.cols());
  MutMap(out.values().data(), static_cast<Eigen::Index>(out.rows()),
         static_cast<Eigen::Index>(out.cols()))
      .noalias() = view(a).transpose() * view(b);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw Error(Errc::DimMismatch, "matmul_nt column counts differ");
  Matrix out(a.rows(), b.rows());
  auto bv = view(b);
  for_row_blocks(a.rows(), [&](std::size_t lo, std::size_t hi) {
    const auto n = static_cast<Eigen::Index>(hi - lo);
    ConstMap ab(a.values().data() + lo * a.cols(), n, static_cast<Eigen::Index>(a.cols()));
    MutMap ob(out.values().data() + lo * out.cols(), n, static_cast<Eigen::Index>(out.cols()));
    ob.noalias() = ab * bv.transpose();
  });
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(Errc::DimMismatch, "dot length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double frobenius_sq(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return s;
}

std::vector<double> row_norms(const Matrix& m) {
  std::vector<double> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = l2_norm(m.row(i));
  return out;
}

Matrix l2_normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double n = l2_norm(m.row(i));
    if (!(n >= 1e-12)) throw Error(Errc::ZeroNormRow, "row " + std::to_string(i), i);
    for (double& v : out.row(i)) v /= n;
  }
  return out;
}

Matrix cosine_similarity_matrix(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw Error(Errc::DimMismatch, "cosine inputs have different widths");
  const auto na = row_norms(a);
  const auto nb = row_norms(b);
  for (std::size_t i = 0; i < na.size(); ++i)
    if (!(na[i] >= 1e-12)) throw Error(Errc::ZeroNormRow, "row " + std::to_string(i), i);
  for (std::size_t j = 0; j < nb.size(); ++j)
    if (!(nb[j] >= 1e-12)) throw Error(Errc::ZeroNormRow, "row " + std::to_string(j), j);

  Matrix out(a.rows(), b.rows());
  for_row_blocks(a.rows(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      for (std::size_t j = 0; j < b.rows(); ++j) {
        const double c = dot(a.row(i), b.row(j)) / (na[i] * nb[j]);
        out(i, j) = std::clamp(c, -1.0, 1.0);
      }
    }
  });
  return out;
}

ProbRow row_softmax(std::span<const double> row, double temperature,
                    std::optional<std::size_t> excluded_index) {
  if (!(temperature > 0.0)) throw Error(Errc::NonPositiveTemperature, std::to_string(temperature));
  ProbRow out{std::vector<double>(row.size(), 0.0), excluded_index};

  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (excluded_index && *excluded_index == j) continue;
    max_logit = std::max(max_logit, row[j] / temperature);
  }
  if (max_logit == -std::numeric_limits<double>::infinity())
    throw Error(Errc::EmptySupport, "every index is excluded");

  double total = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (excluded_index && *excluded_index == j) continue;
    out.values[j] = std::exp(row[j] / temperature - max_logit);
    total += out.values[j];
  }
  for (double& v : out.values) v /= total;
  return out;
}

double cross_entropy_row(const ProbRow& target, const ProbRow& predicted) {
  if (target.size() != predicted.size())
    throw Error(Errc::SupportMismatch, "target and predicted lengths differ");
  if (target.excluded_index != predicted.excluded_index)
    throw Error(Errc::SupportMismatch, "target and predicted exclude different indices");
  double h = 0.0;
  for (std::size_t j = 0; j < target.size(); ++j) {
    const double t = target.values[j];
    if (t == 0.0) continue;
    const double p = predicted.values[j];
    const bool masked = predicted.excluded_index && *predicted.excluded_index == j;
    if (masked || !(p > 0.0))
      throw Error(Errc::SupportMismatch, "target mass at index " + std::to_string(j), j);
    h -= t * std::log(p);
  }
  return h;
}

bool all_finite(const Matrix& m) {
  return std::all_of(m.values().begin(), m.values().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace xclr
