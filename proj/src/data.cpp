#include "xclr/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "xclr/rng.hpp"

namespace xclr {

void SyntheticDataset::validate() const {
  const std::size_t n = subclass.size();
  if (superclass.size() != n || features.rows() != n)
    throw Error(Errc::InvalidArgument, "dataset columns have different lengths");
  if (!captions.empty() && captions.rows() != n)
    throw Error(Errc::InvalidArgument, "caption count differs from sample count");
  std::vector<std::size_t> super_of(n_sub, static_cast<std::size_t>(-1));
  for (std::size_t i = 0; i < n; ++i) {
    if (subclass[i] >= n_sub || superclass[i] >= n_super)
      throw Error(Errc::InvalidArgument, "label out of range", i);
    auto& s = super_of[subclass[i]];
    if (s == static_cast<std::size_t>(-1)) s = superclass[i];
    else if (s != superclass[i]) throw Error(Errc::InvalidArgument, "subclass maps to two superclasses", i);
  }
  for (std::size_t i = 0; i < captions.rows(); ++i)
    if (!(l2_norm(captions.row(i)) > 0.0)) throw Error(Errc::ZeroNormRow, "caption row", i);
}

SyntheticDataset gen_synthetic(std::size_t n_super, std::size_t n_sub_per_super,
                               std::size_t samples_per_sub, std::size_t d, const Separation& sep,
                               std::uint64_t seed) {
  if (n_super < 1 || n_sub_per_super < 1 || samples_per_sub < 1)
    throw Error(Errc::InvalidArgument, "class and sample counts must be >= 1");
  if (d < 2) throw Error(Errc::InvalidArgument, "feature dimension must be >= 2");
  Rng rng(seed);
  const std::size_t n_sub = n_super * n_sub_per_super;

  Matrix super_centers(n_super, d);
  for (double& v : super_centers.values()) v = sep.super_spread * rng.normal();
  Matrix sub_centers(n_sub, d);
  for (std::size_t c = 0; c < n_sub; ++c) {
    const auto parent = super_centers.row(c / n_sub_per_super);
    auto row = sub_centers.row(c);
    for (std::size_t k = 0; k < d; ++k) row[k] = parent[k] + sep.sub_spread * rng.normal();
  }

  SyntheticDataset ds;
  ds.n_super = n_super;
  ds.n_sub = n_sub;
  ds.features = Matrix(n_sub * samples_per_sub, d);
  for (std::size_t c = 0; c < n_sub; ++c) {
    for (std::size_t s = 0; s < samples_per_sub; ++s) {
      const std::size_t i = c * samples_per_sub + s;
      auto row = ds.features.row(i);
      const auto center = sub_centers.row(c);
      for (std::size_t k = 0; k < d; ++k) row[k] = center[k] + sep.within * rng.normal();
      ds.subclass.push_back(c);
      ds.superclass.push_back(c / n_sub_per_super);
    }
  }
  return ds;
}

namespace {

std::vector<double> random_unit(std::size_t e, Rng& rng) {
  std::vector<double> v(e);
  for (double& x : v) x = rng.normal();
  const double n = l2_norm(v);
  for (double& x : v) x /= n;
  return v;
}

// Relative weights of the anchor components.
constexpr double kSharedWeight = 0.6;
constexpr double kSubclassWeight = 0.35;

// Gram-Schmidt against `basis`; leaves v untouched if it would vanish.
void orthogonalize(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
  std::vector<double> w = v;
  for (const auto& b : basis) {
    const double d = dot(w, b);
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= d * b[k];
  }
  const double n = l2_norm(w);
  if (n < 1e-6) return;
  for (std::size_t k = 0; k < w.size(); ++k) v[k] = w[k] / n;
}

}  // namespace

Matrix synth_caption_embeddings(const SyntheticDataset& dataset, std::size_t e,
                                double caption_noise, std::uint64_t seed) {
  if (e < 2) throw Error(Errc::InvalidArgument, "caption dimension must be >= 2");
  Rng rng(seed);
  const auto shared = random_unit(e, rng);
  std::vector<std::vector<double>> super_dir;
  for (std::size_t s = 0; s < dataset.n_super; ++s) super_dir.push_back(random_unit(e, rng));
  // Orthogonal superclass directions keep cross-superclass similarity uniform (when e allows it).
  std::vector<std::vector<double>> basis{shared};
  for (auto& dir : super_dir) {
    if (basis.size() < e) orthogonalize(dir, basis);
    basis.push_back(dir);
  }

  // A subclass belongs to the superclass of its first sample.
  std::vector<std::size_t> super_of(dataset.n_sub, 0);
  for (std::size_t i = dataset.size(); i-- > 0;) super_of[dataset.subclass[i]] = dataset.superclass[i];

  Matrix anchors(dataset.n_sub, e);
  for (std::size_t c = 0; c < dataset.n_sub; ++c) {
    const auto pert = random_unit(e, rng);
    auto row = anchors.row(c);
    for (std::size_t k = 0; k < e; ++k)
      row[k] = kSharedWeight * shared[k] + super_dir[super_of[c]][k] + kSubclassWeight * pert[k];
    const double n = l2_norm(row);
    for (double& x : row) x /= n;
  }

  Matrix out(dataset.size(), e);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto row = out.row(i);
    const auto anchor = anchors.row(dataset.subclass[i]);
    for (std::size_t k = 0; k < e; ++k) row[k] = anchor[k] + caption_noise * rng.normal();
    const double n = l2_norm(row);
    for (double& x : row) x /= n;
  }
  return out;
}

SyntheticDataset subsample_per_class(const SyntheticDataset& dataset, std::size_t k_per_subclass,
                                     std::uint64_t seed) {
  if (k_per_subclass < 1) throw Error(Errc::InvalidArgument, "k_per_subclass must be >= 1");
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> members(dataset.n_sub);
  for (std::size_t i = 0; i < dataset.size(); ++i) members[dataset.subclass[i]].push_back(i);
  std::vector<std::size_t> keep;
  for (auto& m : members) {
    rng.shuffle(std::span<std::size_t>(m));
    keep.insert(keep.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(std::min(k_per_subclass, m.size())));
  }
  std::sort(keep.begin(), keep.end());

  SyntheticDataset out;
  out.n_super = dataset.n_super;
  out.n_sub = dataset.n_sub;
  out.features = Matrix(keep.size(), dataset.features.cols());
  if (!dataset.captions.empty()) out.captions = Matrix(keep.size(), dataset.captions.cols());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const std::size_t i = keep[r];
    std::ranges::copy(dataset.features.row(i), out.features.row(r).begin());
    if (!dataset.captions.empty()) std::ranges::copy(dataset.captions.row(i), out.captions.row(r).begin());
    out.subclass.push_back(dataset.subclass[i]);
    out.superclass.push_back(dataset.superclass[i]);
  }
  return out;
}

namespace {

constexpr std::array<char, 4> kMagic{'X', 'M', 'A', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) buf.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void write_xmat(const std::filesystem::path& path, const Matrix& m) {
  if (m.rows() > UINT32_MAX || m.cols() > UINT32_MAX)
    throw Error(Errc::InvalidArgument, "matrix too large for XMAT");
  std::string buf(kMagic.begin(), kMagic.end());
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(m.rows()));
  put_u32(buf, static_cast<std::uint32_t>(m.cols()));
  buf.reserve(buf.size() + m.size() * 4);
  for (double v : m.values()) put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error(Errc::IoError, "short write to " + path.string());
}

Matrix read_xmat(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());

  if (bytes.size() < 4 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
    throw Error(Errc::BadMagic, path.string());
  if (bytes.size() < 16) throw Error(Errc::TruncatedPayload, "header shorter than 16 bytes");
  const std::uint32_t version = get_u32(p + 4);
  if (version != kVersion) throw Error(Errc::VersionUnsupported, "version " + std::to_string(version));
  const std::uint64_t rows = get_u32(p + 8);
  const std::uint64_t cols = get_u32(p + 12);
  const std::uint64_t expected = rows * cols * 4;
  if (bytes.size() - 16 < expected)
    throw Error(Errc::TruncatedPayload, std::to_string(bytes.size() - 16) + " payload bytes, expected " +
                                            std::to_string(expected));
  if (bytes.size() - 16 > expected)
    throw Error(Errc::TruncatedPayload, "trailing bytes after payload in " + path.string());

  Matrix m(rows, cols);
  for (std::size_t k = 0; k < m.size(); ++k)
    m.values()[k] = static_cast<double>(std::bit_cast<float>(get_u32(p + 16 + 4 * k)));
  return m;
}

namespace {

std::size_t parse_field(std::string_view field, std::size_t line) {
  std::size_t v = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (field.empty() || ec != std::errc() || ptr != end)
    throw Error(Errc::ParseError, "line " + std::to_string(line) + ": '" + std::string(field) +
                                      "' is not a non-negative integer", line);
  return v;
}

}  // namespace

LabelColumns load_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  LabelColumns out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
      if (line != "index,subclass,superclass")
        throw Error(Errc::ParseError, "line 1: expected header 'index,subclass,superclass'", 1);
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos;) {
      fields.push_back(rest.substr(0, pos));
      rest.remove_prefix(pos + 1);
    }
    fields.push_back(rest);
    if (fields.size() != 3)
      throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": expected 3 fields", line_no);
    const std::size_t index = parse_field(fields[0], line_no);
    if (index != out.subclass.size())
      throw Error(Errc::NonContiguousIndex, "line " + std::to_string(line_no) + ": index " +
                                                std::to_string(index) + ", expected " +
                                                std::to_string(out.subclass.size()), line_no);
    out.subclass.push_back(parse_field(fields[1], line_no));
    out.superclass.push_back(parse_field(fields[2], line_no));
  }
  if (line_no == 0) throw Error(Errc::ParseError, "empty labels file", 0);
  return out;
}

void write_labels_csv(const std::filesystem::path& path, std::span<const std::size_t> subclass,
                      std::span<const std::size_t> superclass) {
  if (subclass.size() != superclass.size()) throw Error(Errc::SizeMismatch, "label columns differ in length");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot open " + path.string() + " for writing");
  out << "index,subclass,superclass\n";
  for (std::size_t i = 0; i < subclass.size(); ++i)
    out << i << ',' << subclass[i] << ',' << superclass[i] << '\n';
  if (!out) throw Error(Errc::IoError, "short write to " + path.string());
}

void save_dataset(const std::filesystem::path& dir, const SyntheticDataset& dataset,
                  const std::string& generator_json) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + dir.string() + ": " + ec.message());
  write_xmat(dir / "features.xmat", dataset.features);
  write_xmat(dir / "captions.xmat", dataset.captions);
  write_labels_csv(dir / "labels.csv", dataset.subclass, dataset.superclass);

  nlohmann::ordered_json manifest;
  manifest["format"] = "xclr-dataset";
  manifest["version"] = 1;
  manifest["samples"] = dataset.size();
  manifest["n_super"] = dataset.n_super;
  manifest["n_sub"] = dataset.n_sub;
  manifest["features"] = "features.xmat";
  manifest["captions"] = "captions.xmat";
  manifest["labels"] = "labels.csv";
  manifest["generator"] = nlohmann::ordered_json::parse(generator_json);
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

SyntheticDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw Error(Errc::IoError, "no dataset manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, "dataset manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "xclr-dataset")
    throw Error(Errc::ParseError, "not an xclr dataset manifest");

  SyntheticDataset ds;
  ds.features = read_xmat(dir / manifest.value("features", "features.xmat"));
  if (manifest.contains("captions")) ds.captions = read_xmat(dir / manifest["captions"].get<std::string>());
  auto labels = load_labels_csv(dir / manifest.value("labels", "labels.csv"));
  ds.subclass = std::move(labels.subclass);
  ds.superclass = std::move(labels.superclass);
  std::size_t max_sub = 0, max_super = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    max_sub = std::max(max_sub, ds.subclass[i] + 1);
    max_super = std::max(max_super, ds.superclass[i] + 1);
  }
  ds.n_sub = manifest.value("n_sub", max_sub);
  ds.n_super = manifest.value("n_super", max_super);
  ds.validate();
  return ds;
}

}  // namespace xclr
