#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "oracles.hpp"
#include "xclr/data.hpp"

using namespace xclr;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("xclr_test_" + name);
  fs::remove_all(p);
  return p;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_text(const fs::path& p, const std::string& s) { write_bytes(p, s); }

struct CaptionMeans {
  double same_sub = 0, same_super = 0, cross = 0, all = 0;
};

CaptionMeans caption_means(const SyntheticDataset& ds, const Matrix& caps) {
  double s[4] = {0, 0, 0, 0};
  std::size_t n[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < ds.size(); i += 2)
    for (std::size_t j = 0; j < ds.size(); j += 2) {
      if (i == j) continue;
      const double v = oracle::naive_cosine(caps.row(i), caps.row(j));
      const int bucket = ds.subclass[i] == ds.subclass[j] ? 0 : ds.superclass[i] == ds.superclass[j] ? 1 : 2;
      s[bucket] += v;
      ++n[bucket];
      s[3] += v;
      ++n[3];
    }
  return {s[0] / n[0], s[1] / n[1], s[2] / n[2], s[3] / n[3]};
}

}  // namespace

TEST_CASE("gen_synthetic layout") {
  const SyntheticDataset ds = gen_synthetic(2, 3, 4, 5, {}, 1);
  CHECK(ds.size() == 24);
  CHECK(ds.n_sub == 6);
  CHECK(ds.features.cols() == 5);
  CHECK(ds.subclass[5] == 1);
  CHECK(ds.superclass[13] == 1);  // subclass 3 -> superclass 1
  CHECK_NOTHROW(ds.validate());
  const SyntheticDataset again = gen_synthetic(2, 3, 4, 5, {}, 1);
  CHECK(again.features == ds.features);
  CHECK(code_of([] { gen_synthetic(0, 1, 1, 2, {}, 1); }) == Errc::InvalidArgument);
}

TEST_CASE("zero within-spread collapses each subclass") {
  const SyntheticDataset ds = gen_synthetic(2, 2, 5, 4, {0.0, 0.5, 0.5}, 3);
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t k = 0; k < 4; ++k) CHECK(ds.features(i, k) == ds.features(0, k));
}

TEST_CASE("default subclass centroids cluster by superclass") {
  double frac = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const SyntheticDataset ds = gen_synthetic(4, 3, 200, 32, {}, seed);
    Matrix c(12, 32);
    for (std::size_t i = 0; i < ds.size(); ++i)
      for (std::size_t k = 0; k < 32; ++k) c(ds.subclass[i], k) += ds.features(i, k) / 200.0;
    auto dist = [&](std::size_t a, std::size_t b) {
      double t = 0;
      for (std::size_t k = 0; k < 32; ++k) t += (c(a, k) - c(b, k)) * (c(a, k) - c(b, k));
      return t;
    };
    std::size_t ok = 0, total = 0;
    for (std::size_t a = 0; a < 12; ++a)
      for (std::size_t b = 0; b < 12; ++b)
        if (a != b && a / 3 == b / 3)
          for (std::size_t x = 0; x < 12; ++x)
            if (x / 3 != a / 3) {
              ++total;
              ok += dist(a, b) < dist(a, x);
            }
    frac += static_cast<double>(ok) / static_cast<double>(total) / 3.0;
  }
  CHECK(frac >= 0.95);
}

TEST_CASE("caption embeddings") {
  const SyntheticDataset ds = gen_synthetic(4, 3, 40, 8, {}, 1);
  SUBCASE("no noise gives identical captions per subclass") {
    const Matrix caps = synth_caption_embeddings(ds, 16, 0.0, 2);
    for (std::size_t i = 1; i < 40; ++i)
      CHECK(std::abs(oracle::naive_cosine(caps.row(0), caps.row(i)) - 1.0) < 1e-12);
  }
  SUBCASE("default calibration") {
    const Matrix caps = synth_caption_embeddings(ds, 16, 0.1, 2);
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(std::abs(l2_norm(caps.row(i)) - 1.0) < 1e-9);
    const CaptionMeans m = caption_means(ds, caps);
    CHECK(m.same_sub > m.same_super);
    CHECK(m.same_super - m.cross >= 0.1);
    CHECK(m.all >= 0.25);
    CHECK(m.all <= 0.45);
  }
  CHECK(code_of([&] { synth_caption_embeddings(ds, 1, 0.1, 1); }) == Errc::InvalidArgument);
}

TEST_CASE("subsample_per_class") {
  const SyntheticDataset ds = gen_synthetic(2, 2, 10, 3, {}, 1);
  const SyntheticDataset sub = subsample_per_class(ds, 3, 4);
  CHECK(sub.size() == 12);
  for (std::size_t c = 0; c < 4; ++c) CHECK(std::count(sub.subclass.begin(), sub.subclass.end(), c) == 3);
  CHECK(std::is_sorted(sub.subclass.begin(), sub.subclass.end()));
  CHECK(subsample_per_class(ds, 50, 4).size() == 40);
}

TEST_CASE("xmat round trip is float exact") {
  const fs::path p = scratch("m.xmat");
  Rng rng(9);
  const Matrix m = oracle::random_matrix(5, 3, rng);
  write_xmat(p, m);
  const Matrix back = read_xmat(p);
  REQUIRE(back.rows() == 5);
  REQUIRE(back.cols() == 3);
  for (std::size_t i = 0; i < m.size(); ++i)
    CHECK(back.values()[i] == static_cast<double>(static_cast<float>(m.values()[i])));
  write_xmat(p, back);
  CHECK(read_xmat(p) == back);

  const std::string bytes = read_bytes(p);
  CHECK(bytes.size() == 16 + 15 * 4);
  CHECK(bytes.substr(0, 4) == "XMAT");
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 5);
  CHECK(bytes[12] == 3);
  fs::remove(p);
}

TEST_CASE("xmat rejects malformed files") {
  const fs::path p = scratch("bad.xmat");
  write_xmat(p, Matrix{{1, 2}, {3, 4}});
  const std::string good = read_bytes(p);

  write_bytes(p, "XMAX" + good.substr(4));
  CHECK(code_of([&] { read_xmat(p); }) == Errc::BadMagic);
  write_bytes(p, good.substr(0, good.size() - 1));
  CHECK(code_of([&] { read_xmat(p); }) == Errc::TruncatedPayload);
  write_bytes(p, good.substr(0, 10));
  CHECK(code_of([&] { read_xmat(p); }) == Errc::TruncatedPayload);
  write_bytes(p, good + "x");
  CHECK(code_of([&] { read_xmat(p); }) == Errc::TruncatedPayload);
  std::string v2 = good;
  v2[4] = 2;
  write_bytes(p, v2);
  CHECK(code_of([&] { read_xmat(p); }) == Errc::VersionUnsupported);
  CHECK(code_of([&] { read_xmat(p.string() + ".missing"); }) == Errc::IoError);
  fs::remove(p);
}

TEST_CASE("labels csv") {
  const fs::path p = scratch("labels.csv");
  const std::vector<std::size_t> sub{0, 1, 2}, sup{0, 0, 1};
  write_labels_csv(p, sub, sup);
  CHECK(read_bytes(p) == "index,subclass,superclass\n0,0,0\n1,1,0\n2,2,1\n");
  const LabelColumns back = load_labels_csv(p);
  CHECK(back.subclass == sub);
  CHECK(back.superclass == sup);

  write_text(p, "index,subclass,superclass\n0,0,0\n2,1,0\n");
  CHECK(code_of([&] { load_labels_csv(p); }) == Errc::NonContiguousIndex);
  write_text(p, "index,subclass,superclass\n0,a,0\n");
  CHECK(code_of([&] { load_labels_csv(p); }) == Errc::ParseError);
  write_text(p, "idx,sub,super\n0,0,0\n");
  CHECK(code_of([&] { load_labels_csv(p); }) == Errc::ParseError);
  fs::remove(p);
}

TEST_CASE("dataset directory round trip") {
  const fs::path dir = scratch("ds");
  SyntheticDataset ds = gen_synthetic(2, 2, 3, 4, {}, 1);
  ds.captions = synth_caption_embeddings(ds, 5, 0.1, 2);
  save_dataset(dir, ds, "{\"seed\":1}");
  CHECK(fs::exists(dir / "features.xmat"));
  CHECK(fs::exists(dir / "captions.xmat"));
  CHECK(fs::exists(dir / "labels.csv"));
  CHECK(fs::exists(dir / "manifest.json"));
  const SyntheticDataset back = load_dataset(dir);
  CHECK(back.subclass == ds.subclass);
  CHECK(back.superclass == ds.superclass);
  CHECK(back.n_super == 2);
  CHECK(back.n_sub == 4);
  CHECK(back.features.rows() == 12);
  CHECK(back.captions.cols() == 5);
  fs::remove_all(dir);
}
