#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xclr/numerics.hpp"

namespace xclr {

/// Subclass s*n_sub_per_super + k belongs to superclass s.
struct SyntheticDataset {
  Matrix features;                    // n×d
  std::vector<std::size_t> subclass;  // per sample
  std::vector<std::size_t> superclass;
  Matrix captions;                    // n×e, may be empty before captions are attached
  std::size_t n_super = 0;
  std::size_t n_sub = 0;              // total subclass count

  std::size_t size() const noexcept { return subclass.size(); }
  /// Throws InvalidArgument when labels are out of range or the sub->super map is not a function.
  void validate() const;
};

/// Standard deviations of the three Gaussian levels.
struct Separation {
  double within = 1.0;        // sample around its subclass center
  double sub_spread = 0.45;   // subclass center around its superclass center
  double super_spread = 0.45; // superclass center around the origin
};

SyntheticDataset gen_synthetic(std::size_t n_super, std::size_t n_sub_per_super,
                               std::size_t samples_per_sub, std::size_t d, const Separation& sep,
                               std::uint64_t seed);

/// Unit caption vectors: a direction shared by every caption, one per superclass and a
/// perturbation per subclass form each subclass anchor; samples add Gaussian noise of scale
/// caption_noise to their anchor before normalizing.
Matrix synth_caption_embeddings(const SyntheticDataset& dataset, std::size_t e,
                                double caption_noise, std::uint64_t seed);

/// Uniformly keeps min(k, available) samples of every subclass, in original order.
SyntheticDataset subsample_per_class(const SyntheticDataset& dataset, std::size_t k_per_subclass,
                                     std::uint64_t seed);

// XMAT: "XMAT", u32 version = 1, u32 rows, u32 cols, rows*cols f32; all little-endian.
void write_xmat(const std::filesystem::path& path, const Matrix& m);
Matrix read_xmat(const std::filesystem::path& path);

struct LabelColumns {
  std::vector<std::size_t> subclass;
  std::vector<std::size_t> superclass;
};

/// Header `index,subclass,superclass`; index runs 0..n-1 without gaps.
LabelColumns load_labels_csv(const std::filesystem::path& path);
void write_labels_csv(const std::filesystem::path& path, std::span<const std::size_t> subclass,
                      std::span<const std::size_t> superclass);

/// features.xmat, captions.xmat, labels.csv and manifest.json inside `dir`.
void save_dataset(const std::filesystem::path& dir, const SyntheticDataset& dataset,
                  const std::string& generator_json = "{}");
SyntheticDataset load_dataset(const std::filesystem::path& dir);

}  // namespace xclr
