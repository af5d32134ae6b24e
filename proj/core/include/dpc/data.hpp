#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dpc/matrix.hpp"

// Synthetic base/new benchmark.
//
// Class i has a latent z_i ~ N(0, I). Its class token is c_i = A z_i + 0.1 n
// and its image prototype is m_i = B z_i + g u, where u is a fixed unit
// direction shared by all classes (the image-side offset) and g its length.
// Every image patch is m_i + sigma n. A and B are fixed per seed; B is a
// perturbed copy of A so both modalities see the same latent geometry.

namespace dpc {

struct DatasetConfig {
  std::size_t n_classes = 128;
  std::size_t shots = 16;
  std::size_t test_per_class = 20;
  std::size_t d_e = 16;
  std::size_t d_z = 8;
  std::size_t n_patches = 4;
  double sigma = 0.6;
  double token_noise = 0.3;
  // B = sqrt(1 - beta^2) A + beta A' with A' independent of A.
  double image_distortion = 0.0;
  // Length of the shared image offset relative to sqrt(d_e).
  double modality_gap = 0.25;
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

enum class Split { base, new_classes };

const char* split_name(Split s) noexcept;

struct Image {
  Matrix patches;  // n_patches x d_e
  std::size_t label = 0;

  friend bool operator==(const Image&, const Image&) = default;
};

struct SyntheticDataset {
  DatasetConfig config;
  Matrix latents;       // n x d_z
  Matrix class_tokens;  // n x d_e
  Matrix prototypes;    // n x d_e
  std::vector<Image> train;  // shots per class, class-major
  std::vector<Image> test;   // test_per_class per class, class-major
  std::vector<std::size_t> base_ids;  // ascending
  std::vector<std::size_t> new_ids;   // ascending

  std::size_t n_base() const noexcept { return base_ids.size(); }
  const std::vector<std::size_t>& ids(Split s) const noexcept {
    return s == Split::base ? base_ids : new_ids;
  }
  bool is_base(std::size_t label) const;
  /// Position of a class within its split's id list.
  std::size_t local_index(std::size_t label) const;
  /// Class tokens of one split, rows in ids(s) order.
  Matrix split_tokens(Split s) const;
  /// Indices into `test` whose label belongs to split s, in order.
  std::vector<std::size_t> test_indices(Split s) const;

  friend bool operator==(const SyntheticDataset&, const SyntheticDataset&) = default;
};

/// Few-shot training pairs; every entry indexes `train` of a base class.
struct FewShotSplit {
  std::size_t shots = 0;
  std::vector<std::size_t> images;  // indices into SyntheticDataset::train
  std::vector<std::size_t> labels;  // global class ids
};

/// Throws TooFewClasses for n_classes < 4 and ConfigError for other bad values.
SyntheticDataset generate(const DatasetConfig& config);

FewShotSplit few_shot_split(const SyntheticDataset& ds);

/// Train-image indices of one class.
std::vector<std::size_t> train_images_of(const SyntheticDataset& ds, std::size_t label);

/// Column sums of the patches of the listed images, one row per image.
Matrix patch_sums(const std::vector<Image>& images, const std::vector<std::size_t>& indices);

/// Accepts iff b * K <= n_base - 1; otherwise throws BatchExceedsBaseClasses
/// carrying floor((n_base - 1) / b) (0 when that is below 2).
void validate_batch_config(std::size_t n_base, std::size_t b, std::size_t k);
/// Largest admissible K for batch size b, or 0 when that is below 2.
std::size_t suggested_top_k(std::size_t n_base, std::size_t b);

/// SHA-256 over the first 100 values of the class-token, train and test tables.
std::string dataset_checksum(const SyntheticDataset& ds);

/// Dataset file: generator parameters, seed and checksum.
void save_dataset_file(const std::filesystem::path& path, const SyntheticDataset& ds);
/// Regenerates the dataset and verifies its checksum (ConfigError on mismatch).
SyntheticDataset load_dataset_file(const std::filesystem::path& path);

}  // namespace dpc
