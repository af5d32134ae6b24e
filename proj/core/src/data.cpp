#include "dpc/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "dpc/errors.hpp"
#include "dpc/hashing.hpp"
#include "dpc/numerics.hpp"
#include "dpc/rng.hpp"
#include "ini.hpp"
#include "sections.hpp"

namespace dpc {

const char* split_name(Split s) noexcept { return s == Split::base ? "base" : "new"; }

bool SyntheticDataset::is_base(std::size_t label) const {
  return std::binary_search(base_ids.begin(), base_ids.end(), label);
}

std::size_t SyntheticDataset::local_index(std::size_t label) const {
  for (const auto* ids : {&base_ids, &new_ids}) {
    const auto it = std::lower_bound(ids->begin(), ids->end(), label);
    if (it != ids->end() && *it == label) return static_cast<std::size_t>(it - ids->begin());
  }
  throw LabelOutOfRange(fmt::format("class {} is in neither split", label));
}

Matrix SyntheticDataset::split_tokens(Split s) const { return gather_rows(class_tokens, ids(s)); }

std::vector<std::size_t> SyntheticDataset::test_indices(Split s) const {
  const bool want_base = s == Split::base;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (is_base(test[i].label) == want_base) out.push_back(i);
  return out;
}

namespace {

void check_config(const DatasetConfig& c) {
  if (c.n_classes < 4) {
    throw TooFewClasses(fmt::format("need at least 4 classes, got {}", c.n_classes));
  }
  if (c.shots == 0 || c.test_per_class == 0 || c.d_e == 0 || c.d_z == 0 || c.n_patches == 0) {
    throw ConfigError("dataset counts and dims must be positive");
  }
  if (!(c.sigma >= 0.0) || !(c.token_noise >= 0.0) || !(c.modality_gap >= 0.0)) {
    throw ConfigError("dataset noise levels and gap must be non-negative");
  }
  if (!(c.image_distortion >= 0.0 && c.image_distortion <= 1.0)) {
    throw ConfigError(fmt::format("image_distortion {} outside [0, 1]", c.image_distortion));
  }
}

std::vector<Image> draw_images(const Matrix& prototypes, std::size_t per_class,
                               std::size_t n_patches, double sigma, Rng& rng) {
  std::vector<Image> out;
  out.reserve(prototypes.rows() * per_class);
  for (std::size_t cls = 0; cls < prototypes.rows(); ++cls) {
    for (std::size_t k = 0; k < per_class; ++k) {
      Image img{Matrix(n_patches, prototypes.cols()), cls};
      for (std::size_t p = 0; p < n_patches; ++p)
        for (std::size_t j = 0; j < prototypes.cols(); ++j)
          img.patches(p, j) = prototypes(cls, j) + sigma * rng.gaussian();
      out.push_back(std::move(img));
    }
  }
  return out;
}

}  // namespace

SyntheticDataset generate(const DatasetConfig& config) {
  check_config(config);
  const std::size_t n = config.n_classes;
  SyntheticDataset ds;
  ds.config = config;

  Rng latent_rng(config.seed, "data/latents");
  ds.latents = latent_rng.gaussian_matrix(n, config.d_z, 1.0);

  // Projections scaled so that token entries have unit variance.
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(config.d_z));
  Rng proj_rng(config.seed, "data/projections");
  const Matrix a = proj_rng.gaussian_matrix(config.d_e, config.d_z, proj_std);
  const Matrix a_alt = proj_rng.gaussian_matrix(config.d_e, config.d_z, proj_std);
  const double beta = config.image_distortion;
  const Matrix b = a * std::sqrt(1.0 - beta * beta) + a_alt * beta;

  Rng offset_rng(config.seed, "data/offset");
  const Matrix offset = l2_normalize_rows(offset_rng.gaussian_matrix(1, config.d_e, 1.0)) *
                        (config.modality_gap * std::sqrt(static_cast<double>(config.d_e)));

  Rng token_rng(config.seed, "data/tokens");
  ds.class_tokens = matmul_nt(ds.latents, a) + token_rng.gaussian_matrix(n, config.d_e, 1.0) *
                                                   config.token_noise;
  ds.prototypes = add_row(matmul_nt(ds.latents, b), offset);

  Rng split_rng(config.seed, "data/split");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  split_rng.shuffle(std::span<std::size_t>(order));
  const std::size_t n_base = (n + 1) / 2;
  ds.base_ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_base));
  ds.new_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(n_base), order.end());
  std::sort(ds.base_ids.begin(), ds.base_ids.end());
  std::sort(ds.new_ids.begin(), ds.new_ids.end());

  Rng train_rng(config.seed, "data/train");
  ds.train = draw_images(ds.prototypes, config.shots, config.n_patches, config.sigma, train_rng);
  Rng test_rng(config.seed, "data/test");
  ds.test =
      draw_images(ds.prototypes, config.test_per_class, config.n_patches, config.sigma, test_rng);
  return ds;
}

FewShotSplit few_shot_split(const SyntheticDataset& ds) {
  FewShotSplit split;
  split.shots = ds.config.shots;
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    if (ds.is_base(ds.train[i].label)) {
      split.images.push_back(i);
      split.labels.push_back(ds.train[i].label);
    }
  }
  return split;
}

std::vector<std::size_t> train_images_of(const SyntheticDataset& ds, std::size_t label) {
  if (label >= ds.config.n_classes) {
    throw LabelOutOfRange(fmt::format("class {} out of {}", label, ds.config.n_classes));
  }
  std::vector<std::size_t> out(ds.config.shots);
  std::iota(out.begin(), out.end(), label * ds.config.shots);
  return out;
}

Matrix patch_sums(const std::vector<Image>& images, const std::vector<std::size_t>& indices) {
  if (indices.empty()) return {};
  Matrix out(indices.size(), images[indices.front()].patches.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const Matrix s = sum_rows(images[indices[r]].patches);
    std::copy(s.values().begin(), s.values().end(), out.row(r).begin());
  }
  return out;
}

std::size_t suggested_top_k(std::size_t n_base, std::size_t b) {
  if (b == 0 || n_base == 0) return 0;
  const std::size_t k = (n_base - 1) / b;
  return k >= 2 ? k : 0;
}

void validate_batch_config(std::size_t n_base, std::size_t b, std::size_t k) {
  if (b < 1) throw ConfigError("batch size must be at least 1");
  if (k < 2) throw ConfigError("top-k must be at least 2");
  if (n_base >= 1 && b * k <= n_base - 1) return;
  throw BatchExceedsBaseClasses(n_base, b, k, suggested_top_k(n_base, b));
}

std::string dataset_checksum(const SyntheticDataset& ds) {
  std::vector<double> head;
  const auto take = [&head](std::span<const double> values) {
    const std::size_t n = std::min<std::size_t>(100, values.size());
    head.insert(head.end(), values.begin(), values.begin() + static_cast<std::ptrdiff_t>(n));
  };
  take(ds.class_tokens.values());
  std::vector<double> train, test;
  for (const Image& img : ds.train) {
    train.insert(train.end(), img.patches.values().begin(), img.patches.values().end());
    if (train.size() >= 100) break;
  }
  for (const Image& img : ds.test) {
    test.insert(test.end(), img.patches.values().begin(), img.patches.values().end());
    if (test.size() >= 100) break;
  }
  take(train);
  take(test);
  return sha256_hex(std::span<const double>(head));
}

void save_dataset_file(const std::filesystem::path& path, const SyntheticDataset& ds) {
  const DatasetConfig& c = ds.config;
  ini::Tree tree;
  tree.put("dataset.n_classes", c.n_classes);
  tree.put("dataset.shots", c.shots);
  tree.put("dataset.test_per_class", c.test_per_class);
  tree.put("dataset.d_e", c.d_e);
  tree.put("dataset.d_z", c.d_z);
  tree.put("dataset.n_patches", c.n_patches);
  tree.put("dataset.sigma", ini::format_double(c.sigma));
  tree.put("dataset.token_noise", ini::format_double(c.token_noise));
  tree.put("dataset.image_distortion", ini::format_double(c.image_distortion));
  tree.put("dataset.modality_gap", ini::format_double(c.modality_gap));
  tree.put("dataset.seed", c.seed);
  std::string base, fresh;
  for (std::size_t id : ds.base_ids) base += (base.empty() ? "" : ",") + std::to_string(id);
  for (std::size_t id : ds.new_ids) fresh += (fresh.empty() ? "" : ",") + std::to_string(id);
  tree.put("split.base_ids", base);
  tree.put("split.new_ids", fresh);
  tree.put("checksum.sha256", dataset_checksum(ds));
  ini::write_file(path, tree);
}

namespace {

std::vector<std::size_t> parse_ids(const std::string& text) {
  std::vector<std::size_t> ids;
  std::string_view rest = text;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    ids.push_back(ini::parse_u64(rest.substr(0, comma), "split ids"));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return ids;
}

}  // namespace

DatasetConfig read_dataset_section(const ini::Tree& s) {
  ini::require_known_keys(s, "dataset",
                          {"n_classes", "shots", "test_per_class", "d_e", "d_z", "n_patches",
                           "sigma", "token_noise", "image_distortion", "modality_gap", "seed"});
  DatasetConfig c;
  ini::read(s, "dataset", "n_classes", c.n_classes);
  ini::read(s, "dataset", "shots", c.shots);
  ini::read(s, "dataset", "test_per_class", c.test_per_class);
  ini::read(s, "dataset", "d_e", c.d_e);
  ini::read(s, "dataset", "d_z", c.d_z);
  ini::read(s, "dataset", "n_patches", c.n_patches);
  ini::read(s, "dataset", "sigma", c.sigma);
  ini::read(s, "dataset", "token_noise", c.token_noise);
  ini::read(s, "dataset", "image_distortion", c.image_distortion);
  ini::read(s, "dataset", "modality_gap", c.modality_gap);
  ini::read(s, "dataset", "seed", c.seed);
  return c;
}

SyntheticDataset load_dataset_file(const std::filesystem::path& path) {
  const ini::Tree tree = ini::read_file(path);
  ini::require_known_sections(tree, {"dataset", "split", "checksum"});
  SyntheticDataset ds = generate(read_dataset_section(ini::section(tree, "dataset")));
  const ini::Tree& split = ini::section(tree, "split");
  ini::require_known_keys(split, "split", {"base_ids", "new_ids"});
  if (parse_ids(ini::get_string(split, "base_ids", "split")) != ds.base_ids ||
      parse_ids(ini::get_string(split, "new_ids", "split")) != ds.new_ids) {
    throw ConfigError(fmt::format("{}: stored base/new split does not match the generator",
                                  path.string()));
  }
  const ini::Tree& sum = ini::section(tree, "checksum");
  ini::require_known_keys(sum, "checksum", {"sha256"});
  const std::string expected = ini::get_string(sum, "sha256", "checksum");
  if (expected != dataset_checksum(ds)) {
    throw ConfigError(fmt::format("{}: checksum mismatch after regeneration", path.string()));
  }
  return ds;
}

}  // namespace dpc
