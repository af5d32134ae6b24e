#include "dpc/encoders.hpp"

#include <cmath>

#include <fmt/format.h>

#include "dpc/errors.hpp"
#include "dpc/numerics.hpp"
#include "dpc/rng.hpp"

namespace dpc {

namespace {

Matrix coupled(const Matrix& base, Rng& rng, double c, double stddev) {
  const Matrix fresh = rng.gaussian_matrix(base.rows(), base.cols(), stddev);
  if (c >= 1.0) return base;
  const double keep = std::sqrt(1.0 - c * c);
  Matrix out(base.rows(), base.cols());
  for (std::size_t i = 0; i < out.size(); ++i)
    out.values()[i] = c * base.values()[i] + keep * fresh.values()[i];
  return out;
}

void check_width(const Matrix& m, std::size_t d_e, const char* what) {
  if (m.cols() != d_e) {
    throw DimensionMismatch(fmt::format("{}: width {} but d_e = {}", what, m.cols(), d_e));
  }
}

Matrix tower(const Matrix& pooled, const Matrix& l1, const Matrix& l2) {
  return matmul_nt(dpc::tanh(matmul_nt(pooled, l1)), l2);
}

}  // namespace

FrozenEncoders::FrozenEncoders(const EncoderConfig& config) : config_(config) {
  if (config.d_e == 0 || config.d_h == 0 || config.d == 0) {
    throw ConfigError("encoder dims must be positive");
  }
  if (!(config.tower_coupling >= 0.0 && config.tower_coupling <= 1.0)) {
    throw ConfigError(fmt::format("tower_coupling {} outside [0, 1]", config.tower_coupling));
  }
  const double s1 = 1.0 / std::sqrt(static_cast<double>(config.d_e));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(config.d_h));
  Rng text(config.seed, "encoders/text");
  w1_ = text.gaussian_matrix(config.d_h, config.d_e, s1);
  w2_ = text.gaussian_matrix(config.d, config.d_h, s2);
  Rng image(config.seed, "encoders/image");
  u1_ = coupled(w1_, image, config.tower_coupling, s1);
  u2_ = coupled(w2_, image, config.tower_coupling, s2);
}

Matrix encode_texts(const FrozenEncoders& enc, const Matrix& prompt, const Matrix& class_tokens) {
  const std::size_t d_e = enc.config().d_e;
  if (prompt.rows() == 0) throw DimensionMismatch("encode_text: prompt needs at least one row");
  check_width(prompt, d_e, "encode_text prompt");
  check_width(class_tokens, d_e, "encode_text class tokens");
  const double inv = 1.0 / static_cast<double>(prompt.rows() + 1);
  return tower(add_row(class_tokens, sum_rows(prompt)) * inv, enc.w1(), enc.w2());
}

std::vector<double> encode_text(const FrozenEncoders& enc, const Matrix& prompt,
                                std::span<const double> class_token) {
  const Matrix out = encode_texts(enc, prompt, Matrix::row_vector(class_token));
  return {out.values().begin(), out.values().end()};
}

Matrix encode_images(const FrozenEncoders& enc, const Matrix* visual_prompt,
                     const Matrix& patch_sums, std::size_t n_patches) {
  const std::size_t d_e = enc.config().d_e;
  if (n_patches == 0) throw DimensionMismatch("encode_image: no patches");
  check_width(patch_sums, d_e, "encode_image patches");
  if (visual_prompt == nullptr || visual_prompt->rows() == 0) {
    return tower(patch_sums * (1.0 / static_cast<double>(n_patches)), enc.u1(), enc.u2());
  }
  check_width(*visual_prompt, d_e, "encode_image visual prompt");
  const double inv = 1.0 / static_cast<double>(visual_prompt->rows() + n_patches);
  return tower(add_row(patch_sums, sum_rows(*visual_prompt)) * inv, enc.u1(), enc.u2());
}

std::vector<double> encode_image(const FrozenEncoders& enc, const Matrix* visual_prompt,
                                 const Matrix& patches) {
  if (patches.rows() == 0) throw DimensionMismatch("encode_image: no patches");
  const Matrix out = encode_images(enc, visual_prompt, sum_rows(patches), patches.rows());
  return {out.values().begin(), out.values().end()};
}

std::vector<double> class_logits(const FrozenEncoders& enc, const Matrix& text_prompt,
                                 const Matrix& class_tokens, std::span<const double> image_feature,
                                 double tau) {
  if (!(tau > 0.0)) throw NonPositiveTemperature(fmt::format("tau must be > 0, got {}", tau));
  const Matrix text = encode_texts(enc, text_prompt, class_tokens);
  std::vector<double> out(text.rows());
  for (std::size_t i = 0; i < text.rows(); ++i)
    out[i] = cosine_sim(text.row(i), image_feature) / tau;
  return out;
}

Matrix similarity_logits(const Matrix& image_feats, const Matrix& text_feats, double tau) {
  if (!(tau > 0.0)) throw NonPositiveTemperature(fmt::format("tau must be > 0, got {}", tau));
  return matmul_nt(l2_normalize_rows(image_feats), l2_normalize_rows(text_feats)) * (1.0 / tau);
}

namespace ad {

namespace {

Var tower(Tape& tape, Var pooled, const Matrix& l1, const Matrix& l2) {
  return matmul_nt(tanh(matmul_nt(pooled, tape.constant(l1))), tape.constant(l2));
}

}  // namespace

Var encode_texts(Tape& tape, const FrozenEncoders& enc, Var prompt, const Matrix& class_tokens) {
  const std::size_t d_e = enc.config().d_e;
  if (prompt.rows() == 0) throw DimensionMismatch("encode_text: prompt needs at least one row");
  check_width(prompt.value(), d_e, "encode_text prompt");
  check_width(class_tokens, d_e, "encode_text class tokens");
  const double inv = 1.0 / static_cast<double>(prompt.rows() + 1);
  Var pooled = scale(add_row(tape.constant(class_tokens), sum_rows(prompt)), inv);
  return tower(tape, pooled, enc.w1(), enc.w2());
}

Var encode_images(Tape& tape, const FrozenEncoders& enc, Var visual_prompt,
                  const Matrix& patch_sums, std::size_t n_patches) {
  const std::size_t d_e = enc.config().d_e;
  if (n_patches == 0) throw DimensionMismatch("encode_image: no patches");
  check_width(patch_sums, d_e, "encode_image patches");
  check_width(visual_prompt.value(), d_e, "encode_image visual prompt");
  const double inv = 1.0 / static_cast<double>(visual_prompt.rows() + n_patches);
  Var pooled = scale(add_row(tape.constant(patch_sums), sum_rows(visual_prompt)), inv);
  return tower(tape, pooled, enc.u1(), enc.u2());
}

}  // namespace ad

}  // namespace dpc
