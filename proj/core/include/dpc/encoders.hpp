#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dpc/autodiff.hpp"
#include "dpc/matrix.hpp"

// Frozen toy dual encoders. Both towers are a two-layer tanh MLP over the
// mean of their input tokens:
//   text:  g = W2 tanh(W1 mean([prompt rows; class token]))
//   image: f = U2 tanh(U1 mean([visual prompt rows; patch rows]))
// Mean pooling makes both towers blind to token order.

namespace dpc {

struct EncoderConfig {
  std::size_t d_e = 16;
  std::size_t d_h = 32;
  std::size_t d = 8;
  std::uint64_t seed = 0;
  // Correlation between the image and text tower weights. 0 draws the image
  // tower independently; 1 makes U1 = W1 and U2 = W2.
  double tower_coupling = 1.0;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

class FrozenEncoders {
 public:
  /// Entries are N(0, 1/fan_in) drawn from the "encoders/text" and
  /// "encoders/image" streams of config.seed.
  explicit FrozenEncoders(const EncoderConfig& config);

  const EncoderConfig& config() const noexcept { return config_; }
  const Matrix& w1() const noexcept { return w1_; }
  const Matrix& w2() const noexcept { return w2_; }
  const Matrix& u1() const noexcept { return u1_; }
  const Matrix& u2() const noexcept { return u2_; }

  friend bool operator==(const FrozenEncoders&, const FrozenEncoders&) = default;

 private:
  EncoderConfig config_;
  Matrix w1_, w2_, u1_, u2_;
};

/// g([prompt; class_token]) for a single class.
std::vector<double> encode_text(const FrozenEncoders& enc, const Matrix& prompt,
                                std::span<const double> class_token);
/// Row i is the text feature of class_tokens row i under the shared prompt.
Matrix encode_texts(const FrozenEncoders& enc, const Matrix& prompt, const Matrix& class_tokens);

/// f([visual_prompt; patches]); without a visual prompt only patches are pooled.
std::vector<double> encode_image(const FrozenEncoders& enc, const Matrix* visual_prompt,
                                 const Matrix& patches);

/// Batched image path over pre-summed patches: row i of patch_sums is the
/// column sum of image i's n_patches patch rows.
Matrix encode_images(const FrozenEncoders& enc, const Matrix* visual_prompt,
                     const Matrix& patch_sums, std::size_t n_patches);

/// cosine(g(prompt, class_tokens_i), image_feature) / tau for every class.
std::vector<double> class_logits(const FrozenEncoders& enc, const Matrix& text_prompt,
                                 const Matrix& class_tokens, std::span<const double> image_feature,
                                 double tau);

/// Row-normalised image features against row-normalised text features,
/// divided by tau. Result is (images x classes).
Matrix similarity_logits(const Matrix& image_feats, const Matrix& text_feats, double tau);

namespace ad {

/// Taped twin of encode_texts; bit-identical forward values.
Var encode_texts(Tape& tape, const FrozenEncoders& enc, Var prompt, const Matrix& class_tokens);
/// Taped twin of encode_images with a learnable visual prompt.
Var encode_images(Tape& tape, const FrozenEncoders& enc, Var visual_prompt,
                  const Matrix& patch_sums, std::size_t n_patches);

}  // namespace ad

}  // namespace dpc
