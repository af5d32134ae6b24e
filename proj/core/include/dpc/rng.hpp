#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

#include "dpc/matrix.hpp"

// Seeded random streams.
//
// The generator is xoshiro256** whose 256-bit state is filled by four
// successive splitmix64 outputs of the seed. Derived quantities:
//   uniform01()        = (next() >> 11) * 2^-53
//   uniform_below(n)   = draw x = next() until x >= (2^64 mod n), return x mod n
//   gaussian()         = Box-Muller; u1 = 1 - uniform01(), u2 = uniform01(),
//                        returns sqrt(-2 ln u1) * cos(2 pi u2). One pair of
//                        uniforms per normal, the sine half is discarded.
//   shuffle(v)         = Fisher-Yates from the back: for i = n-1 .. 1,
//                        swap(v[i], v[uniform_below(i + 1)])
// Labeled streams: seed = splitmix64(root ^ splitmix64(fnv1a64(label))).

namespace dpc {

std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t fnv1a64(std::string_view text) noexcept;
/// Seed for the stream named `label` under `root`.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label) noexcept;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept;
  Rng(std::uint64_t root, std::string_view label) noexcept : Rng(derive_seed(root, label)) {}

  std::uint64_t next() noexcept;
  double uniform01() noexcept;
  std::uint64_t uniform_below(std::uint64_t n);
  double gaussian() noexcept;

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

  /// rows x cols matrix of N(0, stddev^2) entries, filled row-major.
  Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev);

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace dpc
