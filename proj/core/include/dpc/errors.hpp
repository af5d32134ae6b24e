#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dpc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class ZeroVector : public Error {
 public:
  using Error::Error;
};

class NonPositiveTemperature : public Error {
 public:
  using Error::Error;
};

class TapeEmpty : public Error {
 public:
  using Error::Error;
};

class OmegaOutOfRange : public Error {
 public:
  using Error::Error;
};

class OmegaZero : public Error {
 public:
  using Error::Error;
};

class TooFewClasses : public Error {
 public:
  using Error::Error;
};

class LabelOutOfRange : public Error {
 public:
  using Error::Error;
};

class DegenerateBatch : public Error {
 public:
  using Error::Error;
};

class EmptySplit : public Error {
 public:
  using Error::Error;
};

class BothZero : public Error {
 public:
  using Error::Error;
};

/// Configuration, dataset or checkpoint content that cannot be used.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Loss became NaN or infinite during training.
class DivergedLoss : public Error {
 public:
  DivergedLoss(const std::string& stage, std::size_t epoch, std::size_t step, double loss);

  const std::string& stage() const noexcept { return stage_; }
  std::size_t epoch() const noexcept { return epoch_; }  // 1-based
  std::size_t step() const noexcept { return step_; }

 private:
  std::string stage_;
  std::size_t epoch_;
  std::size_t step_;
};

/// b * K does not fit below the number of base classes. Carries the largest
/// admissible K for the requested batch size (0 when none exists).
class BatchExceedsBaseClasses : public Error {
 public:
  BatchExceedsBaseClasses(std::size_t n_base, std::size_t batch, std::size_t top_k,
                          std::size_t suggested_k);

  std::size_t suggested_k() const noexcept { return suggested_k_; }

 private:
  std::size_t suggested_k_;
};

class GradCheckFailed : public Error {
 public:
  using Error::Error;
};

}  // namespace dpc
