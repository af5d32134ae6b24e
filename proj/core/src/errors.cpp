#include "dpc/errors.hpp"

#include <fmt/format.h>

namespace dpc {

DivergedLoss::DivergedLoss(const std::string& stage, std::size_t epoch, std::size_t step,
                           double loss)
    : Error(fmt::format("{}: loss diverged to {} at epoch {} step {}", stage, loss, epoch, step)),
      stage_(stage),
      epoch_(epoch),
      step_(step) {}

BatchExceedsBaseClasses::BatchExceedsBaseClasses(std::size_t n_base, std::size_t batch,
                                                 std::size_t top_k, std::size_t suggested_k)
    : Error(fmt::format(
          "batch size {} with top-k {} needs b*K <= {} (base classes - 1); largest admissible "
          "K for this batch size is {}",
          batch, top_k, n_base == 0 ? 0 : n_base - 1, suggested_k)),
      suggested_k_(suggested_k) {}

}  // namespace dpc
