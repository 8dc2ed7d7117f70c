#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "itrolab/policy.hpp"

namespace itrolab {

inline constexpr int kCheckpointFormatVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape a caller expects a loaded checkpoint to have.
struct PolicyShape {
  Arch arch = Arch::tabular;
  TaskFamilySpec task;
  int context_window = 3;

  std::size_t num_params() const;
};

// `key = value` text; params are space-separated %.17g decimals, so a
// save/load round trip reproduces every bit.
std::string checkpoint_to_text(const Policy& policy);
Policy checkpoint_from_text(std::string_view text,
                            const std::optional<PolicyShape>& expected = std::nullopt);

void save_checkpoint(const Policy& policy, const std::filesystem::path& path);
Policy load_checkpoint(const std::filesystem::path& path,
                       const std::optional<PolicyShape>& expected = std::nullopt);

}  // namespace itrolab
