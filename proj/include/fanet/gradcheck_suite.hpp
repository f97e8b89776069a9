#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace fanet {

struct GradcheckOutcome {
  std::string op;
  double max_rel_error = 0.0;
  bool passed = false;
  std::size_t instances = 0;
};

inline constexpr double kGradcheckTolerance = 1e-4;
inline constexpr std::size_t kGradcheckInstances = 20;

/// Names of every check, in execution order.
std::vector<std::string> gradcheck_ops();

/// Central-difference checks over every differentiable op plus the attention
/// block and backbone, each on kGradcheckInstances random instances, and the
/// full model (2x16x16x3 input, C=8, r=4, k=0.8, K=3) at one instance. `corrupt_op` (test hook)
/// adds an untracked term to that op's loss so its analytic gradient is
/// wrong.
std::vector<GradcheckOutcome> run_gradcheck_suite(std::uint64_t seed,
                                                  const std::string& corrupt_op = "",
                                                  double tolerance = kGradcheckTolerance);

}  // namespace fanet
