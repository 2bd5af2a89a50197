#pragma once

#include <string>
#include <utility>
#include <vector>

namespace esn {

// Runs grad_check in double precision over every differentiable operation
// and loss, returning (name, max relative error) pairs. All entries are
// expected to come in at or below `pass_threshold`.
std::vector<std::pair<std::string, double>> gradient_suite();

constexpr double kGradSuiteThreshold = 1e-4;

}  // namespace esn
