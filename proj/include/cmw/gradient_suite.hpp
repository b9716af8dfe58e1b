#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cmw {

struct GradCheckResult {
    std::string name;
    double max_rel_error;
    long coordinates;
};

/// Double-precision finite-difference checks of every differentiable op
/// and of the full five-scale loss through a width-1 network at 64 x 64.
std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed = 0, bool include_network = true);

} // namespace cmw
