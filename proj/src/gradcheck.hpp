#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "autodiff.hpp"

namespace dygl {

struct GradCheckCase {
  std::string block;
  std::uint64_t seed = 0;
  GradCheckReport report;
  double seconds = 0;
};

/// dyt, attention, msdc, ffn, shdc_block, dyfusionup, dice, bce, hybrid, network.
const std::vector<std::string>& gradcheck_blocks();

/// Finite-difference check of one block in f64 for one seed. Inputs and
/// every trainable parameter are checked; the scalar objective is
/// sum(output * R) for a fixed random R (losses are checked directly).
GradCheckCase gradcheck_block(const std::string& block, std::uint64_t seed);

/// Runs `seeds` seeds of the named block, or of every block when `block` is
/// empty; `on_case` sees each result as it completes.
std::vector<GradCheckCase> gradcheck_suite(const std::string& block, int seeds = 5,
                                           const std::function<void(const GradCheckCase&)>& on_case = {});

}  // namespace dygl
