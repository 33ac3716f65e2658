#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "splatnorm/tape.hpp"

namespace splatnorm {

struct GradCheckOptions {
  double step = 1e-5;
  // One-sided derivative mismatch beyond this (relative) flags a kink and the
  // coordinate is skipped instead of judged.
  double kink_tol = 1e-2;
  // Check at most this many coordinates per input (-1 = all), sampled
  // deterministically from coord_seed.
  int64_t max_coords_per_input = -1;
  uint64_t coord_seed = 0x5eed;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  int worst_input = -1;
  int64_t worst_coord = -1;
  int64_t checked = 0;
  int64_t skipped_kinks = 0;
};

// Builds a scalar graph from leaves, compares tape gradients against central
// finite differences. The builder must be deterministic.
using GraphBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

GradCheckResult finite_diff_check(const GraphBuilder& builder, const std::vector<Tensor>& inputs,
                                  const GradCheckOptions& options = {});

// Single-input convenience.
GradCheckResult finite_diff_check(const std::function<Var(Tape&, Var)>& builder, const Tensor& x,
                                  double step = 1e-5);

// Named check of the full gradient surface; used by the CLI and the
// acceptance suite.
struct SuiteCheck {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  int64_t skipped = 0;
  bool passed = false;
};

std::vector<SuiteCheck> run_gradient_suite(uint64_t seed, int seeds_per_check = 10);

}  // namespace splatnorm
