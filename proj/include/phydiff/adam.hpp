#pragma once

#include <cstdint>
#include <vector>

#include "phydiff/params.hpp"
#include "phydiff/tensor.hpp"

namespace phydiff {

struct AdamOptions {
  double learning_rate = 8e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment accumulators, one pair per parameter, in the
/// ParameterSet's enumeration order.
struct OptimizerState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  static OptimizerState for_params(const ParameterSet& params, AdamOptions options);
};

// One bias-corrected Adam update using each parameter's current .grad.
void adam_step(OptimizerState& state, ParameterSet& params);

}  // namespace phydiff
