#include "phydiff/adam.hpp"

#include <cmath>

#include "phydiff/errors.hpp"

namespace phydiff {

OptimizerState OptimizerState::for_params(const ParameterSet& params, AdamOptions options) {
  if (!(options.learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(options.beta1 > 0.0 && options.beta1 < 1.0) || !(options.beta2 > 0.0 && options.beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in (0, 1)");
  }
  if (!(options.epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
  OptimizerState s;
  s.options = options;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.value.shape(), 0.0);
    s.second_moment.emplace_back(p.value.shape(), 0.0);
  }
  return s;
}

void adam_step(OptimizerState& state, ParameterSet& params) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state does not match parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i].value, params[i].grad, "adam_step grad");
    require_same_shape(params[i].value, state.first_moment[i], "adam_step first moment");
    require_same_shape(params[i].value, state.second_moment[i], "adam_step second moment");
  }
  const auto& o = state.options;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* w = params[i].value.raw();
    const double* g = params[i].grad.raw();
    double* m = state.first_moment[i].raw();
    double* v = state.second_moment[i].raw();
    for (std::size_t j = 0; j < params[i].value.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= o.learning_rate * mhat / (std::sqrt(vhat) + o.epsilon);
    }
  }
}

}  // namespace phydiff
