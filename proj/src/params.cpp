#include "phydiff/params.hpp"

#include <cmath>

#include "phydiff/errors.hpp"
#include "phydiff/rng.hpp"

namespace phydiff {

std::size_t ParameterSet::add(std::string id, Tensor init) {
  if (contains(id)) throw ContractError("duplicate parameter id '" + id + "'");
  Tensor grad(init.shape(), 0.0);
  params_.push_back(Parameter{std::move(id), std::move(init), std::move(grad)});
  return params_.size() - 1;
}

std::size_t ParameterSet::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].id == id) return i;
  }
  throw ContractError("unknown parameter id '" + std::string(id) + "'");
}

bool ParameterSet::contains(std::string_view id) const {
  for (const auto& p : params_) {
    if (p.id == id) return true;
  }
  return false;
}

std::size_t ParameterSet::numel() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

void ParameterSet::fill_values(double v) {
  for (auto& p : params_) p.value.fill(v);
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-limit, limit);
  return t;
}

}  // namespace phydiff
