#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "phydiff/tensor.hpp"

namespace phydiff {

class RngStream;

struct Parameter {
  std::string id;
  Tensor value;
  Tensor grad;
};

/// Ordered collection of learnable tensors keyed by stable identifiers such as
/// "enc.conv1.kernel". Insertion order is the canonical enumeration order used
/// by checkpoints and the optimizer.
class ParameterSet {
 public:
  std::size_t add(std::string id, Tensor init);

  [[nodiscard]] std::size_t index_of(std::string_view id) const;
  [[nodiscard]] bool contains(std::string_view id) const;

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& get(std::string_view id) { return params_[index_of(id)]; }
  [[nodiscard]] const Parameter& get(std::string_view id) const { return params_[index_of(id)]; }

  [[nodiscard]] std::size_t size() const noexcept { return params_.size(); }
  [[nodiscard]] std::size_t numel() const noexcept;

  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  [[nodiscard]] auto begin() const noexcept { return params_.begin(); }
  [[nodiscard]] auto end() const noexcept { return params_.end(); }

  void zero_grad();
  void fill_values(double v);

 private:
  std::vector<Parameter> params_;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, RngStream& rng);

}  // namespace phydiff
