#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "phydiff/adam.hpp"
#include "phydiff/graph.hpp"
#include "phydiff/params.hpp"
#include "phydiff/rng.hpp"
#include "phydiff/tensor.hpp"

namespace phydiff {

/// Variance schedule beta_1..beta_T with alpha_t = 1 - beta_t and the running
/// product alpha_bar_t. Time indices are 1-based; alpha_bar at t = 0 is 1.
class Schedule {
 public:
  // Validates 0 <= beta_t < 1. Production schedules come from
  // make_sigmoid_schedule; this constructor also admits beta = 0 for tests.
  explicit Schedule(std::vector<double> betas);

  [[nodiscard]] int steps() const noexcept { return static_cast<int>(beta_.size()); }
  [[nodiscard]] double beta(int t) const;
  [[nodiscard]] double alpha(int t) const;
  // Defined for 0 <= t <= T.
  [[nodiscard]] double alpha_bar_or_one(int t) const;
  [[nodiscard]] const std::vector<double>& betas() const noexcept { return beta_; }
  [[nodiscard]] const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

 private:
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
};

// beta_t = beta_min + (beta_max - beta_min) * sigmoid(6 (2t/T - 1)), t = 1..T.
Schedule make_sigmoid_schedule(int T, double beta_min, double beta_max);

// Strict 1 <= t <= T.
double alpha_bar_at(const Schedule& schedule, int t);

// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const Schedule& schedule);

// DDPM posterior mean from a noise prediction.
Tensor ddpm_mean(const Tensor& x_t, const Tensor& eps_hat, int t, const Schedule& schedule);

// Clean-data estimate x0_hat = (x_t - sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_bar_t).
Tensor predict_x0(const Tensor& x_t, const Tensor& eps_hat, int t, const Schedule& schedule);

// x_prev = sqrt(ab_prev) x0_hat + sqrt(1 - ab_prev - sigma^2) eps_hat + sigma psi.
// tau_prev = 0 denotes the final step onto x0.
Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, int tau_i, int tau_prev, double sigma,
                 const Tensor& psi, const Schedule& schedule);

struct TauSet {
  std::vector<int> tau;  // strictly increasing, last element T
  double eta = 1.0;
};

// tau_i = round(i T / S), i = 1..S.
TauSet make_tau(int S, int T, double eta = 1.0);

// eta * sqrt((1 - ab_prev)/(1 - ab_i)) * sqrt(1 - ab_i/ab_prev), clamped so
// that 1 - ab_prev - sigma^2 >= 0.
double sigma_for_step(int tau_i, int tau_prev, double eta, const Schedule& schedule);

// ---------------------------------------------------------------------------
// Generic conditional noise model and the training / sampling loops.

class ConditionalNoiseModel {
 public:
  virtual ~ConditionalNoiseModel() = default;
  [[nodiscard]] virtual Shape condition_shape() const = 0;
  [[nodiscard]] virtual Shape sample_shape() const = 0;
  // Condition-only work done once per sampling pass (e.g. the encoder).
  [[nodiscard]] virtual Tensor prepare(const Tensor& x_c) const { return x_c; }
  [[nodiscard]] virtual Tensor predict(const Tensor& prepared, const Tensor& x_t, int t) const = 0;
};

class TrainableNoiseModel : public ConditionalNoiseModel {
 public:
  virtual ParameterSet& parameters() = 0;
  // Builds eps_theta(x_t, x_c, t) on g with tracked parameter gradients.
  virtual NodeId build(Graph& g, const Tensor& x_t, const Tensor& x_c, int t) = 0;
};

struct TrainPair {
  Tensor condition;  // x_c
  Tensor target;     // x_0
};

/// Problem-specific generator of (x_c, x_0) pairs. Pairs are addressed by a
/// global sample index so every pair can be regenerated from its own stream.
class TrainBatchSource {
 public:
  using Generator = std::function<TrainPair(std::uint64_t index)>;
  TrainBatchSource(Shape condition_shape, Shape target_shape, Generator gen);

  TrainPair next(std::uint64_t index) const;
  [[nodiscard]] const Shape& condition_shape() const noexcept { return condition_shape_; }
  [[nodiscard]] const Shape& target_shape() const noexcept { return target_shape_; }

 private:
  Shape condition_shape_;
  Shape target_shape_;
  Generator gen_;
};

struct TrainOptions {
  long steps = 0;
  std::size_t batch_size = 32;
  // Invoked after each optimizer step with the 1-based step and its loss.
  std::function<void(long, double)> on_step;
};

struct TrainResult {
  std::vector<double> losses;
};

// Mean-squared noise-prediction training; loss is averaged over batch and
// elements. Throws NonFiniteLoss (parameters keep the last finite update).
TrainResult train(TrainableNoiseModel& model, const TrainBatchSource& source, const Schedule& schedule,
                  OptimizerState& optimizer, RngStream& rng, const TrainOptions& options);

struct SampleResult {
  Tensor x0;
  std::vector<Tensor> x0_trace;  // one x0_hat per reverse step, largest tau first
};

SampleResult sample(const ConditionalNoiseModel& model, const Tensor& x_c, const TauSet& tau_set,
                    const Schedule& schedule, RngStream& rng, bool record_trace = false);

// Same as sample() but starting from a given x_{tau_S}.
SampleResult sample_from(const ConditionalNoiseModel& model, const Tensor& x_c, Tensor x_start,
                         const TauSet& tau_set, const Schedule& schedule, RngStream& rng,
                         bool record_trace = false);

Tensor standard_normal(const Shape& shape, RngStream& rng);

// Writes "step,loss" rows.
void write_loss_csv(const std::vector<double>& losses, const std::string& path);

}  // namespace phydiff
