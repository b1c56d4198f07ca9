#include "phydiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "phydiff/csv.hpp"
#include "phydiff/errors.hpp"

namespace phydiff {

Schedule::Schedule(std::vector<double> betas) : beta_(std::move(betas)) {
  if (beta_.empty()) throw ConfigError("schedule needs at least one step");
  alpha_bar_.resize(beta_.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < beta_.size(); ++i) {
    if (!(beta_[i] >= 0.0 && beta_[i] < 1.0)) throw ConfigError("schedule beta must lie in [0, 1)");
    prod *= 1.0 - beta_[i];
    alpha_bar_[i] = prod;
  }
}

double Schedule::beta(int t) const {
  if (t < 1 || t > steps()) throw ContractError("time step " + std::to_string(t) + " outside [1, T]");
  return beta_[static_cast<std::size_t>(t - 1)];
}

double Schedule::alpha(int t) const { return 1.0 - beta(t); }

double Schedule::alpha_bar_or_one(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > steps()) throw ContractError("time step " + std::to_string(t) + " outside [0, T]");
  return alpha_bar_[static_cast<std::size_t>(t - 1)];
}

Schedule make_sigmoid_schedule(int T, double beta_min, double beta_max) {
  if (T < 1) throw ConfigError("schedule T must be >= 1");
  if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0)) {
    throw ConfigError("schedule bounds must satisfy 0 < beta_min < beta_max < 1");
  }
  constexpr double kSlope = 6.0;
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int t = 1; t <= T; ++t) {
    const double z = kSlope * (2.0 * t / T - 1.0);
    const double s = 1.0 / (1.0 + std::exp(-z));
    betas[static_cast<std::size_t>(t - 1)] = beta_min + (beta_max - beta_min) * s;
  }
  return Schedule(std::move(betas));
}

double alpha_bar_at(const Schedule& schedule, int t) {
  if (t < 1 || t > schedule.steps()) throw ContractError("alpha_bar_at: t outside [1, T]");
  return schedule.alpha_bar_or_one(t);
}

Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const Schedule& schedule) {
  require_same_shape(x0, eps, "forward_noise");
  const double ab = alpha_bar_at(schedule, t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

Tensor ddpm_mean(const Tensor& x_t, const Tensor& eps_hat, int t, const Schedule& schedule) {
  require_same_shape(x_t, eps_hat, "ddpm_mean");
  const double beta = schedule.beta(t);
  const double ab = schedule.alpha_bar_or_one(t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
  // With beta_t = 0 the noise coefficient vanishes regardless of alpha_bar.
  const double coeff = beta == 0.0 ? 0.0 : beta / std::sqrt(1.0 - ab);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = inv_sqrt_alpha * (x_t[i] - coeff * eps_hat[i]);
  return out;
}

Tensor predict_x0(const Tensor& x_t, const Tensor& eps_hat, int t, const Schedule& schedule) {
  require_same_shape(x_t, eps_hat, "predict_x0");
  const double ab = alpha_bar_at(schedule, t);
  const double s = std::sqrt(ab), n = std::sqrt(1.0 - ab);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = (x_t[i] - n * eps_hat[i]) / s;
  return out;
}

Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, int tau_i, int tau_prev, double sigma,
                 const Tensor& psi, const Schedule& schedule) {
  require_same_shape(x_t, eps_hat, "ddim_step eps");
  require_same_shape(x_t, psi, "ddim_step psi");
  if (tau_prev < 0 || tau_prev >= tau_i) throw ContractError("ddim_step: need 0 <= tau_prev < tau_i");
  if (!(sigma >= 0.0)) throw ContractError("ddim_step: sigma must be non-negative");
  const double ab_prev = schedule.alpha_bar_or_one(tau_prev);
  const double radicand = 1.0 - ab_prev - sigma * sigma;
  if (radicand < 0.0) {
    // sigma_for_step clamps, so reaching this is a programming error.
    std::fprintf(stderr, "ddim_step: negative radicand %.17g (tau %d -> %d, sigma %.17g)\n", radicand, tau_i,
                 tau_prev, sigma);
    std::abort();
  }
  const Tensor x0_hat = predict_x0(x_t, eps_hat, tau_i, schedule);
  const double a = std::sqrt(ab_prev), d = std::sqrt(radicand);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = a * x0_hat[i] + d * eps_hat[i] + sigma * psi[i];
  return out;
}

TauSet make_tau(int S, int T, double eta) {
  if (T < 1 || S < 1) throw ConfigError("make_tau: S and T must be >= 1");
  if (S > T) throw ConfigError("make_tau: S must not exceed T");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("make_tau: eta must lie in [0, 1]");
  TauSet ts;
  ts.eta = eta;
  ts.tau.reserve(static_cast<std::size_t>(S));
  const long long s = S, tt = T;
  for (long long i = 1; i <= s; ++i) {
    // round half up of i*T/S in exact integer arithmetic
    int v = static_cast<int>((2 * i * tt + s) / (2 * s));
    if (!ts.tau.empty() && v <= ts.tau.back()) v = ts.tau.back() + 1;
    ts.tau.push_back(v);
  }
  return ts;
}

double sigma_for_step(int tau_i, int tau_prev, double eta, const Schedule& schedule) {
  if (tau_prev < 0 || tau_prev >= tau_i) throw ContractError("sigma_for_step: need 0 <= tau_prev < tau_i");
  if (eta == 0.0) return 0.0;
  const double ab_i = schedule.alpha_bar_or_one(tau_i);
  const double ab_prev = schedule.alpha_bar_or_one(tau_prev);
  if (ab_i >= 1.0) return 0.0;
  const double var = ((1.0 - ab_prev) / (1.0 - ab_i)) * (1.0 - ab_i / ab_prev);
  double sigma = eta * std::sqrt(std::max(var, 0.0));
  const double cap = std::sqrt(std::max(1.0 - ab_prev, 0.0));
  if (sigma > cap) sigma = cap;
  return sigma;
}

// ---------------------------------------------------------------------------

TrainBatchSource::TrainBatchSource(Shape condition_shape, Shape target_shape, Generator gen)
    : condition_shape_(std::move(condition_shape)), target_shape_(std::move(target_shape)), gen_(std::move(gen)) {}

TrainPair TrainBatchSource::next(std::uint64_t index) const {
  TrainPair p = gen_(index);
  if (p.condition.shape() != condition_shape_ || p.target.shape() != target_shape_) {
    throw ShapeError("batch source produced " + shape_str(p.condition.shape()) + "/" + shape_str(p.target.shape()) +
                     ", declared " + shape_str(condition_shape_) + "/" + shape_str(target_shape_));
  }
  return p;
}

Tensor standard_normal(const Shape& shape, RngStream& rng) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

TrainResult train(TrainableNoiseModel& model, const TrainBatchSource& source, const Schedule& schedule,
                  OptimizerState& optimizer, RngStream& rng, const TrainOptions& options) {
  if (source.condition_shape() != model.condition_shape() || source.target_shape() != model.sample_shape()) {
    throw ShapeError("train: batch source shapes do not match the model");
  }
  if (options.batch_size == 0) throw ConfigError("train: batch size must be positive");
  TrainResult result;
  result.losses.reserve(static_cast<std::size_t>(std::max(options.steps, 0L)));
  ParameterSet& params = model.parameters();
  const double inv_b = 1.0 / static_cast<double>(options.batch_size);
  const int T = schedule.steps();
  for (long step = 0; step < options.steps; ++step) {
    params.zero_grad();
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < options.batch_size; ++b) {
      const int t = static_cast<int>(rng.uniform_int(1, static_cast<std::uint64_t>(T)));
      const TrainPair pair = source.next(static_cast<std::uint64_t>(step) * options.batch_size + b);
      const Tensor eps = standard_normal(pair.target.shape(), rng);
      const Tensor x_t = forward_noise(pair.target, t, eps, schedule);
      Graph g;
      const NodeId eps_hat = model.build(g, x_t, pair.condition, t);
      const NodeId loss = mse_loss(g, eps_hat, eps);
      loss_sum += g.value(loss)[0];
      g.backward(loss, inv_b);
    }
    const double loss = loss_sum * inv_b;
    if (!std::isfinite(loss)) {
      throw NonFiniteLoss("non-finite training loss at step " + std::to_string(step + 1), step + 1);
    }
    adam_step(optimizer, params);
    result.losses.push_back(loss);
    if (options.on_step) options.on_step(step + 1, loss);
  }
  return result;
}

SampleResult sample_from(const ConditionalNoiseModel& model, const Tensor& x_c, Tensor x_start,
                         const TauSet& tau_set, const Schedule& schedule, RngStream& rng, bool record_trace) {
  if (x_c.shape() != model.condition_shape()) {
    throw ShapeError("sample: condition shape " + shape_str(x_c.shape()) + " expected " +
                     shape_str(model.condition_shape()));
  }
  if (x_start.shape() != model.sample_shape()) throw ShapeError("sample: start shape does not match the model");
  if (tau_set.tau.empty() || tau_set.tau.back() > schedule.steps()) {
    throw ContractError("sample: tau set incompatible with schedule");
  }
  const Tensor prepared = model.prepare(x_c);
  SampleResult res;
  Tensor x = std::move(x_start);
  const Tensor zeros(x.shape(), 0.0);
  const std::size_t S = tau_set.tau.size();
  for (std::size_t i = S; i >= 1; --i) {
    const int tau_i = tau_set.tau[i - 1];
    const int tau_prev = i > 1 ? tau_set.tau[i - 2] : 0;
    const Tensor eps_hat = model.predict(prepared, x, tau_i);
    if (record_trace) res.x0_trace.push_back(predict_x0(x, eps_hat, tau_i, schedule));
    const double sigma = sigma_for_step(tau_i, tau_prev, tau_set.eta, schedule);
    const Tensor psi = i > 1 ? standard_normal(x.shape(), rng) : zeros;
    x = ddim_step(x, eps_hat, tau_i, tau_prev, sigma, psi, schedule);
  }
  res.x0 = std::move(x);
  return res;
}

SampleResult sample(const ConditionalNoiseModel& model, const Tensor& x_c, const TauSet& tau_set,
                    const Schedule& schedule, RngStream& rng, bool record_trace) {
  Tensor start = standard_normal(model.sample_shape(), rng);
  return sample_from(model, x_c, std::move(start), tau_set, schedule, rng, record_trace);
}

void write_loss_csv(const std::vector<double>& losses, const std::string& path) {
  CsvTable t;
  t.header = {"step", "loss"};
  for (std::size_t i = 0; i < losses.size(); ++i) t.add_row({std::to_string(i + 1), format_double(losses[i])});
  t.write(path);
}

}  // namespace phydiff
