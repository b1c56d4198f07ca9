#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "phydiff/qam.hpp"
#include "phydiff/rng.hpp"
#include "phydiff/tensor.hpp"

namespace phydiff {

struct PnConfig {
  std::size_t section_len = 50;  // P: one pilot then P - 1 data symbols
  int data_order = 256;
  double level_dbchz = -88.0;
  double offset_hz = 1e5;
  double symbol_rate = 1e8;

  void validate() const;
  [[nodiscard]] double step_variance() const;
};

// Pilot symbol used at every pilot position.
inline const cplx kPnPilot{0.70710678118654752, 0.70710678118654752};

// (2 pi f_off)^2 10^(L/10) / R_s.
double pn_step_variance(double level_dbchz, double offset_hz, double symbol_rate);

// Wiener phase: phi_0 ~ U(-pi, pi), increments N(0, step_variance).
std::vector<double> gen_pn(double step_variance, std::size_t n, RngStream& rng);

// y_k = s_k exp(j phi_k) + n_k, E|n|^2 = noise_var.
std::vector<cplx> apply_pn(const std::vector<cplx>& s, const std::vector<double>& phi, double noise_var,
                           RngStream& rng);

// Pilots at every multiple of `spacing`. Pilot phases are arg(y conj(s)),
// successive pilot differences are unwrapped to (-pi, pi], the phase is
// linearly interpolated between pilots and held after the last one.
std::vector<double> psam_estimate(const std::vector<cplx>& y, const std::vector<cplx>& pilot_values,
                                  std::size_t spacing);

// Nearest constellation point to y exp(-j phi_hat).
std::vector<cplx> hard_decision(const std::vector<cplx>& y, const std::vector<double>& phi_hat, int order);

struct PnSection {
  std::vector<cplx> s;
  std::vector<double> phi;
  std::vector<cplx> y;
  std::vector<double> phi_psam;
  std::vector<cplx> s_psam;  // known pilot at index 0
  double noise_var = 0.0;
};

// Simulates P + 1 symbols (the section plus the next section's pilot, which
// closes the interpolation interval) and keeps the first P.
PnSection simulate_section(const PnConfig& cfg, double snr_db, std::uint64_t master, const StreamKey& key);

// 1 x P x 3: [Re(y/s_psam), Im(y/s_psam), noise_var].
Tensor assemble_xp_pn(const PnSection& sec);
// 1 x P x 2: [cos phi, sin phi].
Tensor assemble_x0_pn(const PnSection& sec);

// mean |exp(j phi_hat) - exp(j phi)|^2
double pn_mse(const std::vector<double>& phi_hat, const std::vector<double>& phi);
// Same, for a 1 x P x 2 (cos, sin) estimate projected onto the unit circle.
double pn_mse(const Tensor& estimate, const std::vector<double>& phi);

struct PnRow {
  double snr_db = 0.0;
  double level_dbchz = 0.0;
  std::string method;
  double mse = 0.0;
};

// Phase estimate for each symbol of a section, given the section index.
using PnEstimator = std::function<std::vector<double>(const PnSection&, std::uint64_t)>;

// Sections are keyed ("pn.eval", i).
std::vector<PnRow> evaluate_pn(const PnConfig& cfg, const std::string& method, const PnEstimator& est,
                               const std::vector<double>& snrs_db, std::size_t sections, std::uint64_t master);

}  // namespace phydiff
