#include "phydiff/pn.hpp"

#include <cmath>
#include <numbers>

#include "phydiff/errors.hpp"
#include "phydiff/ofdm.hpp"

namespace phydiff {

void PnConfig::validate() const {
  if (section_len < 2) throw ConfigError("pilot spacing P must be at least 2");
  if (!(symbol_rate > 0.0)) throw ConfigError("symbol rate must be positive");
  if (!(offset_hz > 0.0)) throw ConfigError("phase-noise offset frequency must be positive");
  (void)QamConstellation(data_order);
}

double PnConfig::step_variance() const { return pn_step_variance(level_dbchz, offset_hz, symbol_rate); }

double pn_step_variance(double level_dbchz, double offset_hz, double symbol_rate) {
  const double w = 2.0 * std::numbers::pi * offset_hz;
  return w * w * std::pow(10.0, level_dbchz / 10.0) / symbol_rate;
}

std::vector<double> gen_pn(double step_variance, std::size_t n, RngStream& rng) {
  std::vector<double> phi(n);
  if (n == 0) return phi;
  const double sd = std::sqrt(step_variance);
  phi[0] = rng.uniform(-std::numbers::pi, std::numbers::pi);
  for (std::size_t k = 1; k < n; ++k) phi[k] = phi[k - 1] + sd * rng.normal();
  return phi;
}

std::vector<cplx> apply_pn(const std::vector<cplx>& s, const std::vector<double>& phi, double noise_var,
                           RngStream& rng) {
  if (s.size() != phi.size()) throw ShapeError("apply_pn: symbol and phase lengths differ");
  std::vector<cplx> y(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) {
    y[k] = s[k] * std::polar(1.0, phi[k]) + (noise_var > 0.0 ? rng.complex_normal(noise_var) : cplx{});
  }
  return y;
}

std::vector<double> psam_estimate(const std::vector<cplx>& y, const std::vector<cplx>& pilot_values,
                                  std::size_t spacing) {
  if (spacing == 0) throw ContractError("psam_estimate: zero pilot spacing");
  const std::size_t n_pilots = (y.size() + spacing - 1) / spacing;
  if (pilot_values.size() != n_pilots) throw ShapeError("psam_estimate: pilot count does not match the stream");
  std::vector<double> anchor(n_pilots);
  for (std::size_t i = 0; i < n_pilots; ++i) {
    const double raw = std::arg(y[i * spacing] * std::conj(pilot_values[i]));
    if (i == 0) {
      anchor[i] = raw;
      continue;
    }
    // wrap the increment into (-pi, pi]
    double d = std::remainder(raw - anchor[i - 1], 2.0 * std::numbers::pi);
    if (d <= -std::numbers::pi) d += 2.0 * std::numbers::pi;
    anchor[i] = anchor[i - 1] + d;
  }
  std::vector<double> est(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) {
    const std::size_t i = k / spacing;
    if (i + 1 >= n_pilots) {
      est[k] = anchor[i];
      continue;
    }
    const double w = static_cast<double>(k - i * spacing) / static_cast<double>(spacing);
    est[k] = (1.0 - w) * anchor[i] + w * anchor[i + 1];
  }
  return est;
}

std::vector<cplx> hard_decision(const std::vector<cplx>& y, const std::vector<double>& phi_hat, int order) {
  if (y.size() != phi_hat.size()) throw ShapeError("hard_decision: lengths differ");
  const QamConstellation c(order);
  std::vector<cplx> out(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) out[k] = c.points()[c.nearest_label(y[k] * std::polar(1.0, -phi_hat[k]))];
  return out;
}

PnSection simulate_section(const PnConfig& cfg, double snr_db, std::uint64_t master, const StreamKey& key) {
  RngStream data = derive_rng(master, {key.tag + ".data", key.index});
  RngStream phase = derive_rng(master, {key.tag + ".phase", key.index});
  RngStream noise = derive_rng(master, {key.tag + ".noise", key.index});
  const std::size_t P = cfg.section_len;
  const QamConstellation qam(cfg.data_order);

  std::vector<cplx> s(P + 1);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(qam.bits_per_symbol()));
  s[0] = kPnPilot;
  s[P] = kPnPilot;
  for (std::size_t k = 1; k < P; ++k) {
    for (auto& b : bits) b = static_cast<std::uint8_t>(data.bit());
    s[k] = qam.map_one(bits);
  }
  PnSection sec;
  sec.noise_var = noise_var_from_snr_db(snr_db);
  sec.phi = gen_pn(cfg.step_variance(), P + 1, phase);
  sec.y = apply_pn(s, sec.phi, sec.noise_var, noise);
  sec.phi_psam = psam_estimate(sec.y, {kPnPilot, kPnPilot}, P);
  sec.s_psam = hard_decision(sec.y, sec.phi_psam, cfg.data_order);
  sec.s_psam[0] = kPnPilot;
  sec.s = std::move(s);
  for (auto* v : {&sec.s, &sec.y, &sec.s_psam}) v->resize(P);
  sec.phi.resize(P);
  sec.phi_psam.resize(P);
  return sec;
}

Tensor assemble_xp_pn(const PnSection& sec) {
  const std::size_t P = sec.y.size();
  Tensor t({1, P, 3});
  for (std::size_t k = 0; k < P; ++k) {
    const cplx r = sec.y[k] / sec.s_psam[k];
    t.at(0, k, 0) = r.real();
    t.at(0, k, 1) = r.imag();
    t.at(0, k, 2) = sec.noise_var;
  }
  return t;
}

Tensor assemble_x0_pn(const PnSection& sec) {
  const std::size_t P = sec.phi.size();
  Tensor t({1, P, 2});
  for (std::size_t k = 0; k < P; ++k) {
    t.at(0, k, 0) = std::cos(sec.phi[k]);
    t.at(0, k, 1) = std::sin(sec.phi[k]);
  }
  return t;
}

double pn_mse(const std::vector<double>& phi_hat, const std::vector<double>& phi) {
  if (phi_hat.size() != phi.size() || phi.empty()) throw ContractError("pn_mse: lengths differ");
  double s = 0.0;
  for (std::size_t k = 0; k < phi.size(); ++k) s += std::norm(std::polar(1.0, phi_hat[k]) - std::polar(1.0, phi[k]));
  return s / static_cast<double>(phi.size());
}

double pn_mse(const Tensor& estimate, const std::vector<double>& phi) {
  if (estimate.rank() != 3 || estimate.dim(0) != 1 || estimate.dim(2) != 2 || estimate.dim(1) != phi.size()) {
    throw ShapeError("pn_mse: expected a 1 x P x 2 estimate, got " + shape_str(estimate.shape()));
  }
  std::vector<double> phi_hat(phi.size());
  for (std::size_t k = 0; k < phi.size(); ++k) phi_hat[k] = std::atan2(estimate.at(0, k, 1), estimate.at(0, k, 0));
  return pn_mse(phi_hat, phi);
}

std::vector<PnRow> evaluate_pn(const PnConfig& cfg, const std::string& method, const PnEstimator& est,
                               const std::vector<double>& snrs_db, std::size_t sections, std::uint64_t master) {
  if (sections == 0) throw ConfigError("evaluation needs at least one section");
  std::vector<PnRow> rows;
  for (double snr : snrs_db) {
    double acc = 0.0;
    for (std::size_t i = 0; i < sections; ++i) {
      const PnSection sec = simulate_section(cfg, snr, master, {"pn.eval", i});
      acc += pn_mse(est(sec, i), sec.phi);
    }
    rows.push_back({snr, cfg.level_dbchz, method, acc / static_cast<double>(sections)});
  }
  return rows;
}

}  // namespace phydiff
