#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>

#include "phydiff/checkpoint.hpp"
#include "phydiff/config.hpp"
#include "phydiff/diffusion.hpp"
#include "phydiff/npnn.hpp"
#include "phydiff/ofdm.hpp"
#include "phydiff/pn.hpp"
#include "phydiff/qam.hpp"
#include "phydiff/rng.hpp"
#include "phydiff/runner.hpp"

namespace phydiff {

namespace {

struct Checker {
  std::ostream& out;
  bool all = true;

  void report(const std::string& name, bool ok, const std::string& detail) {
    out << (ok ? "ok   " : "FAIL ") << name << "  " << detail << '\n';
    all = all && ok;
  }
};

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

void check_rng(Checker& c) {
  RngStream a = derive_rng(42, {"selftest", 1});
  RngStream b = derive_rng(42, {"selftest", 1});
  bool same = true;
  for (int i = 0; i < 1000; ++i) same = same && a.next_u64() == b.next_u64();
  double m = 0.0, v = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = a.normal();
    m += x;
    v += x * x;
  }
  m /= n;
  v = v / n - m * m;
  c.report("rng.reproducible", same, "1000 draws");
  c.report("rng.gaussian", std::abs(m) < 0.02 && std::abs(v - 1.0) < 0.02,
           "mean " + format_double(m) + " var " + format_double(v));
}

void check_schedule(Checker& c) {
  const Schedule s = make_sigmoid_schedule(500, 5e-4, 1e-2);
  double prod = 1.0, worst = 0.0;
  for (int t = 1; t <= 500; ++t) {
    prod *= 1.0 - s.beta(t);
    worst = std::max(worst, rel(prod, alpha_bar_at(s, t)));
  }
  c.report("diffusion.alpha_bar", worst < 1e-12, "max rel " + format_double(worst));

  RngStream rng = derive_rng(7, {"selftest.ddim", 0});
  worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int t = static_cast<int>(rng.uniform_int(2, 500));
    const Tensor x = standard_normal({3}, rng);
    const Tensor e = standard_normal({3}, rng);
    const Tensor zero({3}, 0.0);
    const Tensor a = ddim_step(x, e, t, t - 1, sigma_for_step(t, t - 1, 1.0, s), zero, s);
    const Tensor b = ddpm_mean(x, e, t, s);
    for (std::size_t i = 0; i < 3; ++i) worst = std::max(worst, rel(a[i], b[i]));
  }
  c.report("diffusion.ddim_consecutive", worst < 1e-10, "max rel " + format_double(worst));
}

void check_gradients(Checker& c) {
  NpnnSpec spec;
  spec.encoder = {4, 4, 1, 4, 4, 4, 3, 3};
  spec.time = {4, 1e4};
  spec.unet.base_width = 4;
  spec.max_t = 50;
  RngStream init = derive_rng(3, {"selftest.init", 0});
  NoisePredictor net(spec, init);
  RngStream rng = derive_rng(3, {"selftest.data", 0});
  const Tensor xc = standard_normal(spec.condition_shape(), rng);
  const Tensor xt = standard_normal(spec.sample_shape(), rng);
  const Tensor target = standard_normal(spec.sample_shape(), rng);
  const int t = 17;

  auto loss_of = [&] {
    const Tensor e = net.predict_noise(xt, xc, t);
    double l = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) l += (e[i] - target[i]) * (e[i] - target[i]);
    return l / static_cast<double>(e.size());
  };

  net.parameters().zero_grad();
  Graph g;
  const NodeId out = net.build(g, xt, xc, t);
  g.backward(mse_loss(g, out, target));

  double worst = 0.0;
  int checked = 0;
  for (auto& p : net.parameters()) {
    const std::size_t n = p.value.size();
    for (std::size_t k = 0; k < std::min<std::size_t>(n, 3); ++k) {
      const std::size_t i = (k * 7919) % n;
      const double analytic = p.grad[i];
      double best = std::numeric_limits<double>::infinity();
      for (double h : {1e-4, 1e-5, 1e-6}) {
        const double w = p.value[i];
        p.value[i] = w + h;
        const double up = loss_of();
        p.value[i] = w - h;
        const double dn = loss_of();
        p.value[i] = w;
        const double numeric = (up - dn) / (2.0 * h);
        const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        best = std::min(best, err);
        if (best <= 1e-4) break;
      }
      worst = std::max(worst, best);
      ++checked;
    }
  }
  c.report("gradcore.npnn_fd", worst <= 1e-4,
           std::to_string(checked) + " elements, max rel " + format_double(worst));
}

void check_qam(Checker& c) {
  for (int order : {4, 16, 64, 256}) {
    const QamConstellation q(order);
    bool ok = true;
    double power = 0.0;
    for (int label = 0; label < order; ++label) {
      ok = ok && q.nearest_label(q.points()[label]) == label;
      power += std::norm(q.points()[label]);
    }
    power /= order;
    c.report("qam.round_trip." + std::to_string(order), ok && std::abs(power - 1.0) < 1e-12,
             "mean power " + format_double(power));
  }
  for (int order : {4, 16, 64, 256}) {
    const QamConstellation q(order);
    c.out << "qam table " << order << " (label bits, I, Q)\n";
    for (int label = 0; label < order; ++label) {
      std::string bits;
      for (int b = q.bits_per_symbol() - 1; b >= 0; --b) bits += ((label >> b) & 1) ? '1' : '0';
      c.out << "  " << bits << ' ' << format_double(q.points()[label].real()) << ' '
            << format_double(q.points()[label].imag()) << '\n';
    }
  }
}

void check_ofdm(Checker& c) {
  OfdmConfig cfg;
  RngStream rng = derive_rng(11, {"selftest.ofdm", 0});
  RngStream prng = derive_rng(11, {"selftest.ofdm", 1});
  const TxFrame tx = build_tx_grid(cfg, rng, prng);
  ChannelRealization ch;
  ch.delays_s = {0.0, 1.0 / cfg.sample_rate(), 3.0 / cfg.sample_rate()};
  ch.gains.assign(cfg.n_rx, {});
  for (auto& g : ch.gains) g = {rng.complex_normal(0.5), rng.complex_normal(0.3), rng.complex_normal(0.2)};
  const Grid freq = apply_channel(tx.grid, freq_response(ch, cfg), 0.0, rng);
  const Grid time = apply_channel_time_domain(tx.grid, ch, cfg);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < freq.v.size(); ++i) {
    num += std::norm(freq.v[i] - time.v[i]);
    den += std::norm(freq.v[i]);
  }
  const double r = std::sqrt(num / den);
  c.report("ofdm.time_freq_equivalence", r <= 1e-9, "rel " + format_double(r));
}

void check_psam(Checker& c) {
  const std::size_t P = 10;
  std::vector<cplx> s(3 * P + 1, cplx{0.6, -0.8});
  std::vector<cplx> pilots;
  for (std::size_t k = 0; k < s.size(); k += P) {
    s[k] = kPnPilot;
    pilots.push_back(kPnPilot);
  }
  double worst = 0.0;
  for (const double slope : {0.0, 0.013}) {
    std::vector<double> phi(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) phi[k] = 0.4 + slope * static_cast<double>(k);
    RngStream rng(0);
    const auto y = apply_pn(s, phi, 0.0, rng);
    worst = std::max(worst, pn_mse(psam_estimate(y, pilots, P), phi));
  }
  c.report("pn.psam_exact", worst < 1e-20, "mse " + format_double(worst));
  const double var = PnConfig{}.step_variance();
  c.report("pn.step_variance", rel(var, 6.257e-6) < 1e-4, format_double(var) + " rad^2");
}

void check_harness(Checker& c) {
  const ExperimentConfig d = parse_config("");
  const ExperimentConfig back = parse_config(format_config(d));
  c.report("harness.config_round_trip", d == back && back.diffusion_steps == 500 && back.sampler_steps == 15,
           "digest " + d.digest());

  ExperimentConfig small = d;
  small.scenario = Scenario::PnEstimate;
  small.q1 = small.q2 = small.q_last = 8;
  small.time_dim = 4;
  small.base_width = 4;
  NoisePredictor net = make_model(small);
  const OptimizerState opt = OptimizerState::for_params(net.parameters(), AdamOptions{});
  const std::string bytes = encode_checkpoint(Checkpoint::capture(small.digest(), 0, net.parameters(), opt));
  const bool same = encode_checkpoint(decode_checkpoint(bytes)) == bytes;
  c.report("harness.checkpoint_round_trip", same, std::to_string(bytes.size()) + " bytes");
}

}  // namespace

bool run_selftest(std::ostream& out) {
  Checker c{out};
  check_rng(c);
  check_schedule(c);
  check_gradients(c);
  check_ofdm(c);
  check_psam(c);
  check_harness(c);
  check_qam(c);
  out << (c.all ? "selftest passed" : "selftest FAILED") << '\n';
  return c.all;
}

}  // namespace phydiff
