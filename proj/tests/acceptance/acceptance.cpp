// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance --cli <phydiff binary> --configs <dir> --work <dir> [--only 1,2,...]

#include <CLI11.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "phydiff/checkpoint.hpp"
#include "phydiff/config.hpp"
#include "phydiff/csv.hpp"
#include "phydiff/diffusion.hpp"
#include "phydiff/npnn.hpp"
#include "phydiff/ofdm.hpp"
#include "phydiff/pn.hpp"
#include "phydiff/qam.hpp"
#include "phydiff/runner.hpp"

using namespace phydiff;
using phydiff::testing::check_gradients;
using phydiff::testing::GradCheckOptions;
using phydiff::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
  void report(const std::string& what) { notes.push_back("info " + what); }
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

struct Paths {
  std::string cli;
  fs::path configs;
  fs::path work;
};

int run_command(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string shell_quote(const fs::path& p) { return "'" + p.string() + "'"; }

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// 1. Diffusion math

Outcome diffusion_math() {
  Outcome o;
  const Schedule s = make_sigmoid_schedule(500, 5e-4, 1e-2);
  RngStream rng = derive_rng(101, {"accept.diffusion", 0});

  const double x0 = 1.5;
  const int trials = 100000;
  for (int t : {10, 100, 500}) {
    double sum = 0.0, sum2 = 0.0;
    for (int n = 0; n < trials; ++n) {
      double x = x0;
      for (int u = 1; u <= t; ++u) x = std::sqrt(1.0 - s.beta(u)) * x + std::sqrt(s.beta(u)) * rng.normal();
      sum += x;
      sum2 += x * x;
    }
    const double mean = sum / trials;
    const double var = sum2 / trials - mean * mean;
    const double ab = alpha_bar_at(s, t);
    o.require(rel(mean, std::sqrt(ab) * x0) <= 0.01 && rel(var, 1.0 - ab) <= 0.02,
              "marginal closure t=" + std::to_string(t) + ": mean rel " + fmt(rel(mean, std::sqrt(ab) * x0)) +
                  " (<= 0.01), var rel " + fmt(rel(var, 1.0 - ab)) + " (<= 0.02)");
  }

  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int t = static_cast<int>(rng.uniform_int(2, 500));
    const Tensor x = random_tensor({4}, rng);
    const Tensor e = random_tensor({4}, rng);
    const Tensor zero({4}, 0.0);
    const Tensor a = ddim_step(x, e, t, t - 1, sigma_for_step(t, t - 1, 1.0, s), zero, s);
    // posterior mean written out independently of ddpm_mean
    const double beta = s.beta(t), ab = alpha_bar_at(s, t);
    for (std::size_t i = 0; i < 4; ++i) {
      const double direct = (x[i] - beta / std::sqrt(1.0 - ab) * e[i]) / std::sqrt(1.0 - beta);
      worst = std::max(worst, rel(a[i], direct));
    }
  }
  o.require(worst <= 1e-10, "DDIM eta=1 consecutive step vs DDPM mean: max rel " + fmt(worst) + " (<= 1e-10)");

  worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int t = static_cast<int>(rng.uniform_int(1, 500));
    const Tensor x = random_tensor({4}, rng);
    const Tensor e = random_tensor({4}, rng);
    const Tensor xt = forward_noise(x, t, e, s);
    const Tensor back = predict_x0(xt, e, t, s);
    const Tensor last = ddim_step(xt, e, t, 0, 0.0, Tensor({4}, 0.0), s);
    for (std::size_t i = 0; i < 4; ++i) worst = std::max({worst, rel(back[i], x[i]), rel(last[i], x[i])});
  }
  o.require(worst <= 1e-9, "perfect-oracle inversion: max rel " + fmt(worst) + " (<= 1e-9)");

  double prod = 1.0;
  worst = 0.0;
  for (int t = 1; t <= 500; ++t) {
    const double beta = 5e-4 + (1e-2 - 5e-4) / (1.0 + std::exp(-6.0 * (2.0 * t / 500.0 - 1.0)));
    prod *= 1.0 - beta;
    worst = std::max(worst, rel(prod, alpha_bar_at(s, t)));
  }
  o.require(worst <= 1e-12, "alpha_bar vs brute-force product: max rel " + fmt(worst));
  return o;
}

// ---------------------------------------------------------------------------
// 2. Autodiff

Outcome autodiff() {
  Outcome o;
  RngStream rng = derive_rng(202, {"accept.autodiff", 0});
  std::map<std::string, std::pair<int, double>> per_op;  // failures, worst
  auto run = [&](const std::string& op, ParameterSet& ps, const phydiff::testing::LossBuilder& build) {
    const auto rep = check_gradients(ps, build);
    auto& slot = per_op[op];
    slot.first += rep.ok() ? 0 : 1;
    slot.second = std::max(slot.second, rep.worst_rel);
  };

  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t H = 1 + rng.uniform_int(0, 4), W = 1 + rng.uniform_int(0, 4), C = 1 + rng.uniform_int(0, 3);
    const std::size_t Q = 1 + rng.uniform_int(0, 3);
    const std::size_t k = 1 + 2 * rng.uniform_int(0, 2);
    {
      ParameterSet ps;
      ps.add("x", random_tensor({H, W, C}, rng));
      ps.add("k", random_tensor({k, k, C, Q}, rng));
      ps.add("b", random_tensor({Q}, rng));
      const std::size_t stride = 1 + rng.uniform_int(0, 1);
      const Tensor wts = random_tensor({(H + stride - 1) / stride, (W + stride - 1) / stride, Q}, rng);
      run("conv2d", ps, [&](Graph& g) {
        return weighted_sum(
            g, conv2d(g, g.parameter(ps.get("x")), g.parameter(ps.get("k")), g.parameter(ps.get("b")), stride), wts);
      });
    }
    {
      ParameterSet ps;
      ps.add("x", random_tensor({C + 2}, rng));
      ps.add("w", random_tensor({Q, C + 2}, rng));
      ps.add("b", random_tensor({Q}, rng));
      const Tensor wts = random_tensor({Q}, rng);
      run("dense", ps, [&](Graph& g) {
        return weighted_sum(g, dense(g, g.parameter(ps.get("x")), g.parameter(ps.get("w")), g.parameter(ps.get("b"))),
                            wts);
      });
    }
    {
      ParameterSet ps;
      ps.add("x", random_tensor({H, W, C + 1}, rng));
      ps.add("gain", random_tensor({C + 1}, rng));
      ps.add("shift", random_tensor({C + 1}, rng));
      const Tensor wts = random_tensor({H, W, C + 1}, rng);
      run("layer_norm", ps, [&](Graph& g) {
        return weighted_sum(
            g, layer_norm(g, g.parameter(ps.get("x")), g.parameter(ps.get("gain")), g.parameter(ps.get("shift"))),
            wts);
      });
    }
    {
      ParameterSet ps;
      ps.add("x", random_tensor({H, W, C}, rng));
      const Tensor wts = random_tensor({H, W, C}, rng);
      run("relu", ps, [&](Graph& g) { return weighted_sum(g, relu(g, g.parameter(ps.get("x"))), wts); });
    }
    {
      ParameterSet ps;
      ps.add("a", random_tensor({H, W, C}, rng));
      ps.add("b", random_tensor({H, W, Q}, rng));
      const Tensor wts = random_tensor({H, W, C + Q - 1}, rng);
      run("concat/slice", ps, [&](Graph& g) {
        const std::array<NodeId, 2> parts{g.parameter(ps.get("a")), g.parameter(ps.get("b"))};
        return weighted_sum(g, slice_channels(g, concat_channels(g, parts), 1, C + Q - 1), wts);
      });
    }
    {
      ParameterSet ps;
      ps.add("x", random_tensor({H, W, C}, rng));
      ps.add("v", random_tensor({Q}, rng));
      const Tensor w_up = random_tensor({2 * H, 2 * W, C}, rng);
      const Tensor w_pad = random_tensor({H + 1, W + 3, C}, rng);
      const Tensor w_crop = random_tensor({1, 1, C}, rng);
      const Tensor w_b = random_tensor({H, W, Q}, rng);
      const Tensor w_r = random_tensor({H * W * C}, rng);
      run("upsample/pad/crop/broadcast/reshape", ps, [&](Graph& g) {
        const NodeId x = g.parameter(ps.get("x"));
        std::vector<NodeId> r;
        r.push_back(weighted_sum(g, upsample_nearest2x(g, x), w_up));
        r.push_back(weighted_sum(g, pad_spatial(g, x, H + 1, W + 3), w_pad));
        r.push_back(weighted_sum(g, crop_spatial(g, x, 1, 1), w_crop));
        r.push_back(weighted_sum(g, broadcast_spatial(g, g.parameter(ps.get("v")), H, W), w_b));
        r.push_back(weighted_sum(g, reshape(g, x, {H * W * C}), w_r));
        for (auto& n : r) n = reshape(g, n, {1, 1, 1});
        return weighted_sum(g, concat_channels(g, r), Tensor({1, 1, 5}, 1.0));
      });
    }
    {
      ParameterSet ps;
      ps.add("a", random_tensor({H, W, C}, rng));
      ps.add("b", random_tensor({H, W, C}, rng));
      const Tensor target = random_tensor({H, W, C}, rng);
      run("mul/mse_loss", ps, [&](Graph& g) {
        return mse_loss(g, mul(g, g.parameter(ps.get("a")), g.parameter(ps.get("b"))), target);
      });
    }
  }
  for (const auto& [op, slot] : per_op) {
    o.require(slot.first == 0, op + ": 100 trials, " + std::to_string(slot.first) + " failing, worst rel " +
                                  fmt(slot.second) + " (<= 1e-4)");
  }

  // full miniature NPNN: fresh weights, inputs and t per trial
  int failing = 0;
  std::size_t checked = 0, retried = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    NpnnSpec spec;
    spec.encoder.height = 2 + rng.uniform_int(0, 6);
    spec.encoder.width = 2 + rng.uniform_int(0, 6);
    spec.encoder.channels = 1 + rng.uniform_int(0, 2);
    spec.encoder.q1 = 4;
    spec.encoder.q2 = 4;
    spec.encoder.q_last = 8;
    spec.time.dim = 4;
    spec.unet.base_width = 4;
    spec.max_t = 50;
    RngStream init = derive_rng(202, {"accept.autodiff.init", static_cast<std::uint64_t>(trial)});
    NoisePredictor m(spec, init);
    for (auto& p : m.parameters()) {
      for (auto& v : p.value.data()) v += 0.05 * rng.normal();
    }
    const Tensor xt = random_tensor(spec.sample_shape(), rng);
    const Tensor xc = random_tensor(spec.condition_shape(), rng);
    const Tensor eps = random_tensor(spec.sample_shape(), rng);
    const int t = static_cast<int>(rng.uniform_int(1, 50));
    GradCheckOptions opt;
    opt.sample_elements = 100;
    // hundreds of ReLUs per network; kinks within 1e-6 of a weight do occur
    opt.kink_retries = 4;
    opt.sample_seed = static_cast<std::uint64_t>(trial) + 1;
    const auto rep = check_gradients(
        m.parameters(), [&](Graph& g) { return mse_loss(g, m.build(g, xt, xc, t), eps); }, opt);
    if (!rep.ok()) {
      o.report("trial " + std::to_string(trial) + " (" + std::to_string(spec.encoder.height) + "x" +
               std::to_string(spec.encoder.width) + "x" + std::to_string(spec.encoder.channels) + ", t " +
               std::to_string(t) + "): " + rep.worst_id + "[" + std::to_string(rep.worst_index) + "] analytic " +
               fmt(rep.worst_analytic) + " numeric " + fmt(rep.worst_numeric));
    }
    failing += rep.ok() ? 0 : 1;
    checked += rep.checked;
    retried += rep.retried;
    worst = std::max(worst, rep.worst_rel);
  }
  o.require(failing == 0, "miniature NPNN: 100 trials, " + std::to_string(checked) + " elements (" +
                              std::to_string(retried) + " re-measured at a smaller step), " +
                              std::to_string(failing) + " failing, worst rel " + fmt(worst) + " (<= 1e-4)");
  return o;
}

// ---------------------------------------------------------------------------
// 3. OFDM baselines

// Gray square M-QAM bit error rate at Es/N0 = snr (linear), written as the
// standard per-bit-level sum of erfc terms.
double square_qam_ber(int M, double snr) {
  const int root = static_cast<int>(std::lround(std::sqrt(M)));
  const int levels = static_cast<int>(std::lround(std::log2(root)));
  const double a = std::sqrt(3.0 * snr / (2.0 * (M - 1)));
  double total = 0.0;
  for (int k = 1; k <= levels; ++k) {
    const int p = 1 << (k - 1);
    const int imax = static_cast<int>(std::lround((1.0 - std::pow(2.0, -k)) * root)) - 1;
    double acc = 0.0;
    for (int i = 0; i <= imax; ++i) {
      const int fl = (i * p) / root;
      const double w = static_cast<double>(p) - std::floor(static_cast<double>(i * p) / root + 0.5);
      acc += ((fl % 2) ? -1.0 : 1.0) * w * std::erfc((2 * i + 1) * a);
    }
    total += acc / root;
  }
  return total / levels;
}

Outcome ofdm_baselines() {
  Outcome o;
  RngStream rng = derive_rng(303, {"accept.ofdm", 0});

  {
    const OfdmConfig cfg;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      RngStream prng = derive_rng(303, {"accept.ofdm.pilot", static_cast<std::uint64_t>(trial)});
      const TxFrame tx = build_tx_grid(cfg, rng, prng);
      ChannelRealization ch;
      const std::size_t taps = 1 + rng.uniform_int(0, 3);
      std::set<std::size_t> delays;
      while (delays.size() < taps) delays.insert(rng.uniform_int(0, cfg.cp_len));
      for (std::size_t d : delays) ch.delays_s.push_back(static_cast<double>(d) / cfg.sample_rate());
      ch.gains.assign(cfg.n_rx, {});
      for (auto& g : ch.gains) {
        for (std::size_t l = 0; l < taps; ++l) g.push_back(rng.complex_normal(1.0 / static_cast<double>(taps)));
      }
      const Grid freq = apply_channel(tx.grid, freq_response(ch, cfg), 0.0, rng);
      const Grid time = apply_channel_time_domain(tx.grid, ch, cfg);
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < freq.v.size(); ++i) {
        num += std::norm(freq.v[i] - time.v[i]);
        den += std::norm(time.v[i]);
      }
      worst = std::max(worst, std::sqrt(num / den));
    }
    o.require(worst <= 1e-9, "time vs frequency domain channel, 100 random channels: max rel " + fmt(worst) +
                                 " (<= 1e-9)");
  }

  {
    OfdmConfig cfg;
    cfg.n_rx = 1;
    const QamConstellation qam(cfg.data_order);
    const std::size_t frames = 2000;
    for (double snr_db : {6.0, 10.0, 14.0}) {
      std::vector<double> per_frame;
      for (std::size_t f = 0; f < frames; ++f) {
        RngStream data = derive_rng(303, {"accept.awgn.data", f});
        RngStream pilot = derive_rng(303, {"accept.awgn.pilot", f});
        RngStream noise = derive_rng(303, {"accept.awgn.noise", f});
        OfdmFrame fr;
        fr.tx = build_tx_grid(cfg, data, pilot);
        fr.channel.delays_s = {0.0};
        fr.channel.gains = {{cplx(1.0, 0.0)}};
        fr.h = freq_response(fr.channel, cfg);
        fr.noise_var = noise_var_from_snr_db(snr_db);
        fr.rx = apply_channel(fr.tx.grid, fr.h, fr.noise_var, noise);
        const ReceiverOutput out = lmmse_receiver(fr, cfg, true);
        const auto bits = qam.demap(data_symbols(out.decisions, cfg));
        std::size_t errors = 0;
        for (std::size_t i = 0; i < bits.size(); ++i) errors += bits[i] != fr.tx.bits[i];
        per_frame.push_back(static_cast<double>(errors) / static_cast<double>(bits.size()));
      }
      double mean = 0.0;
      for (double b : per_frame) mean += b;
      mean /= static_cast<double>(frames);
      double var = 0.0;
      for (double b : per_frame) var += (b - mean) * (b - mean);
      var /= static_cast<double>(frames - 1);
      const double se = std::sqrt(var / static_cast<double>(frames));
      const double theory = square_qam_ber(cfg.data_order, std::pow(10.0, snr_db / 10.0));
      const double z = std::abs(mean - theory) / se;
      o.require(z <= 3.0, "LMMSE-PCSI BER on a 1-tap AWGN channel at " + fmt(snr_db) + " dB: " + fmt(mean) +
                              " vs closed form " + fmt(theory) + ", " + fmt(z) + " SE (<= 3, " +
                              std::to_string(frames) + " frames)");
    }
  }

  {
    const OfdmConfig cfg;
    std::vector<double> snrs;
    for (int s = -4; s <= 5; ++s) snrs.push_back(s);
    const auto pcsi = [&](const OfdmFrame& f, std::uint64_t) { return lmmse_receiver(f, cfg, true); };
    const auto icsi = [&](const OfdmFrame& f, std::uint64_t) { return lmmse_receiver(f, cfg, false); };
    const auto a = evaluate_receiver(cfg, "lmmse_pcsi", pcsi, snrs, 500, 303);
    const auto b = evaluate_receiver(cfg, "lmmse_icsi", icsi, snrs, 500, 303);
    bool ordered = true;
    std::string detail;
    for (std::size_t i = 0; i < snrs.size(); ++i) {
      ordered = ordered && a[i].grid_mse <= b[i].grid_mse;
      detail += " " + fmt(snrs[i]) + ":" + fmt(10 * std::log10(b[i].grid_mse / a[i].grid_mse));
    }
    o.require(ordered, "PCSI grid MSE <= ICSI grid MSE at every SNR in [-4, 5] dB over 500 frames; ICSI excess dB" +
                           detail);
  }
  return o;
}

// ---------------------------------------------------------------------------
// 4. PSAM

Outcome psam() {
  Outcome o;
  RngStream rng = derive_rng(404, {"accept.psam", 0});
  const std::size_t P = 50;
  const std::size_t n = 4 * P + 1;
  const QamConstellation qam(256);
  std::vector<cplx> s(n);
  std::vector<cplx> pilots;
  for (std::size_t k = 0; k < n; ++k) {
    if (k % P == 0) {
      s[k] = kPnPilot;
      pilots.push_back(kPnPilot);
    } else {
      s[k] = qam.points()[rng.uniform_int(0, 255)];
    }
  }
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const double phi0 = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const double slope = trial % 2 ? rng.uniform(-0.05, 0.05) : 0.0;
    std::vector<double> phi(n);
    for (std::size_t k = 0; k < n; ++k) phi[k] = phi0 + slope * static_cast<double>(k);
    const auto est = psam_estimate(apply_pn(s, phi, 0.0, rng), pilots, P);
    worst = std::max(worst, pn_mse(est, phi));
  }
  o.require(worst < 1e-20, "noiseless constant and linear phase, 200 trials: max MSE " + fmt(worst) + " (< 1e-20)");

  // pilot noise only: simulated sections against a direct evaluation of the
  // interpolated pilot-phase error with independent draws
  PnConfig cfg;
  cfg.level_dbchz = -500.0;
  const double snr_db = 20.0;
  const std::size_t sections = 4000;
  const auto est = [](const PnSection& sec, std::uint64_t) { return sec.phi_psam; };
  const double mc = evaluate_pn(cfg, "psam", est, {snr_db}, sections, 404).front().mse;
  const double s2 = noise_var_from_snr_db(snr_db);
  double brute = 0.0;
  for (std::size_t r = 0; r < sections; ++r) {
    const double e0 = std::arg(1.0 + rng.complex_normal(s2) / kPnPilot);
    const double e1 = std::arg(1.0 + rng.complex_normal(s2) / kPnPilot);
    double acc = 0.0;
    for (std::size_t k = 0; k < P; ++k) {
      const double w = static_cast<double>(k) / static_cast<double>(P);
      acc += std::norm(std::polar(1.0, (1 - w) * e0 + w * e1) - 1.0);
    }
    brute += acc / static_cast<double>(P);
  }
  brute /= static_cast<double>(sections);
  o.require(rel(mc, brute) <= 0.10, "pilot-noise MSE at 20 dB: simulated " + fmt(mc) + " vs brute force " +
                                        fmt(brute) + ", rel " + fmt(rel(mc, brute)) + " (<= 0.10)");

  const double var = PnConfig{}.step_variance();
  o.require(rel(var, 6.257e-6) <= 1e-4, "step variance at defaults " + fmt(var) + " rad^2 vs 6.257e-6, rel " +
                                            fmt(rel(var, 6.257e-6)) + " (<= 1e-4)");
  return o;
}

// ---------------------------------------------------------------------------
// 5-7. End-to-end runs through the command-line tool

NoisePredictor trained_model(const ExperimentConfig& cfg, const fs::path& dir) {
  const Checkpoint ckpt = load_checkpoint((dir / "checkpoint.bin").string(), cfg.digest());
  NoisePredictor m = make_model(cfg);
  ckpt.restore(m.parameters());
  return m;
}

bool cli_train(const Paths& paths, const fs::path& config, const fs::path& out) {
  fs::create_directories(out);
  return run_command(shell_quote(paths.cli) + " train --config " + shell_quote(config) + " --out " + shell_quote(out) +
                     " --svg --quiet > " + shell_quote(out / "stdout.txt")) == 0;
}

Outcome toy_ofdm(const Paths& paths) {
  Outcome o;
  const fs::path config = paths.configs / "toy_ofdm.toml";
  const ExperimentConfig cfg = load_config(config.string());
  const fs::path dir = paths.work / "run1" / "toy_ofdm";
  o.require(cli_train(paths, config, dir), "phydiff train exit status 0");
  if (!o.pass) return o;

  const CsvTable loss = read_csv((dir / "loss.csv").string());
  std::vector<double> l;
  for (const auto& r : loss.rows) l.push_back(std::stod(r[1]));
  if (l.size() < 150) {
    o.require(false, "loss trace too short");
    return o;
  }
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 50; ++i) first += l[i] / 50.0;
  for (std::size_t i = l.size() - 100; i < l.size(); ++i) last += l[i] / 100.0;
  o.require(last <= 0.4 * first, "(a) mean loss of the final 100 steps " + fmt(last) + " vs first 50 " + fmt(first) +
                                     ", ratio " + fmt(last / first) + " (<= 0.4)");

  const std::size_t frames = 200;
  const NoisePredictor trained = trained_model(cfg, dir);
  const NoisePredictor untrained = make_model(cfg);
  const EvalRow tr = eval_ofdm_diffusion(cfg, trained, {5.0}, frames).front();
  const EvalRow un = eval_ofdm_diffusion(cfg, untrained, {5.0}, frames).front();
  o.require(tr.gt_mse <= 0.5 * un.gt_mse, "(b) sampled-grid MSE to GT1 at 5 dB over 200 frames: trained " +
                                              fmt(tr.gt_mse) + " vs untrained " + fmt(un.gt_mse) + ", ratio " +
                                              fmt(tr.gt_mse / un.gt_mse) + " (<= 0.5)");

  const auto icsi = [&](const OfdmFrame& f, std::uint64_t) { return lmmse_receiver(f, cfg.ofdm, false); };
  const auto pcsi = [&](const OfdmFrame& f, std::uint64_t) { return lmmse_receiver(f, cfg.ofdm, true); };
  const EvalRow ic = evaluate_receiver(cfg.ofdm, "lmmse_icsi", icsi, {5.0}, frames, cfg.seed).front();
  const EvalRow pc = evaluate_receiver(cfg.ofdm, "lmmse_pcsi", pcsi, {5.0}, frames, cfg.seed).front();
  o.report("stretch (non-gating): BER at 5 dB diffusion " + fmt(tr.ber) + ", lmmse_icsi " + fmt(ic.ber) +
           ", lmmse_pcsi " + fmt(pc.ber) + (tr.ber <= ic.ber ? ": met" : ": not met"));
  return o;
}

Outcome toy_pn(const Paths& paths) {
  Outcome o;
  const fs::path config = paths.configs / "toy_pn.toml";
  const ExperimentConfig cfg = load_config(config.string());
  o.require(cfg.pn.section_len == 50 && cfg.pn.data_order == 256, "toy config uses P = 50 and 256-QAM");
  const fs::path dir = paths.work / "run1" / "toy_pn";
  o.require(cli_train(paths, config, dir), "phydiff train exit status 0");
  if (!o.pass) return o;

  const NoisePredictor model = trained_model(cfg, dir);
  const std::size_t sections = 100;
  const double snr_db = 30.0;
  std::vector<TraceRow> trace;
  const PnRow diff = eval_pn_diffusion(cfg, model, cfg.pn.level_dbchz, {snr_db}, sections, &trace).front();
  const std::size_t S = static_cast<std::size_t>(cfg.sampler_steps);
  std::vector<double> mean(S, 0.0);
  for (const auto& r : trace) mean[static_cast<std::size_t>(r.step - 1)] += r.mse / static_cast<double>(sections);
  std::string curve;
  for (double m : mean) curve += " " + fmt(m);
  o.require(trace.size() == S * sections, "trace has S rows per section");
  o.require(mean.back() <= 0.5 * mean.front(), "x0 MSE trace over 100 sections at 30 dB ends at " +
                                                   fmt(mean.back()) + " vs first step " + fmt(mean.front()) +
                                                   ", ratio " + fmt(mean.back() / mean.front()) + " (<= 0.5)");
  o.report("trace:" + curve);
  const auto psam_est = [](const PnSection& s, std::uint64_t) { return s.phi_psam; };
  PnConfig pc = cfg.pn;
  const double psam_mse = evaluate_pn(pc, "psam", psam_est, {snr_db}, sections, cfg.seed).front().mse;
  o.report("stretch (non-gating): MSE at 30 dB diffusion " + fmt(diff.mse) + ", psam " + fmt(psam_mse) +
           (diff.mse <= psam_mse ? ": met" : ": not met"));
  return o;
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string rel_path = fs::relative(e.path(), root).string();
    if (e.path().filename() == "stdout.txt") continue;  // names the output directory
    out[rel_path] = slurp(e.path());
  }
  return out;
}

Outcome determinism(const Paths& paths, bool reuse_run1) {
  Outcome o;
  for (const char* name : {"toy_ofdm", "toy_pn"}) {
    const fs::path config = paths.configs / (std::string(name) + ".toml");
    for (const char* run : {"run1", "run2"}) {
      const fs::path dir = paths.work / run / name;
      const bool have = reuse_run1 && std::string(run) == "run1" && fs::exists(dir / "checkpoint.bin");
      if (!have && !cli_train(paths, config, dir)) o.require(false, std::string(name) + " train failed");
      const std::string eval = shell_quote(paths.cli) + " eval --config " + shell_quote(config) + " --checkpoint " +
                               shell_quote(dir / "checkpoint.bin") + " --trace --svg --out " + shell_quote(dir / "eval") +
                               " > /dev/null";
      const std::string baseline = shell_quote(paths.cli) + " baseline --config " + shell_quote(config) + " --svg --out " +
                                   shell_quote(dir / "baseline") + " > /dev/null";
      o.require(run_command(eval) == 0, std::string(name) + " " + run + ": phydiff eval exit status 0");
      o.require(run_command(baseline) == 0, std::string(name) + " " + run + ": phydiff baseline exit status 0");
    }
    const auto a = tree_contents(paths.work / "run1" / name);
    const auto b = tree_contents(paths.work / "run2" / name);
    bool same = !a.empty() && a.size() == b.size();
    std::string files;
    for (const auto& [k, v] : a) {
      files += " " + k;
      auto it = b.find(k);
      same = same && it != b.end() && it->second == v;
    }
    o.require(same, std::string(name) + ": train, eval and baseline outputs byte-identical across two runs (" +
                        std::to_string(a.size()) + " files:" + files + ")");
  }
  for (const char* run : {"run1", "run2"}) {
    fs::create_directories(paths.work / run);
    o.require(run_command(shell_quote(paths.cli) + " selftest > " + shell_quote(paths.work / run / "selftest.txt")) == 0,
              std::string("selftest ") + run + " exit status 0");
  }
  o.require(slurp(paths.work / "run1" / "selftest.txt") == slurp(paths.work / "run2" / "selftest.txt"),
            "selftest output byte-identical across two runs");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  Paths paths;
  std::string configs;
  std::string work;
  std::vector<int> only;
  app.add_option("--cli", paths.cli, "phydiff binary")->required();
  app.add_option("--configs", configs, "Directory with toy_ofdm.toml and toy_pn.toml")->required();
  app.add_option("--work", work, "Scratch directory")->required();
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  paths.configs = configs;
  paths.work = work;
  fs::remove_all(paths.work);
  fs::create_directories(paths.work);

  struct Criterion {
    int id;
    std::string name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::set<int> selected(only.begin(), only.end());
  const bool reuse = selected.empty() || (selected.count(5) && selected.count(6));
  const std::vector<Criterion> criteria = {
      {1, "diffusion math", 60, diffusion_math},
      {2, "autodiff", 120, autodiff},
      {3, "OFDM baseline fidelity", 300, ofdm_baselines},
      {4, "PSAM fidelity", 120, psam},
      {5, "toy end-to-end OFDM", 1800, [&] { return toy_ofdm(paths); }},
      {6, "toy end-to-end PN", 1200, [&] { return toy_pn(paths); }},
      {7, "determinism", 0, [&] { return determinism(paths, reuse); }},
  };

  bool all = true;
  std::vector<std::string> summary;
  for (const auto& c : criteria) {
    if (!selected.empty() && selected.count(c.id) == 0) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0) o.require(secs <= c.budget_s, "runtime " + fmt(secs) + " s (<= " + fmt(c.budget_s) + " s)");
    for (const auto& n : o.notes) std::cout << "  [" << c.id << "] " << n << '\n';
    const std::string line =
        "criterion " + std::to_string(c.id) + " (" + c.name + "): " + (o.pass ? "PASS" : "FAIL") + "  " + fmt(secs) + " s";
    std::cout << line << '\n' << std::flush;
    summary.push_back(line);
    all = all && o.pass;
  }
  std::cout << "\nsummary\n";
  for (const auto& s : summary) std::cout << s << '\n';
  return all ? 0 : 1;
}
