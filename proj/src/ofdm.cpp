#include "phydiff/ofdm.hpp"

#include <algorithm>
#include <fstream>
#include <numbers>
#include <sstream>

#include "phydiff/errors.hpp"

namespace phydiff {

namespace {

double db_to_lin(double db) { return std::pow(10.0, db / 10.0); }
double lin_to_db(double lin) { return 10.0 * std::log10(lin); }

// round(x) if x is within tol of an integer, otherwise -1
long whole_samples(double x, double tol = 1e-9) {
  const double r = std::round(x);
  return std::abs(x - r) <= tol * std::max(1.0, std::abs(x)) ? static_cast<long>(r) : -1;
}

}  // namespace

// ---------------------------------------------------------------------------
// Power-delay profiles

double TdlProfile::max_delay() const {
  double m = 0.0;
  for (const auto& t : taps) m = std::max(m, t.delay_s);
  return m;
}

double TdlProfile::total_power() const {
  double p = 0.0;
  for (const auto& t : taps) p += t.power;
  return p;
}

TdlProfile TdlProfile::scaled_to(double max_delay_s) const {
  if (taps.empty()) throw ConfigError("tap profile is empty");
  const double p = total_power();
  if (!(p > 0.0)) throw ConfigError("tap profile has no power");
  const double d = max_delay();
  TdlProfile out = *this;
  for (auto& t : out.taps) {
    t.power /= p;
    if (d > 0.0) t.delay_s *= max_delay_s / d;
  }
  return out;
}

TdlProfile default_tdl_profile(double max_delay_s) {
  // delays in units of the profile's own delay spread
  const double delays[] = {0.0, 0.035, 0.612, 1.363, 1.405, 1.804};
  const double power_db[] = {0.0, -18.8, -21.0, -22.8, -17.9, -20.1};
  TdlProfile p;
  for (int i = 0; i < 6; ++i) p.taps.push_back({delays[i], db_to_lin(power_db[i]), i == 0 ? db_to_lin(13.3) : 0.0});
  return p.scaled_to(max_delay_s);
}

TdlProfile parse_tdl_profile(const std::string& text) {
  TdlProfile p;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<double> vals;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw FormatError("profile line " + std::to_string(lineno) + ": not a number: " + tok);
      }
    }
    if (vals.empty()) continue;
    if (vals.size() < 2 || vals.size() > 3) {
      throw FormatError("profile line " + std::to_string(lineno) + ": expected delay_ns power_db [rician_k_db]");
    }
    if (vals[0] < 0.0) throw FormatError("profile line " + std::to_string(lineno) + ": negative delay");
    p.taps.push_back({vals[0] * 1e-9, db_to_lin(vals[1]), vals.size() == 3 ? db_to_lin(vals[2]) : 0.0});
  }
  if (p.taps.empty()) throw FormatError("profile has no taps");
  return p;
}

TdlProfile load_tdl_profile(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open profile " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_tdl_profile(ss.str());
}

std::string format_tdl_profile(const TdlProfile& profile) {
  std::ostringstream os;
  os.precision(17);
  os << "# delay_ns power_db [rician_k_db]\n";
  for (const auto& t : profile.taps) {
    os << t.delay_s * 1e9 << ' ' << lin_to_db(t.power);
    if (t.k_factor > 0.0) os << ' ' << lin_to_db(t.k_factor);
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Configuration

void OfdmConfig::validate() const {
  if (n_fft == 0 || n_sym == 0 || n_rx == 0) throw ConfigError("OFDM extents must be positive");
  if (!(scs_hz > 0.0)) throw ConfigError("subcarrier spacing must be positive");
  if (pilot_symbols.empty()) throw ConfigError("at least one pilot symbol is required");
  for (std::size_t i = 0; i < pilot_symbols.size(); ++i) {
    if (pilot_symbols[i] >= n_sym) throw ConfigError("pilot symbol index outside the frame");
    for (std::size_t j = 0; j < i; ++j) {
      if (pilot_symbols[i] == pilot_symbols[j]) throw ConfigError("pilot symbol indices must be distinct");
    }
  }
  if (pilot_symbols.size() >= n_sym) throw ConfigError("frame has no data symbols");
  (void)QamConstellation(data_order);
  (void)QamConstellation(pilot_order);
  const double cp_s = static_cast<double>(cp_len) / sample_rate();
  if (cp_s < max_delay_s) throw ConfigError("cyclic prefix is shorter than the maximum delay spread");
  if (profile.taps.empty()) throw ConfigError("tap profile is empty");
  if (profile.max_delay() > max_delay_s * (1.0 + 1e-12)) throw ConfigError("tap delays exceed the maximum delay spread");
}

bool OfdmConfig::is_pilot(std::size_t n) const {
  return std::find(pilot_symbols.begin(), pilot_symbols.end(), n) != pilot_symbols.end();
}

std::size_t OfdmConfig::data_bits_per_frame() const {
  return n_fft * data_symbol_count() * static_cast<std::size_t>(QamConstellation(data_order).bits_per_symbol());
}

// ---------------------------------------------------------------------------
// Channel

ChannelRealization tdl_realize(const TdlProfile& profile, std::size_t n_rx, RngStream& rng) {
  ChannelRealization ch;
  for (const auto& t : profile.taps) ch.delays_s.push_back(t.delay_s);
  ch.gains.assign(n_rx, std::vector<cplx>(profile.taps.size()));
  for (std::size_t m = 0; m < n_rx; ++m) {
    for (std::size_t l = 0; l < profile.taps.size(); ++l) {
      const auto& t = profile.taps[l];
      const double k = t.k_factor;
      const double los = std::sqrt(t.power * k / (k + 1.0));
      ch.gains[m][l] = cplx(los, 0.0) + rng.complex_normal(t.power / (k + 1.0));
    }
  }
  return ch;
}

Csi freq_response(const ChannelRealization& ch, const OfdmConfig& cfg) {
  Csi h(cfg.n_fft, ch.gains.size());
  for (std::size_t k = 0; k < cfg.n_fft; ++k) {
    const double f = centered_index(k, cfg.n_fft) * cfg.scs_hz;
    for (std::size_t m = 0; m < ch.gains.size(); ++m) {
      cplx acc{0.0, 0.0};
      for (std::size_t l = 0; l < ch.delays_s.size(); ++l) {
        acc += ch.gains[m][l] * std::polar(1.0, -2.0 * std::numbers::pi * f * ch.delays_s[l]);
      }
      h.at(k, m) = acc;
    }
  }
  return h;
}

TxFrame build_tx_grid(const OfdmConfig& cfg, RngStream& data_rng, RngStream& pilot_rng) {
  const QamConstellation data(cfg.data_order);
  const QamConstellation pilot(cfg.pilot_order);
  TxFrame f{Grid(cfg.n_fft, cfg.n_sym, 1), Grid(cfg.n_fft, cfg.n_sym, 1), {}};
  f.bits.resize(cfg.data_bits_per_frame());
  for (auto& b : f.bits) b = static_cast<std::uint8_t>(data_rng.bit());
  const auto syms = data.map(f.bits);
  std::vector<std::uint8_t> pb(static_cast<std::size_t>(pilot.bits_per_symbol()));
  std::size_t s = 0;
  for (std::size_t k = 0; k < cfg.n_fft; ++k) {
    for (std::size_t n = 0; n < cfg.n_sym; ++n) {
      if (cfg.is_pilot(n)) {
        for (auto& b : pb) b = static_cast<std::uint8_t>(pilot_rng.bit());
        const cplx p = pilot.map_one(pb);
        f.grid.at(k, n) = p;
        f.pilots.at(k, n) = p;
      } else {
        f.grid.at(k, n) = syms[s++];
      }
    }
  }
  return f;
}

Grid apply_channel(const Grid& x, const Csi& h, double noise_var, RngStream& rng) {
  if (x.n_ant != 1 || x.n_sc != h.n_sc) throw ShapeError("apply_channel: grid and channel extents disagree");
  Grid y(x.n_sc, x.n_sym, h.n_rx);
  for (std::size_t k = 0; k < x.n_sc; ++k) {
    for (std::size_t n = 0; n < x.n_sym; ++n) {
      for (std::size_t m = 0; m < h.n_rx; ++m) {
        y.at(k, n, m) = h.at(k, m) * x.at(k, n) + (noise_var > 0.0 ? rng.complex_normal(noise_var) : cplx{});
      }
    }
  }
  return y;
}

Grid apply_channel_time_domain(const Grid& x, const ChannelRealization& ch, const OfdmConfig& cfg) {
  const std::size_t N = cfg.n_fft, cp = cfg.cp_len, L = N + cp;
  if (x.n_ant != 1 || x.n_sc != N) throw ShapeError("apply_channel_time_domain: grid extents disagree");
  std::vector<long> d;
  for (double tau : ch.delays_s) {
    const long s = whole_samples(tau * cfg.sample_rate());
    if (s < 0) throw ContractError("time-domain channel needs whole-sample delays");
    if (static_cast<std::size_t>(s) > cp) throw ContractError("tap delay exceeds the cyclic prefix");
    d.push_back(s);
  }
  const double norm = 1.0 / std::sqrt(static_cast<double>(N));
  auto bin_of = [N](std::size_t k) { return (k + N - N / 2) % N; };

  std::vector<cplx> tx(x.n_sym * L);
  for (std::size_t n = 0; n < x.n_sym; ++n) {
    std::vector<cplx> freq(N);
    for (std::size_t k = 0; k < N; ++k) freq[bin_of(k)] = x.at(k, n);
    std::vector<cplx> time(N);
    for (std::size_t t = 0; t < N; ++t) {
      cplx acc{};
      for (std::size_t b = 0; b < N; ++b) acc += freq[b] * std::polar(1.0, 2.0 * std::numbers::pi * double(b * t % N) / N);
      time[t] = acc * norm;
    }
    for (std::size_t t = 0; t < cp; ++t) tx[n * L + t] = time[N - cp + t];
    for (std::size_t t = 0; t < N; ++t) tx[n * L + cp + t] = time[t];
  }

  Grid y(N, x.n_sym, ch.gains.size());
  for (std::size_t m = 0; m < ch.gains.size(); ++m) {
    std::vector<cplx> rx(tx.size());
    for (std::size_t t = 0; t < tx.size(); ++t) {
      for (std::size_t l = 0; l < d.size(); ++l) {
        if (t >= static_cast<std::size_t>(d[l])) rx[t] += ch.gains[m][l] * tx[t - d[l]];
      }
    }
    for (std::size_t n = 0; n < x.n_sym; ++n) {
      for (std::size_t k = 0; k < N; ++k) {
        const std::size_t b = bin_of(k);
        cplx acc{};
        for (std::size_t t = 0; t < N; ++t) {
          acc += rx[n * L + cp + t] * std::polar(1.0, -2.0 * std::numbers::pi * double(b * t % N) / N);
        }
        y.at(k, n, m) = acc * norm;
      }
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Receivers

Grid Equalized::unbiased() const {
  Grid out = estimate;
  for (std::size_t k = 0; k < out.n_sc; ++k) {
    for (std::size_t n = 0; n < out.n_sym; ++n) out.at(k, n) = gain[k] > 0.0 ? estimate.at(k, n) / gain[k] : cplx{};
  }
  return out;
}

Equalized lmmse_equalize(const Grid& y, const Csi& h, double noise_var) {
  if (y.n_sc != h.n_sc || y.n_ant != h.n_rx) throw ShapeError("lmmse_equalize: grid and channel extents disagree");
  Equalized e{Grid(y.n_sc, y.n_sym, 1), std::vector<double>(y.n_sc)};
  for (std::size_t k = 0; k < y.n_sc; ++k) {
    double hh = 0.0;
    for (std::size_t m = 0; m < h.n_rx; ++m) hh += std::norm(h.at(k, m));
    const double denom = hh + noise_var;
    e.gain[k] = denom > 0.0 ? hh / denom : 0.0;
    for (std::size_t n = 0; n < y.n_sym; ++n) {
      cplx acc{};
      for (std::size_t m = 0; m < h.n_rx; ++m) acc += std::conj(h.at(k, m)) * y.at(k, n, m);
      e.estimate.at(k, n) = denom > 0.0 ? acc / denom : cplx{};
    }
  }
  return e;
}

Csi ls_estimate(const Grid& y, const Grid& pilots, const OfdmConfig& cfg) {
  if (y.n_sc != pilots.n_sc || y.n_sym != pilots.n_sym) throw ShapeError("ls_estimate: grid extents disagree");
  Csi h(y.n_sc, y.n_ant);
  for (std::size_t k = 0; k < y.n_sc; ++k) {
    for (std::size_t m = 0; m < y.n_ant; ++m) {
      cplx acc{};
      int used = 0;
      for (std::size_t n : cfg.pilot_symbols) {
        const cplx p = pilots.at(k, n);
        if (p == cplx{}) continue;
        acc += y.at(k, n, m) / p;
        ++used;
      }
      h.at(k, m) = used ? acc / static_cast<double>(used) : cplx{};
    }
  }
  return h;
}

OfdmFrame simulate_frame(const OfdmConfig& cfg, double snr_db, std::uint64_t master, const StreamKey& key) {
  RngStream data = derive_rng(master, {key.tag + ".data", key.index});
  RngStream pilot = derive_rng(master, {key.tag + ".pilot", key.index});
  RngStream chan = derive_rng(master, {key.tag + ".channel", key.index});
  RngStream noise = derive_rng(master, {key.tag + ".noise", key.index});
  OfdmFrame f;
  f.tx = build_tx_grid(cfg, data, pilot);
  f.channel = tdl_realize(cfg.profile, cfg.n_rx, chan);
  f.h = freq_response(f.channel, cfg);
  f.noise_var = noise_var_from_snr_db(snr_db);
  f.rx = apply_channel(f.tx.grid, f.h, f.noise_var, noise);
  return f;
}

// ---------------------------------------------------------------------------
// Tensor assembly

Condition assemble_xp(const Grid& rx, const Grid& pilots) {
  if (rx.n_sc != pilots.n_sc || rx.n_sym != pilots.n_sym || pilots.n_ant != 1) {
    throw ShapeError("assemble_xp: grid extents disagree");
  }
  double ss = 0.0;
  for (const cplx& v : rx.v) ss += v.real() * v.real() + v.imag() * v.imag();
  const double rms = std::sqrt(ss / (2.0 * static_cast<double>(rx.v.size())));
  Condition c{Tensor({rx.n_sc, rx.n_sym, 2 * rx.n_ant + 2}), rms > 0.0 ? rms : 1.0};
  const double inv = 1.0 / c.scale;
  for (std::size_t k = 0; k < rx.n_sc; ++k) {
    for (std::size_t n = 0; n < rx.n_sym; ++n) {
      for (std::size_t m = 0; m < rx.n_ant; ++m) {
        c.xc.at(k, n, 2 * m) = rx.at(k, n, m).real() * inv;
        c.xc.at(k, n, 2 * m + 1) = rx.at(k, n, m).imag() * inv;
      }
      c.xc.at(k, n, 2 * rx.n_ant) = pilots.at(k, n).real() * inv;
      c.xc.at(k, n, 2 * rx.n_ant + 1) = pilots.at(k, n).imag() * inv;
    }
  }
  return c;
}

Tensor grid_to_tensor(const Grid& g) {
  if (g.n_ant != 1) throw ShapeError("grid_to_tensor: expected a single-antenna grid");
  Tensor t({g.n_sc, g.n_sym, 2});
  for (std::size_t k = 0; k < g.n_sc; ++k) {
    for (std::size_t n = 0; n < g.n_sym; ++n) {
      t.at(k, n, 0) = g.at(k, n).real();
      t.at(k, n, 1) = g.at(k, n).imag();
    }
  }
  return t;
}

Grid tensor_to_grid(const Tensor& t) {
  if (t.rank() != 3 || t.dim(2) != 2) throw ShapeError("tensor_to_grid: expected H x W x 2, got " + shape_str(t.shape()));
  Grid g(t.dim(0), t.dim(1), 1);
  for (std::size_t k = 0; k < g.n_sc; ++k) {
    for (std::size_t n = 0; n < g.n_sym; ++n) g.at(k, n) = cplx(t.at(k, n, 0), t.at(k, n, 1));
  }
  return g;
}

Tensor assemble_x0(GroundTruth mode, const OfdmFrame& frame) {
  if (mode == GroundTruth::Transmitted) return grid_to_tensor(frame.tx.grid);
  return grid_to_tensor(lmmse_equalize(frame.rx, frame.h, frame.noise_var).estimate);
}

std::vector<cplx> data_symbols(const Grid& g, const OfdmConfig& cfg) {
  std::vector<cplx> out;
  out.reserve(g.n_sc * cfg.data_symbol_count());
  for (std::size_t k = 0; k < g.n_sc; ++k) {
    for (std::size_t n = 0; n < g.n_sym; ++n) {
      if (!cfg.is_pilot(n)) out.push_back(g.at(k, n));
    }
  }
  return out;
}

double data_mse(const Grid& a, const Grid& b, const OfdmConfig& cfg) {
  const auto x = data_symbols(a, cfg), y = data_symbols(b, cfg);
  if (x.size() != y.size() || x.empty()) throw ShapeError("data_mse: grid extents disagree");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::norm(x[i] - y[i]);
  return s / static_cast<double>(x.size());
}

ReceiverOutput lmmse_receiver(const OfdmFrame& frame, const OfdmConfig& cfg, bool perfect_csi) {
  const Csi h = perfect_csi ? frame.h : ls_estimate(frame.rx, frame.tx.pilots, cfg);
  Equalized e = lmmse_equalize(frame.rx, h, frame.noise_var);
  Grid d = e.unbiased();
  return {std::move(e.estimate), std::move(d)};
}

std::vector<EvalRow> evaluate_receiver(const OfdmConfig& cfg, const std::string& name, const Receiver& rx,
                                       const std::vector<double>& snrs_db, std::size_t frames, std::uint64_t master) {
  if (frames == 0) throw ConfigError("evaluation needs at least one frame");
  const QamConstellation qam(cfg.data_order);
  std::vector<EvalRow> rows;
  for (double snr : snrs_db) {
    std::size_t errors = 0, bits = 0;
    double mse = 0.0, gt = 0.0;
    for (std::size_t f = 0; f < frames; ++f) {
      const OfdmFrame frame = simulate_frame(cfg, snr, master, {"ofdm.eval", f});
      const ReceiverOutput out = rx(frame, f);
      const auto est_bits = qam.demap(data_symbols(out.decisions, cfg));
      for (std::size_t i = 0; i < est_bits.size(); ++i) errors += est_bits[i] != frame.tx.bits[i];
      bits += est_bits.size();
      mse += data_mse(out.estimate, frame.tx.grid, cfg);
      const Grid gt1 = lmmse_equalize(frame.rx, frame.h, frame.noise_var).estimate;
      double g = 0.0;
      for (std::size_t i = 0; i < gt1.v.size(); ++i) g += std::norm(out.estimate.v[i] - gt1.v[i]);
      gt += g / static_cast<double>(gt1.v.size());
    }
    rows.push_back({snr, name, static_cast<double>(errors) / static_cast<double>(bits),
                    mse / static_cast<double>(frames), gt / static_cast<double>(frames)});
  }
  return rows;
}

}  // namespace phydiff
