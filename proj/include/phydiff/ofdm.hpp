#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "phydiff/qam.hpp"
#include "phydiff/rng.hpp"
#include "phydiff/tensor.hpp"

namespace phydiff {

/// Complex resource grid indexed [subcarrier][symbol][antenna].
struct Grid {
  std::size_t n_sc = 0;
  std::size_t n_sym = 0;
  std::size_t n_ant = 0;
  std::vector<cplx> v;

  Grid() = default;
  Grid(std::size_t sc, std::size_t sym, std::size_t ant) : n_sc(sc), n_sym(sym), n_ant(ant), v(sc * sym * ant) {}
  cplx& at(std::size_t k, std::size_t n, std::size_t m = 0) { return v[(k * n_sym + n) * n_ant + m]; }
  [[nodiscard]] cplx at(std::size_t k, std::size_t n, std::size_t m = 0) const { return v[(k * n_sym + n) * n_ant + m]; }
};

/// Per-subcarrier channel vectors, indexed [subcarrier][antenna].
struct Csi {
  std::size_t n_sc = 0;
  std::size_t n_rx = 0;
  std::vector<cplx> h;

  Csi() = default;
  Csi(std::size_t sc, std::size_t rx) : n_sc(sc), n_rx(rx), h(sc * rx) {}
  cplx& at(std::size_t k, std::size_t m) { return h[k * n_rx + m]; }
  [[nodiscard]] cplx at(std::size_t k, std::size_t m) const { return h[k * n_rx + m]; }
};

struct TdlTap {
  double delay_s = 0.0;
  double power = 0.0;     // linear, expected |a|^2
  double k_factor = 0.0;  // linear Rician K; 0 is Rayleigh
};

struct TdlProfile {
  std::vector<TdlTap> taps;

  [[nodiscard]] double max_delay() const;
  [[nodiscard]] double total_power() const;
  // Delays stretched so the largest equals max_delay_s, powers summing to 1.
  [[nodiscard]] TdlProfile scaled_to(double max_delay_s) const;
};

// Six-tap line-of-sight profile with a K = 13.3 dB first tap, scaled to max_delay_s.
TdlProfile default_tdl_profile(double max_delay_s);
// Rows "delay_ns power_db [rician_k_db]"; '#' starts a comment.
TdlProfile parse_tdl_profile(const std::string& text);
TdlProfile load_tdl_profile(const std::string& path);
std::string format_tdl_profile(const TdlProfile& profile);

struct OfdmConfig {
  std::size_t n_fft = 64;
  std::size_t n_sym = 14;
  std::size_t cp_len = 6;
  double scs_hz = 30e3;
  std::size_t n_rx = 8;
  int data_order = 16;
  int pilot_order = 4;
  std::vector<std::size_t> pilot_symbols{3, 10};
  double max_delay_s = 100e-9;
  TdlProfile profile = default_tdl_profile(100e-9);

  void validate() const;
  [[nodiscard]] double sample_rate() const noexcept { return static_cast<double>(n_fft) * scs_hz; }
  [[nodiscard]] bool is_pilot(std::size_t n) const;
  [[nodiscard]] std::size_t data_symbol_count() const noexcept { return n_sym - pilot_symbols.size(); }
  [[nodiscard]] std::size_t data_bits_per_frame() const;
  // Channels of x_p: Re/Im per antenna plus Re/Im of the pilot grid.
  [[nodiscard]] std::size_t condition_channels() const noexcept { return 2 * n_rx + 2; }
};

struct ChannelRealization {
  std::vector<double> delays_s;
  std::vector<std::vector<cplx>> gains;  // [antenna][tap]
};

ChannelRealization tdl_realize(const TdlProfile& profile, std::size_t n_rx, RngStream& rng);

// Centered subcarrier index k - N/2 of grid row k.
inline double centered_index(std::size_t k, std::size_t n_fft) {
  return static_cast<double>(k) - static_cast<double>(n_fft / 2);
}

// H_m[k] = sum_l a_{m,l} exp(-j 2 pi k_c df tau_l), k_c centered.
Csi freq_response(const ChannelRealization& ch, const OfdmConfig& cfg);

struct TxFrame {
  Grid grid;    // single antenna, unit average power
  Grid pilots;  // pilot symbols only, zero at data positions
  std::vector<std::uint8_t> bits;
};

// Data bits from data_rng fill the non-pilot symbols; pilot values come from pilot_rng.
TxFrame build_tx_grid(const OfdmConfig& cfg, RngStream& data_rng, RngStream& pilot_rng);

// Y_m[k,n] = H_m[k] X[k,n] + N, E|N|^2 = noise_var.
Grid apply_channel(const Grid& x, const Csi& h, double noise_var, RngStream& rng);

// Noiseless reference chain: IDFT, cyclic prefix, tap convolution over the
// serial stream, prefix removal, DFT. Delays must be whole samples.
Grid apply_channel_time_domain(const Grid& x, const ChannelRealization& ch, const OfdmConfig& cfg);

struct Equalized {
  Grid estimate;              // h^H y / (|h|^2 + s2)
  std::vector<double> gain;   // per subcarrier |h|^2 / (|h|^2 + s2)
  // estimate / gain: removes the LMMSE shrinkage before hard decisions.
  [[nodiscard]] Grid unbiased() const;
};

Equalized lmmse_equalize(const Grid& y, const Csi& h, double noise_var);

// Averages Y/X over the pilot symbols of each subcarrier.
Csi ls_estimate(const Grid& y, const Grid& pilots, const OfdmConfig& cfg);

inline double noise_var_from_snr_db(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

struct OfdmFrame {
  TxFrame tx;
  ChannelRealization channel;
  Csi h;
  double noise_var = 0.0;
  Grid rx;
};

// Every random draw of a frame comes from streams derived from (master, key).
OfdmFrame simulate_frame(const OfdmConfig& cfg, double snr_db, std::uint64_t master, const StreamKey& key);

struct Condition {
  Tensor xc;
  double scale = 1.0;  // received samples were divided by this
};

// N_fft x N_sym x (2 N_rx + 2), channels [Re y_0, Im y_0, ..., Re p, Im p].
Condition assemble_xp(const Grid& rx, const Grid& pilots);

enum class GroundTruth { Lmmse, Transmitted };

// N_fft x N_sym x 2 (Re, Im).
Tensor assemble_x0(GroundTruth mode, const OfdmFrame& frame);

Tensor grid_to_tensor(const Grid& g);
Grid tensor_to_grid(const Tensor& t);

// Symbols at data positions in (subcarrier, symbol) order.
std::vector<cplx> data_symbols(const Grid& g, const OfdmConfig& cfg);
// Mean |a - b|^2 over data positions.
double data_mse(const Grid& a, const Grid& b, const OfdmConfig& cfg);

struct ReceiverOutput {
  Grid estimate;   // symbol estimate scored by the grid MSE
  Grid decisions;  // input to the hard demapper
};

// Second argument: the evaluation frame index, for receivers with their own
// random streams.
using Receiver = std::function<ReceiverOutput(const OfdmFrame&, std::uint64_t)>;

ReceiverOutput lmmse_receiver(const OfdmFrame& frame, const OfdmConfig& cfg, bool perfect_csi);

struct EvalRow {
  double snr_db = 0.0;
  std::string receiver;
  double ber = 0.0;
  double grid_mse = 0.0;
  double gt_mse = 0.0;  // against the perfect-CSI LMMSE output
};

// Frames are keyed ("ofdm.eval", f) so every receiver and SNR sees the same
// transmit data and channel.
std::vector<EvalRow> evaluate_receiver(const OfdmConfig& cfg, const std::string& name, const Receiver& rx,
                                       const std::vector<double>& snrs_db, std::size_t frames, std::uint64_t master);

}  // namespace phydiff
