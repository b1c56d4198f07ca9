#include "phydiff/qam.hpp"

#include <cmath>

#include "phydiff/errors.hpp"

namespace phydiff {

namespace {

// Axis bits a0 a1 ... (a0 = sign bit) -> odd integer amplitude, innermost first:
// g_{k-1} = 1 - 2a_{k-1}, g_i = (1 - 2a_i)(2^(k-1-i) - g_{i+1}).
int axis_amplitude(const std::vector<int>& a) {
  const int k = static_cast<int>(a.size());
  int g = 1 - 2 * a[k - 1];
  for (int i = k - 2; i >= 0; --i) g = (1 - 2 * a[i]) * ((1 << (k - 1 - i)) - g);
  return g;
}

}  // namespace

QamConstellation::QamConstellation(int order) : order_(order) {
  if (order != 4 && order != 16 && order != 64 && order != 256) {
    throw ConfigError("unsupported QAM order " + std::to_string(order));
  }
  bits_ = 0;
  while ((1 << bits_) < order) ++bits_;
  axis_bits_ = bits_ / 2;
  const int levels = 1 << axis_bits_;
  scale_ = 1.0 / std::sqrt(2.0 * (order - 1) / 3.0);

  std::vector<int> amp_of_label(levels);
  for (int label = 0; label < levels; ++label) {
    std::vector<int> a(axis_bits_);
    for (int i = 0; i < axis_bits_; ++i) a[i] = (label >> (axis_bits_ - 1 - i)) & 1;
    amp_of_label[label] = axis_amplitude(a);
  }
  // amplitude -(levels-1), ..., levels-1 at index (amp + levels - 1)/2
  level_label_.assign(levels, -1);
  for (int label = 0; label < levels; ++label) {
    const int idx = (amp_of_label[label] + levels - 1) / 2;
    if (idx < 0 || idx >= levels || level_label_[idx] != -1) throw ContractError("QAM axis table is not a bijection");
    level_label_[idx] = label;
  }

  points_.resize(order);
  for (int label = 0; label < order; ++label) {
    int li = 0, lq = 0;
    for (int i = 0; i < bits_; ++i) {
      const int b = (label >> (bits_ - 1 - i)) & 1;
      if (i % 2 == 0) li = (li << 1) | b;
      else lq = (lq << 1) | b;
    }
    points_[label] = cplx(scale_ * amp_of_label[li], scale_ * amp_of_label[lq]);
  }
}

cplx QamConstellation::map_one(std::span<const std::uint8_t> bits) const {
  int label = 0;
  for (int i = 0; i < bits_; ++i) label = (label << 1) | (bits[i] & 1);
  return points_[label];
}

std::vector<cplx> QamConstellation::map(std::span<const std::uint8_t> bits) const {
  if (bits.size() % bits_ != 0) {
    throw ShapeError("qam_map: " + std::to_string(bits.size()) + " bits is not a multiple of " + std::to_string(bits_));
  }
  std::vector<cplx> out(bits.size() / bits_);
  for (std::size_t s = 0; s < out.size(); ++s) out[s] = map_one(bits.subspan(s * bits_, bits_));
  return out;
}

int QamConstellation::decide_axis(double v) const {
  const int levels = 1 << axis_bits_;
  // Nearest odd level. Distances within kTie (in units of half the level
  // spacing) count as a boundary tie, which goes to the smaller label; this
  // keeps midpoints that are off by an ulp from flipping between labels.
  constexpr double kTie = 1e-9;
  const double u = v / scale_;
  int best = 0;
  double best_d = std::abs(u - (1 - levels));
  for (int idx = 1; idx < levels; ++idx) {
    const double d = std::abs(u - (2 * idx + 1 - levels));
    if (d < best_d - kTie || (d <= best_d + kTie && level_label_[idx] < level_label_[best])) {
      best = idx;
      best_d = d;
    }
  }
  return level_label_[best];
}

int QamConstellation::nearest_label(cplx y) const {
  const int li = decide_axis(y.real()), lq = decide_axis(y.imag());
  int label = 0;
  for (int i = 0; i < axis_bits_; ++i) {
    label = (label << 1) | ((li >> (axis_bits_ - 1 - i)) & 1);
    label = (label << 1) | ((lq >> (axis_bits_ - 1 - i)) & 1);
  }
  return label;
}

std::vector<std::uint8_t> QamConstellation::demap(std::span<const cplx> symbols) const {
  std::vector<std::uint8_t> bits(symbols.size() * bits_);
  for (std::size_t s = 0; s < symbols.size(); ++s) {
    const int li = decide_axis(symbols[s].real());
    const int lq = decide_axis(symbols[s].imag());
    for (int i = 0; i < axis_bits_; ++i) {
      bits[s * bits_ + 2 * i] = static_cast<std::uint8_t>((li >> (axis_bits_ - 1 - i)) & 1);
      bits[s * bits_ + 2 * i + 1] = static_cast<std::uint8_t>((lq >> (axis_bits_ - 1 - i)) & 1);
    }
  }
  return bits;
}

std::vector<cplx> qam_map(std::span<const std::uint8_t> bits, int order) { return QamConstellation(order).map(bits); }

std::vector<std::uint8_t> qam_demap(std::span<const cplx> symbols, int order) {
  return QamConstellation(order).demap(symbols);
}

double bit_error_rate(std::span<const std::uint8_t> ref, std::span<const std::uint8_t> est) {
  if (ref.size() != est.size()) throw ContractError("bit_error_rate: length mismatch");
  if (ref.empty()) throw ContractError("bit_error_rate: no bits");
  std::size_t errors = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) errors += (ref[i] & 1) != (est[i] & 1);
  return static_cast<double>(errors) / static_cast<double>(ref.size());
}

}  // namespace phydiff
