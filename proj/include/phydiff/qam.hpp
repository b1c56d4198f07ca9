#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

namespace phydiff {

using cplx = std::complex<double>;

/// Gray-coded square QAM with unit average power (order 4, 16, 64 or 256).
/// Bits b0 b1 b2 ... of a symbol alternate between the I and Q axes: even
/// positions select the in-phase amplitude, odd positions the quadrature one.
/// Per axis the amplitude is (1-2b0)(2^(k-1) - (1-2b2)(2^(k-2) - ...)), which
/// is the usual cellular-standard table (QPSK 00 -> (1+j)/sqrt2).
class QamConstellation {
 public:
  explicit QamConstellation(int order);

  [[nodiscard]] int order() const noexcept { return order_; }
  [[nodiscard]] int bits_per_symbol() const noexcept { return bits_; }
  // Distance from a constellation point to the nearest decision boundary.
  [[nodiscard]] double half_spacing() const noexcept { return scale_; }
  // points()[i] is the symbol for the bit label i, with b0 as the MSB.
  [[nodiscard]] const std::vector<cplx>& points() const noexcept { return points_; }

  [[nodiscard]] std::vector<cplx> map(std::span<const std::uint8_t> bits) const;
  // Hard decision per axis; ties resolve to the smaller bit label.
  [[nodiscard]] std::vector<std::uint8_t> demap(std::span<const cplx> symbols) const;
  [[nodiscard]] cplx map_one(std::span<const std::uint8_t> bits) const;
  // Label of the nearest point, same tie rule as demap().
  [[nodiscard]] int nearest_label(cplx y) const;

 private:
  [[nodiscard]] int decide_axis(double v) const;

  int order_;
  int bits_;
  int axis_bits_;
  double scale_;
  std::vector<cplx> points_;
  // Per-axis amplitude levels in ascending order, and the axis bit label of each.
  std::vector<int> level_label_;
};

std::vector<cplx> qam_map(std::span<const std::uint8_t> bits, int order);
std::vector<std::uint8_t> qam_demap(std::span<const cplx> symbols, int order);

// Fraction of differing bits.
double bit_error_rate(std::span<const std::uint8_t> ref, std::span<const std::uint8_t> est);

}  // namespace phydiff
