#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "phydiff/adam.hpp"
#include "phydiff/errors.hpp"
#include "phydiff/params.hpp"

namespace phydiff {

// Refusal to load parameters trained under a different architecture.
class DigestMismatch : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// On-disk layout:
///   8 bytes   magic "PHYDCKPT"
///   u32 LE    format version
///   u32 LE    header length, then that many bytes of UTF-8 header text
///   f64 LE    parameter values, then Adam first moments, then second moments,
///             each in header order
/// Header lines: "digest <hex>", "step <n>", "adam_step <n>",
/// "status ok|failed", then one "param <id> <d0>x<d1>..." per tensor.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string digest;
  long step = 0;
  bool failed = false;  // training aborted on a non-finite loss
  std::vector<std::string> ids;
  std::vector<Tensor> values;
  std::uint64_t adam_step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  static Checkpoint capture(const std::string& digest, long step, const ParameterSet& params,
                            const OptimizerState& optimizer);
  // Copies values into params after checking ids and shapes.
  void restore(ParameterSet& params) const;
  void restore(OptimizerState& optimizer) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
// FormatError on a malformed file; DigestMismatch when expected_digest is
// non-empty and differs from the stored digest.
Checkpoint load_checkpoint(const std::string& path, const std::string& expected_digest = "");

}  // namespace phydiff
