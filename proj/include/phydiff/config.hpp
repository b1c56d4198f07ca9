#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "phydiff/diffusion.hpp"
#include "phydiff/npnn.hpp"
#include "phydiff/ofdm.hpp"
#include "phydiff/pn.hpp"

namespace phydiff {

enum class Scenario { OfdmDetect, PnEstimate };

std::string scenario_name(Scenario s);
std::string ground_truth_name(GroundTruth g);

/// Everything one train / eval / baseline run needs. Defaults are the
/// full-scale values; the scenario-dependent SNR ranges are applied by
/// parse_config when the keys are absent.
struct ExperimentConfig {
  Scenario scenario = Scenario::OfdmDetect;
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  // [schedule]
  int diffusion_steps = 500;  // T
  double beta_min = 5e-4;
  double beta_max = 1e-2;

  // [sampler]
  int sampler_steps = 15;  // S
  double eta = 1.0;

  // [npnn]
  std::size_t q1 = 64;
  std::size_t q2 = 64;
  std::size_t q_last = 128;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t time_dim = 16;
  double max_period = 1e4;
  std::size_t base_width = 32;

  // [train]
  double learning_rate = 8e-5;
  long train_steps = 10000;
  std::size_t batch_size = 32;
  double train_snr_min_db = -4.0;
  double train_snr_max_db = 5.0;
  GroundTruth ground_truth = GroundTruth::Lmmse;

  // [ofdm]; ofdm.max_delay_s and ofdm.profile follow max_delay_ns and
  // profile_path (empty: built-in profile).
  OfdmConfig ofdm;
  double max_delay_ns = 100.0;
  std::string profile_path;

  // [pn]
  PnConfig pn;

  // [eval]
  std::vector<double> eval_snr_db{-4, -3, -2, -1, 0, 1, 2, 3, 4, 5};
  std::size_t eval_frames = 200;  // frames (ofdm) or sections (pn) per SNR point
  std::vector<double> pn_levels_dbchz{-88.0};
  bool trace = false;

  // Throws ConfigError naming the offending "section.key".
  void validate() const;

  [[nodiscard]] NpnnSpec npnn_spec() const;
  [[nodiscard]] Schedule schedule() const;
  [[nodiscard]] TauSet tau() const;
  // Architecture fingerprint: scenario, tensor shapes, NPNN and schedule.
  [[nodiscard]] std::string digest() const;

  bool operator==(const ExperimentConfig& other) const;
};

// `base_dir` resolves a relative ofdm.profile path.
ExperimentConfig parse_config(const std::string& text, const std::string& base_dir = ".");
ExperimentConfig load_config(const std::string& path);
// Every key, in a form parse_config reads back to an equal config.
std::string format_config(const ExperimentConfig& cfg);

}  // namespace phydiff
