#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "phydiff/checkpoint.hpp"
#include "phydiff/config.hpp"
#include "phydiff/csv.hpp"
#include "phydiff/diffusion.hpp"
#include "phydiff/npnn.hpp"
#include "phydiff/ofdm.hpp"
#include "phydiff/pn.hpp"

namespace phydiff {

// Freshly initialized network for the config's scenario and seed.
NoisePredictor make_model(const ExperimentConfig& cfg);

// Training pairs keyed ("ofdm.train", i) or ("pn.train", i), with the SNR of
// pair i drawn uniformly from [train.snr_min_db, train.snr_max_db].
TrainBatchSource make_batch_source(const ExperimentConfig& cfg);

/// One reverse step of one evaluated frame or section.
struct TraceRow {
  std::uint64_t index = 0;
  double snr_db = 0.0;
  double level_dbchz = 0.0;  // pn only
  int step = 0;              // 1 = first reverse step (tau_S)
  int tau = 0;
  double mse = 0.0;          // x0_hat against the transmitted grid (ofdm) or true phase (pn)
};

// Diffusion receiver rows for every SNR of `snrs_db`; appends S trace rows
// per frame when `trace` is non-null.
std::vector<EvalRow> eval_ofdm_diffusion(const ExperimentConfig& cfg, const NoisePredictor& model,
                                         const std::vector<double>& snrs_db, std::size_t frames,
                                         std::vector<TraceRow>* trace = nullptr);

std::vector<PnRow> eval_pn_diffusion(const ExperimentConfig& cfg, const NoisePredictor& model, double level_dbchz,
                                     const std::vector<double>& snrs_db, std::size_t sections,
                                     std::vector<TraceRow>* trace = nullptr);

struct RunOptions {
  std::string out_dir;        // empty: the config's out_dir
  bool svg = false;
  bool trace = false;         // eval only; also enabled by eval.trace
  std::ostream* log = nullptr;
};

struct TrainOutcome {
  std::string checkpoint_path;
  std::string loss_path;
  std::vector<double> losses;
};

// Writes checkpoint.bin and loss.csv (plus loss.svg). On a non-finite loss
// the checkpoint is written with status "failed" and NonFiniteLoss rethrown.
TrainOutcome run_train(const ExperimentConfig& cfg, const RunOptions& opts = {});

// Writes metrics.csv for the diffusion model and the baselines, plus
// trace.csv when tracing. Throws DigestMismatch for a foreign checkpoint.
std::string run_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path, const RunOptions& opts = {});

// Baselines only, no checkpoint; writes baseline.csv.
std::string run_baseline(const ExperimentConfig& cfg, const RunOptions& opts = {});

// Header + rows for each scenario's metrics file, rows sorted by SNR then method.
CsvTable ofdm_metrics_table(std::vector<EvalRow> rows);
CsvTable pn_metrics_table(std::vector<PnRow> rows);

// Quick invariant checks across all modules; prints one line per check and
// the QAM mapping tables. Returns true when every check passes.
bool run_selftest(std::ostream& out);

}  // namespace phydiff
