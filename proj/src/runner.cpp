#include "phydiff/runner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <ostream>
#include <tuple>

#include "phydiff/svg.hpp"

namespace phydiff {

namespace {

std::string prepare_out_dir(const ExperimentConfig& cfg, const RunOptions& opts) {
  const std::string dir = opts.out_dir.empty() ? cfg.out_dir : opts.out_dir;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create output directory " + dir + ": " + ec.message());
  return dir;
}

std::string join_path(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

std::vector<double> phases_of(const Tensor& x0) {
  const std::size_t n = x0.size() / 2;
  std::vector<double> phi(n);
  for (std::size_t p = 0; p < n; ++p) phi[p] = std::atan2(x0[2 * p + 1], x0[2 * p]);
  return phi;
}

void write_trace(const ExperimentConfig& cfg, std::vector<TraceRow> rows, const std::string& path) {
  std::sort(rows.begin(), rows.end(), [](const TraceRow& a, const TraceRow& b) {
    return std::tie(a.level_dbchz, a.snr_db, a.index, a.step) < std::tie(b.level_dbchz, b.snr_db, b.index, b.step);
  });
  CsvTable t;
  const bool pn = cfg.scenario == Scenario::PnEstimate;
  t.header = pn ? std::vector<std::string>{"section", "snr_db", "pn_level_dbchz", "step", "tau", "mse"}
                : std::vector<std::string>{"frame", "snr_db", "step", "tau", "grid_mse"};
  for (const auto& r : rows) {
    if (pn) {
      t.add_row({std::to_string(r.index), format_double(r.snr_db), format_double(r.level_dbchz),
                 std::to_string(r.step), std::to_string(r.tau), format_double(r.mse)});
    } else {
      t.add_row({std::to_string(r.index), format_double(r.snr_db), std::to_string(r.step), std::to_string(r.tau),
                 format_double(r.mse)});
    }
  }
  t.write(path);
}

void write_trace_svg(const std::vector<TraceRow>& rows, const std::string& path) {
  // mean over frames/sections, one series per SNR
  std::map<double, std::map<int, std::pair<double, std::size_t>>> acc;
  for (const auto& r : rows) {
    auto& cell = acc[r.snr_db][r.step];
    cell.first += r.mse;
    ++cell.second;
  }
  SvgChart chart{"x0 estimate MSE per reverse step", "reverse step", "MSE", true, {}};
  for (const auto& [snr, steps] : acc) {
    SvgSeries s{"SNR " + format_double(snr) + " dB", {}, {}};
    for (const auto& [step, cell] : steps) {
      s.x.push_back(step);
      s.y.push_back(cell.first / static_cast<double>(cell.second));
    }
    chart.series.push_back(std::move(s));
  }
  write_svg(chart, path);
}

std::vector<EvalRow> ofdm_baselines(const ExperimentConfig& cfg) {
  const auto pcsi = [&](const OfdmFrame& f, std::uint64_t) { return lmmse_receiver(f, cfg.ofdm, true); };
  const auto icsi = [&](const OfdmFrame& f, std::uint64_t) { return lmmse_receiver(f, cfg.ofdm, false); };
  auto rows = evaluate_receiver(cfg.ofdm, "lmmse_pcsi", pcsi, cfg.eval_snr_db, cfg.eval_frames, cfg.seed);
  auto icsi_rows = evaluate_receiver(cfg.ofdm, "lmmse_icsi", icsi, cfg.eval_snr_db, cfg.eval_frames, cfg.seed);
  rows.insert(rows.end(), icsi_rows.begin(), icsi_rows.end());
  return rows;
}

std::vector<PnRow> pn_baselines(const ExperimentConfig& cfg) {
  std::vector<PnRow> rows;
  const auto psam = [](const PnSection& s, std::uint64_t) { return s.phi_psam; };
  for (double level : cfg.pn_levels_dbchz) {
    PnConfig pc = cfg.pn;
    pc.level_dbchz = level;
    auto r = evaluate_pn(pc, "psam", psam, cfg.eval_snr_db, cfg.eval_frames, cfg.seed);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return rows;
}

void write_ofdm_svg(const std::vector<EvalRow>& rows, const std::string& path) {
  std::map<std::string, SvgSeries> by;
  for (const auto& r : rows) {
    auto& s = by[r.receiver];
    s.name = r.receiver;
    s.x.push_back(r.snr_db);
    s.y.push_back(r.ber);
  }
  SvgChart chart{"Uncoded BER", "SNR [dB]", "BER", true, {}};
  for (auto& [name, s] : by) chart.series.push_back(std::move(s));
  write_svg(chart, path);
}

void write_pn_svg(const std::vector<PnRow>& rows, const std::string& path) {
  std::map<std::string, SvgSeries> by;
  for (const auto& r : rows) {
    const std::string name = r.method + " " + format_double(r.level_dbchz) + " dBc/Hz";
    auto& s = by[name];
    s.name = name;
    s.x.push_back(r.snr_db);
    s.y.push_back(r.mse);
  }
  SvgChart chart{"Phase-noise estimate MSE", "SNR [dB]", "MSE", true, {}};
  for (auto& [name, s] : by) chart.series.push_back(std::move(s));
  write_svg(chart, path);
}

}  // namespace

NoisePredictor make_model(const ExperimentConfig& cfg) {
  RngStream init = derive_rng(cfg.seed, {"npnn.init", 0});
  return NoisePredictor(cfg.npnn_spec(), init);
}

TrainBatchSource make_batch_source(const ExperimentConfig& cfg) {
  const NpnnSpec spec = cfg.npnn_spec();
  const std::uint64_t seed = cfg.seed;
  const double lo = cfg.train_snr_min_db;
  const double hi = cfg.train_snr_max_db;
  if (cfg.scenario == Scenario::OfdmDetect) {
    const OfdmConfig oc = cfg.ofdm;
    const GroundTruth gt = cfg.ground_truth;
    return TrainBatchSource(spec.condition_shape(), spec.sample_shape(), [=](std::uint64_t i) {
      RngStream snr_rng = derive_rng(seed, {"ofdm.train.snr", i});
      const OfdmFrame frame = simulate_frame(oc, snr_rng.uniform(lo, hi), seed, {"ofdm.train", i});
      return TrainPair{assemble_xp(frame.rx, frame.tx.pilots).xc, assemble_x0(gt, frame)};
    });
  }
  const PnConfig pc = cfg.pn;
  return TrainBatchSource(spec.condition_shape(), spec.sample_shape(), [=](std::uint64_t i) {
    RngStream snr_rng = derive_rng(seed, {"pn.train.snr", i});
    const PnSection sec = simulate_section(pc, snr_rng.uniform(lo, hi), seed, {"pn.train", i});
    return TrainPair{assemble_xp_pn(sec), assemble_x0_pn(sec)};
  });
}

std::vector<EvalRow> eval_ofdm_diffusion(const ExperimentConfig& cfg, const NoisePredictor& model,
                                         const std::vector<double>& snrs_db, std::size_t frames,
                                         std::vector<TraceRow>* trace) {
  const Schedule schedule = cfg.schedule();
  const TauSet tau = cfg.tau();
  const std::size_t S = tau.tau.size();
  std::vector<EvalRow> rows;
  for (double snr : snrs_db) {
    const auto rx = [&](const OfdmFrame& frame, std::uint64_t f) {
      const Condition c = assemble_xp(frame.rx, frame.tx.pilots);
      RngStream rng = derive_rng(cfg.seed, {"ofdm.sample", f});
      SampleResult r = sample(model, c.xc, tau, schedule, rng, trace != nullptr);
      if (trace) {
        for (std::size_t i = 0; i < S; ++i) {
          const double mse = data_mse(tensor_to_grid(r.x0_trace[i]), frame.tx.grid, cfg.ofdm);
          trace->push_back({f, snr, 0.0, static_cast<int>(i + 1), tau.tau[S - 1 - i], mse});
        }
      }
      Grid est = tensor_to_grid(r.x0);
      return ReceiverOutput{est, est};
    };
    const auto r = evaluate_receiver(cfg.ofdm, "diffusion", rx, {snr}, frames, cfg.seed);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return rows;
}

std::vector<PnRow> eval_pn_diffusion(const ExperimentConfig& cfg, const NoisePredictor& model, double level_dbchz,
                                     const std::vector<double>& snrs_db, std::size_t sections,
                                     std::vector<TraceRow>* trace) {
  const Schedule schedule = cfg.schedule();
  const TauSet tau = cfg.tau();
  const std::size_t S = tau.tau.size();
  PnConfig pc = cfg.pn;
  pc.level_dbchz = level_dbchz;
  std::vector<PnRow> rows;
  for (double snr : snrs_db) {
    const auto est = [&](const PnSection& sec, std::uint64_t i) {
      RngStream rng = derive_rng(cfg.seed, {"pn.sample", i});
      SampleResult r = sample(model, assemble_xp_pn(sec), tau, schedule, rng, trace != nullptr);
      if (trace) {
        for (std::size_t k = 0; k < S; ++k) {
          trace->push_back({i, snr, level_dbchz, static_cast<int>(k + 1), tau.tau[S - 1 - k],
                            pn_mse(r.x0_trace[k], sec.phi)});
        }
      }
      return phases_of(r.x0);
    };
    const auto r = evaluate_pn(pc, "diffusion", est, {snr}, sections, cfg.seed);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return rows;
}

CsvTable ofdm_metrics_table(std::vector<EvalRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) {
    return std::tie(a.snr_db, a.receiver) < std::tie(b.snr_db, b.receiver);
  });
  CsvTable t;
  t.header = {"snr_db", "receiver", "ber", "grid_mse"};
  for (const auto& r : rows) t.add_row({format_double(r.snr_db), r.receiver, format_double(r.ber), format_double(r.grid_mse)});
  return t;
}

CsvTable pn_metrics_table(std::vector<PnRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const PnRow& a, const PnRow& b) {
    return std::tie(a.snr_db, a.level_dbchz, a.method) < std::tie(b.snr_db, b.level_dbchz, b.method);
  });
  CsvTable t;
  t.header = {"snr_db", "pn_level_dbchz", "method", "mse"};
  for (const auto& r : rows) {
    t.add_row({format_double(r.snr_db), format_double(r.level_dbchz), r.method, format_double(r.mse)});
  }
  return t;
}

TrainOutcome run_train(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const std::string dir = prepare_out_dir(cfg, opts);
  NoisePredictor model = make_model(cfg);
  const TrainBatchSource source = make_batch_source(cfg);
  AdamOptions adam;
  adam.learning_rate = cfg.learning_rate;
  OptimizerState optimizer = OptimizerState::for_params(model.parameters(), adam);
  RngStream rng = derive_rng(cfg.seed, {"train", 0});

  TrainOutcome out;
  out.checkpoint_path = join_path(dir, "checkpoint.bin");
  out.loss_path = join_path(dir, "loss.csv");

  TrainOptions topts;
  topts.steps = cfg.train_steps;
  topts.batch_size = cfg.batch_size;
  const long every = std::max(1L, cfg.train_steps / 20);
  topts.on_step = [&](long step, double loss) {
    out.losses.push_back(loss);
    if (opts.log && (step % every == 0 || step == cfg.train_steps)) {
      *opts.log << "step " << step << " loss " << format_double(loss) << '\n' << std::flush;
    }
  };

  auto finish = [&](bool failed) {
    Checkpoint ckpt = Checkpoint::capture(cfg.digest(), static_cast<long>(out.losses.size()), model.parameters(),
                                          optimizer);
    ckpt.failed = failed;
    save_checkpoint(ckpt, out.checkpoint_path);
    write_loss_csv(out.losses, out.loss_path);
    if (opts.svg) {
      SvgSeries s{"loss", {}, out.losses};
      for (std::size_t i = 0; i < out.losses.size(); ++i) s.x.push_back(static_cast<double>(i + 1));
      write_svg({"Training loss", "step", "loss", true, {s}}, join_path(dir, "loss.svg"));
    }
  };

  try {
    train(model, source, cfg.schedule(), optimizer, rng, topts);
  } catch (const NonFiniteLoss&) {
    finish(true);
    throw;
  }
  finish(false);
  return out;
}

std::string run_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path, const RunOptions& opts) {
  cfg.validate();
  const Checkpoint ckpt = load_checkpoint(checkpoint_path, cfg.digest());
  if (ckpt.failed) throw FormatError("checkpoint " + checkpoint_path + " is marked as a failed training run");
  NoisePredictor model = make_model(cfg);
  ckpt.restore(model.parameters());

  const std::string dir = prepare_out_dir(cfg, opts);
  const bool want_trace = opts.trace || cfg.trace;
  std::vector<TraceRow> trace;
  const std::string path = join_path(dir, "metrics.csv");
  if (cfg.scenario == Scenario::OfdmDetect) {
    auto rows = eval_ofdm_diffusion(cfg, model, cfg.eval_snr_db, cfg.eval_frames, want_trace ? &trace : nullptr);
    const auto base = ofdm_baselines(cfg);
    rows.insert(rows.end(), base.begin(), base.end());
    ofdm_metrics_table(rows).write(path);
    if (opts.svg) write_ofdm_svg(rows, join_path(dir, "metrics.svg"));
  } else {
    std::vector<PnRow> rows;
    for (double level : cfg.pn_levels_dbchz) {
      auto r = eval_pn_diffusion(cfg, model, level, cfg.eval_snr_db, cfg.eval_frames, want_trace ? &trace : nullptr);
      rows.insert(rows.end(), r.begin(), r.end());
    }
    const auto base = pn_baselines(cfg);
    rows.insert(rows.end(), base.begin(), base.end());
    pn_metrics_table(rows).write(path);
    if (opts.svg) write_pn_svg(rows, join_path(dir, "metrics.svg"));
  }
  if (want_trace) {
    write_trace(cfg, trace, join_path(dir, "trace.csv"));
    if (opts.svg) write_trace_svg(trace, join_path(dir, "trace.svg"));
  }
  return path;
}

std::string run_baseline(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const std::string dir = prepare_out_dir(cfg, opts);
  const std::string path = join_path(dir, "baseline.csv");
  if (cfg.scenario == Scenario::OfdmDetect) {
    const auto rows = ofdm_baselines(cfg);
    ofdm_metrics_table(rows).write(path);
    if (opts.svg) write_ofdm_svg(rows, join_path(dir, "baseline.svg"));
  } else {
    const auto rows = pn_baselines(cfg);
    pn_metrics_table(rows).write(path);
    if (opts.svg) write_pn_svg(rows, join_path(dir, "baseline.svg"));
  }
  return path;
}

}  // namespace phydiff
