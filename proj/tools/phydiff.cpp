// Command-line front end: train, eval, baseline, selftest.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "phydiff/config.hpp"
#include "phydiff/errors.hpp"
#include "phydiff/runner.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"phydiff: conditional diffusion receivers for OFDM detection and phase-noise estimation"};
  app.require_subcommand(1);

  std::string config_path;
  std::string checkpoint_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool trace = false;
  bool svg = false;
  bool quiet = false;

  auto* train = app.add_subcommand("train", "Train the noise predictor and write checkpoint.bin and loss.csv");
  train->add_option("--config", config_path, "Experiment config file")->required();
  train->add_option("--seed", seed, "Override experiment.seed");
  train->add_option("--out", out_dir, "Override experiment.out_dir");
  train->add_flag("--svg", svg, "Also write loss.svg");
  train->add_flag("--quiet", quiet, "No progress lines");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and the baselines, write metrics.csv");
  eval->add_option("--config", config_path, "Experiment config file")->required();
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint from train")->required();
  eval->add_option("--out", out_dir, "Override experiment.out_dir");
  eval->add_flag("--trace", trace, "Write the per-reverse-step trace.csv");
  eval->add_flag("--svg", svg, "Also write SVG charts");

  auto* baseline = app.add_subcommand("baseline", "Evaluate the baselines only, write baseline.csv");
  baseline->add_option("--config", config_path, "Experiment config file")->required();
  baseline->add_option("--out", out_dir, "Override experiment.out_dir");
  baseline->add_flag("--svg", svg, "Also write baseline.svg");

  auto* selftest = app.add_subcommand("selftest", "Run the built-in invariant checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (selftest->parsed()) return phydiff::run_selftest(std::cout) ? kOk : kRuntime;

    phydiff::ExperimentConfig cfg = phydiff::load_config(config_path);
    if (seed) cfg.seed = *seed;
    phydiff::RunOptions opts;
    opts.out_dir = out_dir;
    opts.svg = svg;
    opts.trace = trace;
    opts.log = quiet ? nullptr : &std::cerr;

    if (train->parsed()) {
      const auto outcome = phydiff::run_train(cfg, opts);
      std::cout << "wrote " << outcome.checkpoint_path << " and " << outcome.loss_path << '\n';
    } else if (eval->parsed()) {
      std::cout << "wrote " << phydiff::run_eval(cfg, checkpoint_path, opts) << '\n';
    } else if (baseline->parsed()) {
      std::cout << "wrote " << phydiff::run_baseline(cfg, opts) << '\n';
    }
    return kOk;
  } catch (const phydiff::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const phydiff::ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const phydiff::NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << " (partial checkpoint marked failed)\n";
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
}
