// Command-line front end. Exit status: 0 success, 1 user error (bad config,
// missing or malformed input), 2 internal error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "osr/experiment.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("-c,--config", flags.config, "JSON experiment config")->required();
  cmd->add_option("--seed", flags.seed, "Override the master seed");
  cmd->add_option("-o,--out", flags.output_dir, "Override the output directory");
}

osr::ExperimentConfig resolve(const CommonFlags& flags) {
  osr::ExperimentConfig cfg = osr::ExperimentConfig::load(flags.config);
  if (flags.seed) cfg.apply_master_seed(*flags.seed);
  if (!flags.output_dir.empty()) cfg.output_dir = flags.output_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-set recognition with perturbation-based uncertainty"};
  app.set_version_flag("--version", std::string(osr::kVersion));
  app.require_subcommand(1);

  CommonFlags flags;
  osr::CommandOptions opt;
  std::string mode = "full";
  std::string part = "test";

  auto* synth = app.add_subcommand("synth", "Generate or load the dataset and write the split");
  auto* train = app.add_subcommand("train", "Train the base classifier");
  auto* unc = app.add_subcommand("uncertainty", "Score open-set samples with the ensemble");
  auto* detect = app.add_subcommand("detect", "Run unknown detection on the open set");
  auto* eval = app.add_subcommand("eval", "Compute metrics from detection results");
  auto* grid = app.add_subcommand("gridsearch", "Sweep hyper-parameters on validation data");
  auto* plot = app.add_subcommand("plot-density", "Histogram of known/unknown uncertainty");
  for (auto* cmd : {synth, train, unc, detect, eval, grid, plot}) add_common(cmd, flags);

  for (auto* cmd : {unc, detect})
    cmd->add_option("--part", part, "Open-set part: test or validation")
        ->check(CLI::IsMember({"test", "validation"}));
  detect->add_option("--mode", mode, "full, perturbation_only, no_isda or no_dt")
      ->check(CLI::IsMember({"full", "perturbation_only", "no_isda", "no_dt"}));
  eval->add_option("--input", opt.input, "Results file (default: <out>/results.csv)");
  plot->add_option("--input", opt.input, "Scores file (default: <out>/mu.csv)");
  plot->add_option("--bins", opt.bins, "Number of shared bins")->check(CLI::PositiveNumber);
  plot->add_flag("--svg", opt.svg, "Also write density.svg");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    opt.mode = osr::parse_ablation_mode(mode);
    opt.part = part == "test" ? osr::SplitPart::test : osr::SplitPart::validation;
    const osr::ExperimentConfig cfg = resolve(flags);
    if (synth->parsed()) return osr::cmd_synth(cfg);
    if (train->parsed()) return osr::cmd_train(cfg);
    if (unc->parsed()) return osr::cmd_uncertainty(cfg, opt);
    if (detect->parsed()) return osr::cmd_detect(cfg, opt);
    if (eval->parsed()) return osr::cmd_eval(cfg, opt);
    if (grid->parsed()) return osr::cmd_gridsearch(cfg);
    if (plot->parsed()) return osr::cmd_plot_density(cfg, opt);
    return 2;
  } catch (const osr::InternalError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  } catch (const osr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
