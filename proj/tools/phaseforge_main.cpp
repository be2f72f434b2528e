#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "phaseforge/errors.hpp"
#include "phaseforge/pipeline.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> out_override;
};

phaseforge::ExperimentConfig load_config(const CliOptions& opts) {
  auto cfg = phaseforge::ExperimentConfig::from_file(opts.config_path);
  if (opts.seed_override) cfg.seed = *opts.seed_override;
  if (opts.out_override) {
    const std::filesystem::path root = *opts.out_override;
    cfg.dataset.dir = root / "dataset";
    cfg.sbdm.checkpoint = root / "sbdm.ckpt";
    cfg.sbdm.loss_curve = root / "sbdm_loss.csv";
    cfg.synthesis.dir = root / "synth";
    cfg.recon.checkpoint_dir = root / "recon";
    cfg.evaluation.dir = root / "report";
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"phaseforge: conditional diffusion phase-map synthesis and "
               "undersampled reconstruction evaluation"};
  app.require_subcommand(1);

  CliOptions opts;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "experiment config (JSON)")
        ->required();
    sub->add_option("--seed", opts.seed_override, "override the root seed");
    sub->add_option("--out", opts.out_override,
                    "redirect all outputs under this directory");
  };

  auto* phantom = app.add_subcommand("phantom", "generate a phantom dataset");
  auto* ingest = app.add_subcommand("ingest", "ingest HDF5 single-coil k-space");
  auto* train_sbdm = app.add_subcommand("train-sbdm", "train the phase-synthesis model");
  auto* synthesize = app.add_subcommand("synthesize", "synthesize k-space datasets");
  auto* train_recon =
      app.add_subcommand("train-recon", "train reconstruction models per phase source");
  auto* evaluate = app.add_subcommand("evaluate", "evaluate models over the mask grid");
  auto* run_all = app.add_subcommand("run-all", "run the full pipeline end to end");
  for (auto* sub : {phantom, ingest, train_sbdm, synthesize, train_recon, evaluate, run_all})
    add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    // treat bad invocations as configuration errors; keep 0 for --help
    return code == 0 ? 0 : 2;
  }

  try {
    const phaseforge::ExperimentConfig cfg = load_config(opts);
    if (phantom->parsed()) phaseforge::cmd_phantom_dataset(cfg);
    if (ingest->parsed()) phaseforge::cmd_ingest(cfg);
    if (train_sbdm->parsed()) phaseforge::cmd_train_sbdm(cfg);
    if (synthesize->parsed()) phaseforge::cmd_synthesize(cfg);
    if (train_recon->parsed()) phaseforge::cmd_train_recon(cfg);
    if (evaluate->parsed()) phaseforge::cmd_evaluate(cfg);
    if (run_all->parsed()) phaseforge::cmd_run_all(cfg);
  } catch (const phaseforge::config_error& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
