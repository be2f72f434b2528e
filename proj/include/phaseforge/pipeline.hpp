#ifndef PHASEFORGE_PIPELINE_HPP
#define PHASEFORGE_PIPELINE_HPP

#include "phaseforge/config.hpp"

namespace phaseforge {

// Pipeline stages behind the CLI subcommands. Each stage reads its inputs
// from the paths in the config and overwrites its outputs deterministically.
void cmd_phantom_dataset(const ExperimentConfig& cfg);
void cmd_ingest(const ExperimentConfig& cfg);
void cmd_train_sbdm(const ExperimentConfig& cfg);
void cmd_synthesize(const ExperimentConfig& cfg);
void cmd_train_recon(const ExperimentConfig& cfg);
void cmd_evaluate(const ExperimentConfig& cfg);
void cmd_run_all(const ExperimentConfig& cfg);

}  // namespace phaseforge

#endif
