#ifndef PHASEFORGE_CONFIG_HPP
#define PHASEFORGE_CONFIG_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "phaseforge/mask.hpp"
#include "phaseforge/score.hpp"
#include "phaseforge/synthesis.hpp"
#include "phaseforge/varnet.hpp"

namespace phaseforge {

// One JSON file drives the whole pipeline. All stage seeds derive from the
// single root seed; `--seed` on the command line overrides the file.
struct ExperimentConfig {
  std::uint64_t seed = 1234;

  struct DatasetSection {
    std::string source = "phantom";  // phantom | ingest
    std::size_t size = 64;
    int count = 60;               // phantom patients
    int slices_per_patient = 1;
    std::array<double, 3> gen_split{0.6, 0.1, 0.3};
    std::array<double, 3> rec_split{0.6, 0.2, 0.2};
    std::filesystem::path dir = "out/dataset";
    std::vector<std::filesystem::path> ingest_paths;
    PhantomConfig phantom;
  } dataset;

  struct SbdmSection {
    NoiseSchedule schedule{0.01, 378.0, 1000, 1e-5};
    ScoreNetworkConfig network;
    ScoreTrainConfig training;
    std::filesystem::path checkpoint = "out/sbdm.ckpt";
    std::filesystem::path loss_curve = "out/sbdm_loss.csv";
  } sbdm;

  struct SynthesisSection {
    std::vector<PhaseSource> phase_sources{PhaseSource::gt, PhaseSource::smooth,
                                           PhaseSource::sbdm};
    SamplerConfig sampler;
    SmoothPhaseConfig smooth;
    std::filesystem::path dir = "out/synth";
  } synthesis;

  struct ReconSection {
    CascadeConfig cascades;
    ReconTrainConfig training;
    MaskGrid mask_grid{{2, 16}, {4, 16}, {6, 16}};
    MaskKind mask_kind = MaskKind::equispaced;
    std::filesystem::path checkpoint_dir = "out/recon";
  } recon;

  struct EvaluationSection {
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::filesystem::path dir = "out/report";
    bool frechet_enabled = true;
    int frechet_dim = 64;
    std::uint64_t frechet_extractor_seed = 17;
  } evaluation;

  static ExperimentConfig from_file(const std::filesystem::path& path);
  void validate() const;

  // derived stage seeds
  std::uint64_t dataset_seed() const { return derive_seed(seed, "dataset"); }
  std::uint64_t sbdm_seed() const { return derive_seed(seed, "sbdm"); }
  std::uint64_t synthesis_seed() const { return derive_seed(seed, "synthesis"); }
  std::uint64_t recon_seed(PhaseSource source, std::uint64_t eval_seed) const {
    return derive_seed(derive_seed(seed, "recon/" + to_string(source)), eval_seed);
  }

  std::filesystem::path synth_dir(PhaseSource source) const {
    return synthesis.dir / to_string(source);
  }
  std::filesystem::path recon_checkpoint(PhaseSource source, std::uint64_t eval_seed) const {
    return recon.checkpoint_dir /
           ("recon_" + to_string(source) + "_seed" + std::to_string(eval_seed) + ".ckpt");
  }
};

}  // namespace phaseforge

#endif
