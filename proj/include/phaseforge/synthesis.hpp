#ifndef PHASEFORGE_SYNTHESIS_HPP
#define PHASEFORGE_SYNTHESIS_HPP

#include <string>
#include <vector>

#include "phaseforge/data.hpp"
#include "phaseforge/score.hpp"
#include "phaseforge/sde.hpp"

namespace phaseforge {

enum class PhaseSource { gt, smooth, sbdm };

PhaseSource phase_source_from_string(const std::string& s);
std::string to_string(PhaseSource s);

struct SmoothPhaseConfig {
  int low_res = 8;
  double amplitude = 1.5707963267948966;  // pi/2
};

// Reverse-SDE sampling of a phase map conditioned on a magnitude image:
// start from N(0, sigma_max^2 I), run the predictor-corrector pass over the
// schedule's discretized times, wrap the terminal state to [-pi, pi).
Tensor sample_phase(const ScoreModel& model, const Tensor& magnitude,
                    const SamplerConfig& cfg, Rng& rng);

struct SynthesisConfig {
  PhaseSource source = PhaseSource::gt;
  SamplerConfig sampler;
  SmoothPhaseConfig smooth;
  std::uint64_t seed = 0;
};

// Builds a k-space dataset over the given magnitude records. Phase comes from
// the configured source; every output record carries assembled k-space and a
// per-record seed derived from (cfg.seed, record id). `model` is required for
// the sbdm source only.
Dataset synthesize_dataset(const std::vector<const SliceRecord*>& records,
                           const ScoreModel* model, const SynthesisConfig& cfg);

}  // namespace phaseforge

#endif
