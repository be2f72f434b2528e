#include "phaseforge/synthesis.hpp"

#include <omp.h>

#include <cmath>
#include <stdexcept>

#include "phaseforge/errors.hpp"
#include "phaseforge/phase_ops.hpp"

namespace phaseforge {

PhaseSource phase_source_from_string(const std::string& s) {
  if (s == "gt") return PhaseSource::gt;
  if (s == "smooth") return PhaseSource::smooth;
  if (s == "sbdm") return PhaseSource::sbdm;
  throw config_error("unknown phase source: " + s);
}

std::string to_string(PhaseSource s) {
  switch (s) {
    case PhaseSource::gt: return "gt";
    case PhaseSource::smooth: return "smooth";
    case PhaseSource::sbdm: return "sbdm";
  }
  throw contract_error("invalid phase source");
}

Tensor sample_phase(const ScoreModel& model, const Tensor& magnitude,
                    const SamplerConfig& cfg, Rng& rng) {
  if (magnitude.rank() != 2) throw contract_error("sample_phase: expects a 2-D magnitude");

  const NoiseSchedule& sched = model.schedule();
  NoiseSchedule run = sched;
  if (cfg.predictor_steps > 0) run.t_steps = cfg.predictor_steps;
  const std::vector<double> times = run.discretize_times();

  const ScoreFn score = [&model, &magnitude](const Tensor& x, double t) {
    return model.score_eval(x, t, magnitude);
  };

  SdeState state;
  state.x = Tensor(magnitude.shape());
  state.t = times.front();
  for (std::size_t i = 0; i < state.x.size(); ++i)
    state.x[i] = sched.sigma_max * rng.normal();

  for (std::size_t i = 0; i < times.size(); ++i) {
    try {
      for (int c = 0; c < cfg.corrector_steps; ++c)
        state = corrector_step_langevin(run, state, score, cfg.snr, rng);
      if (i + 1 < times.size()) {
        state = reverse_step_euler(run, state, times[i + 1] - times[i], score, rng);
        state.t = times[i + 1];  // pin to the grid against accumulated rounding
      }
    } catch (const numeric_error& e) {
      throw numeric_error("sample_phase: failed at step " + std::to_string(i) + " of " +
                          std::to_string(times.size()) + " (" + e.what() + ")");
    }
  }
  return wrap_phase(state.x);
}

Dataset synthesize_dataset(const std::vector<const SliceRecord*>& records,
                           const ScoreModel* model, const SynthesisConfig& cfg) {
  if (records.empty()) throw config_error("synthesize_dataset: no input records");
  if (cfg.source == PhaseSource::sbdm && model == nullptr)
    throw config_error("synthesize_dataset: sbdm source requires a trained checkpoint");
  if (cfg.source == PhaseSource::gt) {
    for (const auto* r : records)
      if (!r->phase)
        throw config_error("synthesize_dataset: record " + r->patient_id + "/" +
                           std::to_string(r->slice_index) +
                           " lacks a ground-truth phase");
  }

  Dataset out;
  out.manifest.image_size = records.front()->magnitude.dim(0);
  out.manifest.phase_source = to_string(cfg.source);
  out.manifest.seed = cfg.seed;
  out.records.resize(records.size());

  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(records.size()); ++i) {
    try {
      const SliceRecord& src = *records[static_cast<std::size_t>(i)];
      const std::string record_id = src.patient_id + "/" + std::to_string(src.slice_index);
      const std::uint64_t rec_seed = derive_seed(cfg.seed, fnv1a(record_id));
      Rng rng(rec_seed);

      Tensor phase;
      switch (cfg.source) {
        case PhaseSource::gt:
          phase = *src.phase;
          break;
        case PhaseSource::smooth:
          phase = smooth_phase_baseline(src.magnitude.dim(0), src.magnitude.dim(1), rng,
                                        cfg.smooth.low_res, cfg.smooth.amplitude);
          break;
        case PhaseSource::sbdm:
          phase = sample_phase(*model, src.magnitude, cfg.sampler, rng);
          break;
      }

      SliceRecord rec;
      rec.patient_id = src.patient_id;
      rec.slice_index = src.slice_index;
      rec.magnitude = src.magnitude;
      rec.norm_scale = src.norm_scale;
      rec.phase = std::move(phase);
      rec.kspace = assemble_kspace(rec.magnitude, *rec.phase);
      rec.provenance = {"synthesized", rec_seed, to_string(cfg.source)};
      out.records[static_cast<std::size_t>(i)] = std::move(rec);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace phaseforge
