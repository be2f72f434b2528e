#include "phaseforge/config.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "phaseforge/errors.hpp"

namespace phaseforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void maybe_path(const json& j, const char* key, fs::path& out) {
  if (j.contains(key)) out = j.at(key).get<std::string>();
}

std::array<double, 3> ratio3(const json& j) {
  if (!j.is_array() || j.size() != 3)
    throw config_error("config: split ratios must be 3-element arrays");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

ExperimentConfig ExperimentConfig::from_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw config_error("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw config_error("config parse error in " + path.string() + ": " + e.what());
  }

  ExperimentConfig cfg;
  try {
    maybe(j, "seed", cfg.seed);

    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      maybe(d, "source", cfg.dataset.source);
      maybe(d, "size", cfg.dataset.size);
      maybe(d, "count", cfg.dataset.count);
      maybe(d, "slices_per_patient", cfg.dataset.slices_per_patient);
      if (d.contains("gen_split")) cfg.dataset.gen_split = ratio3(d.at("gen_split"));
      if (d.contains("rec_split")) cfg.dataset.rec_split = ratio3(d.at("rec_split"));
      maybe_path(d, "dir", cfg.dataset.dir);
      if (d.contains("ingest_paths"))
        for (const auto& p : d.at("ingest_paths"))
          cfg.dataset.ingest_paths.emplace_back(p.get<std::string>());
      if (d.contains("phantom")) {
        const auto& p = d.at("phantom");
        maybe(p, "min_ellipses", cfg.dataset.phantom.min_ellipses);
        maybe(p, "max_ellipses", cfg.dataset.phantom.max_ellipses);
        maybe(p, "poly_order", cfg.dataset.phantom.poly_order);
        maybe(p, "offset_range", cfg.dataset.phantom.offset_range);
        maybe(p, "background_noise_std", cfg.dataset.phantom.background_noise_std);
      }
    }

    if (j.contains("sbdm")) {
      const auto& s = j.at("sbdm");
      if (s.contains("schedule")) {
        const auto& sc = s.at("schedule");
        double smin = cfg.sbdm.schedule.sigma_min, smax = cfg.sbdm.schedule.sigma_max;
        int steps = cfg.sbdm.schedule.t_steps;
        double eps = cfg.sbdm.schedule.eps;
        maybe(sc, "sigma_min", smin);
        maybe(sc, "sigma_max", smax);
        maybe(sc, "t_steps", steps);
        maybe(sc, "eps", eps);
        cfg.sbdm.schedule = NoiseSchedule(smin, smax, steps, eps);
      }
      if (s.contains("network")) {
        const auto& n = s.at("network");
        maybe(n, "base_channels", cfg.sbdm.network.base_channels);
        maybe(n, "depth", cfg.sbdm.network.depth);
        maybe(n, "time_embedding_dim", cfg.sbdm.network.time_embedding_dim);
      }
      if (s.contains("training")) {
        const auto& t = s.at("training");
        maybe(t, "batch_size", cfg.sbdm.training.batch_size);
        maybe(t, "max_steps", cfg.sbdm.training.max_steps);
        maybe(t, "peak_lr", cfg.sbdm.training.peak_lr);
        maybe(t, "warmup_steps", cfg.sbdm.training.warmup_steps);
        maybe(t, "val_interval", cfg.sbdm.training.val_interval);
      }
      maybe_path(s, "checkpoint", cfg.sbdm.checkpoint);
      maybe_path(s, "loss_curve", cfg.sbdm.loss_curve);
    }

    if (j.contains("synthesis")) {
      const auto& s = j.at("synthesis");
      if (s.contains("phase_sources")) {
        cfg.synthesis.phase_sources.clear();
        for (const auto& p : s.at("phase_sources"))
          cfg.synthesis.phase_sources.push_back(
              phase_source_from_string(p.get<std::string>()));
      }
      if (s.contains("sampler")) {
        const auto& sp = s.at("sampler");
        maybe(sp, "predictor_steps", cfg.synthesis.sampler.predictor_steps);
        maybe(sp, "corrector_steps", cfg.synthesis.sampler.corrector_steps);
        maybe(sp, "snr", cfg.synthesis.sampler.snr);
      }
      if (s.contains("smooth")) {
        const auto& sm = s.at("smooth");
        maybe(sm, "low_res", cfg.synthesis.smooth.low_res);
        maybe(sm, "amplitude", cfg.synthesis.smooth.amplitude);
      }
      maybe_path(s, "dir", cfg.synthesis.dir);
    }

    if (j.contains("recon")) {
      const auto& r = j.at("recon");
      if (r.contains("cascades")) {
        const auto& c = r.at("cascades");
        maybe(c, "num_cascades", cfg.recon.cascades.num_cascades);
        maybe(c, "refiner_base", cfg.recon.cascades.refiner_base);
        maybe(c, "refiner_depth", cfg.recon.cascades.refiner_depth);
        maybe(c, "dc_weight_init", cfg.recon.cascades.dc_weight_init);
      }
      if (r.contains("training")) {
        const auto& t = r.at("training");
        maybe(t, "lr", cfg.recon.training.lr);
        maybe(t, "batch_size", cfg.recon.training.batch_size);
        maybe(t, "steps", cfg.recon.training.steps);
        maybe(t, "val_interval", cfg.recon.training.val_interval);
      }
      if (r.contains("mask_grid")) {
        cfg.recon.mask_grid.clear();
        for (const auto& g : r.at("mask_grid")) {
          if (!g.is_array() || g.size() != 2)
            throw config_error("config: mask_grid entries must be [R, n_acs]");
          cfg.recon.mask_grid.emplace_back(g[0].get<int>(), g[1].get<int>());
        }
      }
      if (r.contains("mask_kind"))
        cfg.recon.mask_kind = mask_kind_from_string(r.at("mask_kind").get<std::string>());
      maybe_path(r, "checkpoint_dir", cfg.recon.checkpoint_dir);
    }

    if (j.contains("evaluation")) {
      const auto& e = j.at("evaluation");
      if (e.contains("seeds"))
        cfg.evaluation.seeds = e.at("seeds").get<std::vector<std::uint64_t>>();
      maybe_path(e, "dir", cfg.evaluation.dir);
      if (e.contains("frechet")) {
        const auto& fr = e.at("frechet");
        maybe(fr, "enabled", cfg.evaluation.frechet_enabled);
        maybe(fr, "feature_dim", cfg.evaluation.frechet_dim);
        maybe(fr, "extractor_seed", cfg.evaluation.frechet_extractor_seed);
      }
    }
  } catch (const json::exception& e) {
    throw config_error("config error in " + path.string() + ": " + e.what());
  }

  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  if (dataset.source != "phantom" && dataset.source != "ingest")
    throw config_error("config: dataset.source must be 'phantom' or 'ingest'");
  if (dataset.source == "ingest" && dataset.ingest_paths.empty())
    throw config_error("config: dataset.source=ingest requires ingest_paths");
  if (dataset.size < 16) throw config_error("config: dataset.size must be >= 16");
  for (const auto& [r, n_acs] : recon.mask_grid) {
    if (r < 1) throw config_error("config: mask R must be >= 1");
    if (n_acs < 0 || static_cast<std::size_t>(n_acs) > dataset.size)
      throw config_error("config: mask n_acs must lie in [0, image size]");
  }
  if (recon.mask_grid.empty()) throw config_error("config: recon.mask_grid is empty");
  if (synthesis.phase_sources.empty())
    throw config_error("config: synthesis.phase_sources is empty");
  if (evaluation.seeds.empty()) throw config_error("config: evaluation.seeds is empty");
}

}  // namespace phaseforge
