#include "phaseforge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "phaseforge/errors.hpp"
#include "phaseforge/metrics.hpp"
#include "phaseforge/phase_ops.hpp"
#include "phaseforge/plot.hpp"

namespace phaseforge {

namespace fs = std::filesystem;

namespace {

Dataset load_required_dataset(const fs::path& dir, const char* what) {
  if (!fs::exists(dir / "manifest.json"))
    throw config_error(std::string(what) + ": no dataset at " + dir.string() +
                       " (run the dataset stage first)");
  return load_dataset(dir);
}

std::string dataset_fingerprint(const Dataset& ds) {
  return "n" + std::to_string(ds.records.size()) + "-size" +
         std::to_string(ds.manifest.image_size) + "-seed" +
         std::to_string(ds.manifest.seed);
}

void write_loss_curve(const fs::path& path, const std::vector<LossCurvePoint>& curve) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw io_error("cannot write loss curve " + path.string());
  f << "step,train_loss,val_loss\n";
  f.precision(12);
  for (const auto& p : curve) {
    f << p.step << ',' << p.train_loss << ',';
    if (std::isfinite(p.val_loss)) f << p.val_loss;
    f << '\n';
  }
}

void print_split_summary(const Dataset& ds) {
  std::map<std::string, int> gen, rec;
  for (const auto& [p, s] : ds.manifest.gen_split) gen[s]++;
  for (const auto& [p, s] : ds.manifest.rec_split) rec[s]++;
  std::cout << "  patients: genTrain=" << gen["genTrain"] << " genVal=" << gen["genVal"]
            << " genTest=" << gen["genTest"] << " | recTrain=" << rec["recTrain"]
            << " recVal=" << rec["recVal"] << " recTest=" << rec["recTest"] << '\n'
            << "  records: " << ds.records.size() << " at "
            << ds.manifest.image_size << "x" << ds.manifest.image_size << '\n';
}

}  // namespace

void cmd_phantom_dataset(const ExperimentConfig& cfg) {
  const std::uint64_t seed = cfg.dataset_seed();
  Dataset ds;
  ds.manifest.image_size = cfg.dataset.size;
  ds.manifest.seed = seed;

  for (int p = 0; p < cfg.dataset.count; ++p) {
    char patient[16];
    std::snprintf(patient, sizeof(patient), "p%04d", p);
    for (int s = 0; s < cfg.dataset.slices_per_patient; ++s) {
      const std::uint64_t rec_seed = derive_seed(
          seed, static_cast<std::uint64_t>(p) * 1000 + static_cast<std::uint64_t>(s));
      SliceRecord rec = generate_phantom(rec_seed, cfg.dataset.size, cfg.dataset.phantom);
      rec.patient_id = patient;
      rec.slice_index = s;
      rec.kspace = assemble_kspace(rec.magnitude, *rec.phase);
      ds.records.push_back(std::move(rec));
    }
  }

  split_dataset(ds, cfg.dataset.gen_split, cfg.dataset.rec_split,
                derive_seed(seed, "split"));
  save_dataset(ds, cfg.dataset.dir);
  std::cout << "phantom dataset written to " << cfg.dataset.dir.string() << '\n';
  print_split_summary(ds);
}

void cmd_ingest(const ExperimentConfig& cfg) {
  if (cfg.dataset.ingest_paths.empty())
    throw config_error("ingest: no input files configured");
  Dataset ds;
  ds.manifest.image_size = cfg.dataset.size;
  ds.manifest.seed = cfg.dataset_seed();
  for (const auto& path : cfg.dataset.ingest_paths) {
    auto records = ingest_hdf5_kspace(path, cfg.dataset.size);
    for (auto& r : records) ds.records.push_back(std::move(r));
  }
  split_dataset(ds, cfg.dataset.gen_split, cfg.dataset.rec_split,
                derive_seed(cfg.dataset_seed(), "split"));
  save_dataset(ds, cfg.dataset.dir);
  std::cout << "ingested dataset written to " << cfg.dataset.dir.string() << '\n';
  print_split_summary(ds);
}

void cmd_train_sbdm(const ExperimentConfig& cfg) {
  const Dataset ds = load_required_dataset(cfg.dataset.dir, "train-sbdm");
  const auto train_refs = ds.select_gen("genTrain");
  const auto val_refs = ds.select_gen("genVal");
  if (train_refs.empty()) throw config_error("train-sbdm: genTrain split is empty");

  std::vector<ScoreSample> train, val;
  for (const auto* r : train_refs) {
    if (!r->phase)
      throw config_error("train-sbdm: record " + r->patient_id + "/" +
                         std::to_string(r->slice_index) + " has no ground-truth phase");
    train.push_back({&*r->phase, &r->magnitude});
  }
  for (const auto* r : val_refs)
    if (r->phase) val.push_back({&*r->phase, &r->magnitude});

  ScoreTrainConfig tcfg = cfg.sbdm.training;
  tcfg.seed = cfg.sbdm_seed();

  std::vector<LossCurvePoint> curve;
  const ScoreCheckpoint ckpt = train_score_model(train, val, cfg.sbdm.network, tcfg,
                                                 cfg.sbdm.schedule,
                                                 dataset_fingerprint(ds), &curve);
  save_score_checkpoint(cfg.sbdm.checkpoint, ckpt);
  write_loss_curve(cfg.sbdm.loss_curve, curve);
  std::cout << "sbdm checkpoint written to " << cfg.sbdm.checkpoint.string()
            << " (steps=" << ckpt.steps << ", final_loss=" << ckpt.final_train_loss
            << ")\n";
}

void cmd_synthesize(const ExperimentConfig& cfg) {
  const Dataset ds = load_required_dataset(cfg.dataset.dir, "synthesize");
  const auto rec_train = ds.select_rec("recTrain");
  if (rec_train.empty()) throw config_error("synthesize: recTrain split is empty");

  std::optional<ScoreModel> model;
  const bool needs_model =
      std::count(cfg.synthesis.phase_sources.begin(), cfg.synthesis.phase_sources.end(),
                 PhaseSource::sbdm) > 0;
  if (needs_model) {
    if (!fs::exists(cfg.sbdm.checkpoint))
      throw config_error("synthesize: checkpoint " + cfg.sbdm.checkpoint.string() +
                         " does not exist (run train-sbdm first)");
    model.emplace(model_from_checkpoint(load_score_checkpoint(cfg.sbdm.checkpoint)));
  }

  for (const PhaseSource source : cfg.synthesis.phase_sources) {
    SynthesisConfig scfg;
    scfg.source = source;
    scfg.sampler = cfg.synthesis.sampler;
    scfg.smooth = cfg.synthesis.smooth;
    scfg.seed = derive_seed(cfg.synthesis_seed(), to_string(source));
    Dataset out = synthesize_dataset(rec_train, model ? &*model : nullptr, scfg);
    out.manifest.gen_split = ds.manifest.gen_split;
    out.manifest.rec_split = ds.manifest.rec_split;
    save_dataset(out, cfg.synth_dir(source));
    std::cout << "synthesized " << out.records.size() << " records (" << to_string(source)
              << ") to " << cfg.synth_dir(source).string() << '\n';
  }
}

void cmd_train_recon(const ExperimentConfig& cfg) {
  const Dataset ds = load_required_dataset(cfg.dataset.dir, "train-recon");
  const auto val_refs = ds.select_rec("recVal");

  for (const PhaseSource source : cfg.synthesis.phase_sources) {
    const fs::path synth_path = cfg.synth_dir(source);
    const Dataset synth = load_required_dataset(synth_path, "train-recon");
    std::vector<const SliceRecord*> train_refs;
    for (const auto& r : synth.records) train_refs.push_back(&r);

    for (const std::uint64_t eval_seed : cfg.evaluation.seeds) {
      ReconTrainConfig tcfg = cfg.recon.training;
      tcfg.seed = cfg.recon_seed(source, eval_seed);
      std::vector<LossCurvePoint> curve;
      const ReconCheckpoint ckpt =
          train_recon(train_refs, val_refs, cfg.recon.mask_grid, cfg.recon.mask_kind,
                      cfg.recon.cascades, tcfg, to_string(source), &curve);
      const fs::path out = cfg.recon_checkpoint(source, eval_seed);
      save_recon_checkpoint(out, ckpt);
      write_loss_curve(out.parent_path() / (out.stem().string() + "_loss.csv"), curve);
      std::cout << "recon checkpoint written to " << out.string()
                << " (final_loss=" << ckpt.final_train_loss << ")\n";
    }
  }
}

namespace {

std::vector<Tensor> phases_of(const Dataset& ds) {
  std::vector<Tensor> out;
  for (const auto& r : ds.records)
    if (r.phase) out.push_back(*r.phase);
  return out;
}

void emit_charts(const ExperimentConfig& cfg, const MetricReport& aggregate) {
  std::set<int> acs_values;
  for (const auto& [r, n_acs] : cfg.recon.mask_grid) acs_values.insert(n_acs);

  for (const std::string metric : {"nrmse", "psnr", "ssim"}) {
    for (const int n_acs : acs_values) {
      std::vector<int> rs;
      for (const auto& [r, a] : cfg.recon.mask_grid)
        if (a == n_acs) rs.push_back(r);
      std::sort(rs.begin(), rs.end());
      if (rs.empty()) continue;

      std::vector<std::string> groups;
      for (int r : rs) groups.push_back("R=" + std::to_string(r));

      auto lookup = [&](const std::string& method, const std::string& source,
                        int r) -> double {
        for (const auto& row : aggregate.rows)
          if (row.method == method && row.phase_source == source && row.r == r &&
              row.n_acs == n_acs && row.metric == metric)
            return row.mean;
        return std::numeric_limits<double>::quiet_NaN();
      };

      std::vector<BarSeries> series;
      for (const PhaseSource source : cfg.synthesis.phase_sources) {
        BarSeries s;
        s.name = to_string(source);
        for (int r : rs) s.values.push_back(lookup("varnet", to_string(source), r));
        series.push_back(std::move(s));
      }
      BarSeries zf;
      zf.name = "zero filled";
      for (int r : rs) zf.values.push_back(lookup("zero_filled", "", r));
      series.push_back(std::move(zf));

      const fs::path out = cfg.evaluation.dir / ("chart_" + metric + "_acs" +
                                                 std::to_string(n_acs) + ".png");
      write_bar_chart_png(out, metric + "  N_ACS=" + std::to_string(n_acs), groups,
                          series);
    }
  }
}

}  // namespace

void cmd_evaluate(const ExperimentConfig& cfg) {
  const Dataset ds = load_required_dataset(cfg.dataset.dir, "evaluate");
  const auto test_refs = ds.select_rec("recTest");
  if (test_refs.empty()) throw config_error("evaluate: recTest split is empty");

  // fail fast with a complete list of missing artifacts
  std::vector<std::string> missing;
  for (const PhaseSource source : cfg.synthesis.phase_sources)
    for (const std::uint64_t eval_seed : cfg.evaluation.seeds)
      if (!fs::exists(cfg.recon_checkpoint(source, eval_seed)))
        missing.push_back(cfg.recon_checkpoint(source, eval_seed).string());
  if (cfg.evaluation.frechet_enabled)
    for (const PhaseSource source : cfg.synthesis.phase_sources)
      if (!fs::exists(cfg.synth_dir(source) / "manifest.json"))
        missing.push_back(cfg.synth_dir(source).string());
  if (!missing.empty()) {
    std::string msg = "evaluate: missing artifacts:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw config_error(msg);
  }

  std::vector<MetricReport> per_seed;
  for (std::size_t k = 0; k < cfg.evaluation.seeds.size(); ++k) {
    const std::uint64_t eval_seed = cfg.evaluation.seeds[k];
    MetricReport merged;
    bool first_source = true;
    for (const PhaseSource source : cfg.synthesis.phase_sources) {
      const ReconCheckpoint ckpt =
          load_recon_checkpoint(cfg.recon_checkpoint(source, eval_seed));
      const VarNet net = varnet_from_checkpoint(ckpt);
      const MetricReport rep = evaluate_recon(net, to_string(source), test_refs,
                                              cfg.recon.mask_grid, cfg.recon.mask_kind);
      for (const auto& row : rep.rows) {
        if (row.method == "zero_filled" && !first_source) continue;
        merged.rows.push_back(row);
      }
      first_source = false;
    }
    write_report_json(cfg.evaluation.dir / ("report_seed" + std::to_string(eval_seed) +
                                            ".json"),
                      merged);
    per_seed.push_back(std::move(merged));
  }

  MetricReport aggregate = aggregate_over_seeds(per_seed);

  if (cfg.evaluation.frechet_enabled) {
    const auto rec_train = ds.select_rec("recTrain");
    std::vector<Tensor> gt_phases;
    for (const auto* r : rec_train)
      if (r->phase) gt_phases.push_back(*r->phase);
    if (!gt_phases.empty()) {
      const auto extractor = random_conv_extractor(cfg.evaluation.frechet_extractor_seed,
                                                   cfg.evaluation.frechet_dim);
      const FeatureStats gt_stats = embed_features(gt_phases, extractor);
      for (const PhaseSource source : cfg.synthesis.phase_sources) {
        const Dataset synth = load_dataset(cfg.synth_dir(source));
        const std::vector<Tensor> phases = phases_of(synth);
        if (phases.empty()) continue;
        const FeatureStats stats = embed_features(phases, extractor);
        aggregate.rows.push_back({"frechet", to_string(source), 0, 0, 0.0, "frechet",
                                  frechet_distance(gt_stats, stats), 0.0,
                                  phases.size()});
      }
    }
  }

  write_report_csv(cfg.evaluation.dir / "report.csv", aggregate);
  write_report_json(cfg.evaluation.dir / "report.json", aggregate);
  emit_charts(cfg, aggregate);
  std::cout << "evaluation report written to "
            << (cfg.evaluation.dir / "report.csv").string() << " (" << aggregate.rows.size()
            << " rows)\n";
}

void cmd_run_all(const ExperimentConfig& cfg) {
  if (cfg.dataset.source == "phantom")
    cmd_phantom_dataset(cfg);
  else
    cmd_ingest(cfg);

  const bool needs_sbdm =
      std::count(cfg.synthesis.phase_sources.begin(), cfg.synthesis.phase_sources.end(),
                 PhaseSource::sbdm) > 0;
  if (needs_sbdm) cmd_train_sbdm(cfg);

  cmd_synthesize(cfg);
  cmd_train_recon(cfg);
  cmd_evaluate(cfg);
}

}  // namespace phaseforge
