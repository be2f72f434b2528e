#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "phaseforge/pipeline.hpp"

using namespace phaseforge;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f);
  return std::string((std::istreambuf_iterator<char>(f)), {});
}

ExperimentConfig tiny_config(const fs::path& root) {
  ExperimentConfig cfg;
  cfg.seed = 99;
  cfg.dataset.size = 32;
  cfg.dataset.count = 16;
  cfg.dataset.gen_split = {0.5, 0.125, 0.375};
  cfg.dataset.rec_split = {0.34, 0.33, 0.33};
  cfg.dataset.dir = root / "dataset";
  cfg.sbdm.network.base_channels = 4;
  cfg.sbdm.network.depth = 1;
  cfg.sbdm.network.time_embedding_dim = 8;
  cfg.sbdm.training.batch_size = 4;
  cfg.sbdm.training.max_steps = 10;
  cfg.sbdm.training.peak_lr = 1e-3;
  cfg.sbdm.training.warmup_steps = 5;
  cfg.sbdm.training.val_interval = 5;
  cfg.sbdm.checkpoint = root / "sbdm.ckpt";
  cfg.sbdm.loss_curve = root / "sbdm_loss.csv";
  cfg.synthesis.sampler.predictor_steps = 12;
  cfg.synthesis.dir = root / "synth";
  cfg.recon.cascades.num_cascades = 1;
  cfg.recon.cascades.refiner_base = 4;
  cfg.recon.cascades.refiner_depth = 1;
  cfg.recon.training.batch_size = 2;
  cfg.recon.training.steps = 6;
  cfg.recon.training.val_interval = 3;
  cfg.recon.mask_grid = {{2, 4}, {4, 4}};
  cfg.recon.checkpoint_dir = root / "recon";
  cfg.evaluation.seeds = {1, 2};
  cfg.evaluation.dir = root / "report";
  cfg.evaluation.frechet_dim = 4;
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("phaseforge_pipe_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("phantom dataset command: counts, determinism, failure modes") {
  const fs::path root = fresh_dir("phantom");

  ExperimentConfig cfg = tiny_config(root);
  cfg.dataset.size = 16;
  cfg.dataset.count = 100;
  cfg.dataset.gen_split = {0.6, 0.1, 0.3};
  cmd_phantom_dataset(cfg);

  const Dataset ds = load_dataset(cfg.dataset.dir);
  std::map<std::string, int> counts;
  for (const auto& [p, s] : ds.manifest.gen_split) counts[s]++;
  CHECK(counts["genTrain"] == 60);
  CHECK(counts["genVal"] == 10);
  CHECK(counts["genTest"] == 30);
  REQUIRE(ds.records.size() == 100);
  CHECK(ds.records[0].kspace.has_value());

  SUBCASE("rerun with the same seed writes an identical manifest") {
    const std::string first = slurp(cfg.dataset.dir / "manifest.json");
    cmd_phantom_dataset(cfg);
    CHECK(slurp(cfg.dataset.dir / "manifest.json") == first);
  }

  SUBCASE("too few patients for the splits is a configuration error") {
    ExperimentConfig bad = cfg;
    bad.dataset.count = 2;
    bad.dataset.dir = root / "bad";
    CHECK_THROWS_AS(cmd_phantom_dataset(bad), config_error);
  }

  fs::remove_all(root);
}

TEST_CASE("stage ordering is enforced with configuration errors") {
  const fs::path root = fresh_dir("ordering");
  ExperimentConfig cfg = tiny_config(root);

  CHECK_THROWS_AS(cmd_train_sbdm(cfg), config_error);     // no dataset yet
  CHECK_THROWS_AS(cmd_evaluate(cfg), config_error);       // nothing exists
  cmd_phantom_dataset(cfg);
  CHECK_THROWS_AS(cmd_synthesize(cfg), config_error);     // no sbdm checkpoint
  CHECK_THROWS_AS(cmd_train_recon(cfg), config_error);    // no synthesized data
  fs::remove_all(root);
}

TEST_CASE("full pipeline: artifacts, report completeness, reproducibility") {
  const fs::path root = fresh_dir("full");
  ExperimentConfig cfg = tiny_config(root);

  cmd_run_all(cfg);

  CHECK(fs::exists(cfg.sbdm.checkpoint));
  CHECK(fs::exists(cfg.sbdm.loss_curve));
  for (const PhaseSource s : cfg.synthesis.phase_sources) {
    CHECK(fs::exists(cfg.synth_dir(s) / "manifest.json"));
    for (const auto seed : cfg.evaluation.seeds)
      CHECK(fs::exists(cfg.recon_checkpoint(s, seed)));
  }
  CHECK(fs::exists(cfg.evaluation.dir / "report.csv"));
  CHECK(fs::exists(cfg.evaluation.dir / "report.json"));
  CHECK(fs::exists(cfg.evaluation.dir / "report_seed1.json"));
  CHECK(fs::exists(cfg.evaluation.dir / "report_seed2.json"));
  CHECK(fs::exists(cfg.evaluation.dir / "chart_nrmse_acs4.png"));
  CHECK(fs::exists(cfg.evaluation.dir / "chart_psnr_acs4.png"));
  CHECK(fs::exists(cfg.evaluation.dir / "chart_ssim_acs4.png"));

  const MetricReport report = read_report_json(cfg.evaluation.dir / "report.json");
  // 3 sources x 2 grid points x 3 metrics (varnet) + 2 x 3 (zero-filled) + 3 frechet
  const std::size_t varnet_rows = 3 * 2 * 3;
  const std::size_t zf_rows = 2 * 3;
  const std::size_t frechet_rows = 3;
  CHECK(report.rows.size() == varnet_rows + zf_rows + frechet_rows);

  int zf_seen = 0, frechet_seen = 0;
  for (const auto& row : report.rows) {
    if (row.method == "zero_filled") ++zf_seen;
    if (row.method == "frechet") {
      ++frechet_seen;
      CHECK(row.mean >= 0.0);
      if (row.phase_source == "gt") CHECK(row.mean <= 1e-8);
    }
  }
  CHECK(zf_seen == static_cast<int>(zf_rows));
  CHECK(frechet_seen == static_cast<int>(frechet_rows));

  SUBCASE("three-seed style aggregation equals the mean of per-seed means") {
    const MetricReport s1 = read_report_json(cfg.evaluation.dir / "report_seed1.json");
    const MetricReport s2 = read_report_json(cfg.evaluation.dir / "report_seed2.json");
    for (const auto& row : report.rows) {
      if (row.method != "varnet") continue;
      double acc = 0.0;
      int found = 0;
      for (const auto* rep : {&s1, &s2})
        for (const auto& r : rep->rows)
          if (r.method == row.method && r.phase_source == row.phase_source &&
              r.r == row.r && r.n_acs == row.n_acs && r.metric == row.metric) {
            acc += r.mean;
            ++found;
          }
      REQUIRE(found == 2);
      CHECK(row.mean == doctest::Approx(acc / 2.0).epsilon(1e-12));
    }
  }

  SUBCASE("re-running evaluation reproduces the report byte for byte") {
    const std::string csv = slurp(cfg.evaluation.dir / "report.csv");
    const std::string png = slurp(cfg.evaluation.dir / "chart_nrmse_acs4.png");
    cmd_evaluate(cfg);
    CHECK(slurp(cfg.evaluation.dir / "report.csv") == csv);
    CHECK(slurp(cfg.evaluation.dir / "chart_nrmse_acs4.png") == png);
  }

  SUBCASE("synthesized dataset manifests record source and seed") {
    const Dataset synth = load_dataset(cfg.synth_dir(PhaseSource::sbdm));
    CHECK(synth.manifest.phase_source == "sbdm");
    CHECK(synth.manifest.seed == derive_seed(cfg.synthesis_seed(), "sbdm"));
    for (const auto& rec : synth.records) CHECK(rec.kspace.has_value());
  }

  fs::remove_all(root);
}

#ifdef PHASEFORGE_CLI_PATH
TEST_CASE("CLI exit codes") {
  const fs::path root = fresh_dir("cli");
  const std::string cli = PHASEFORGE_CLI_PATH;

  SUBCASE("missing config file exits 2") {
    const int rc = std::system((cli + " phantom --config /nonexistent.json >/dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(rc) == 2);
  }

  SUBCASE("malformed config exits 2") {
    const fs::path bad = root / "bad.json";
    std::ofstream(bad) << "{ not json";
    const int rc = std::system((cli + " phantom --config " + bad.string() + " >/dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(rc) == 2);
  }

  SUBCASE("unknown subcommand exits 2") {
    const int rc = std::system((cli + " frobnicate >/dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(rc) == 2);
  }

  SUBCASE("phantom stage succeeds and evaluate before training exits 2") {
    const fs::path cfg_path = root / "cfg.json";
    std::ofstream(cfg_path) << R"({
      "seed": 7,
      "dataset": {"source": "phantom", "size": 16, "count": 12,
                   "gen_split": [0.5, 0.25, 0.25], "rec_split": [0.34, 0.33, 0.33],
                   "dir": ")" << (root / "ds").string() << R"("},
      "recon": {"mask_grid": [[2, 4]]}
    })";
    int rc = std::system((cli + " phantom --config " + cfg_path.string() + " >/dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(rc) == 0);
    rc = std::system((cli + " evaluate --config " + cfg_path.string() + " >/dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(rc) == 2);
  }

  fs::remove_all(root);
}
#endif
