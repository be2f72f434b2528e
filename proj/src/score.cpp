#include "phaseforge/score.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "phaseforge/checkpoint.hpp"
#include "phaseforge/errors.hpp"

namespace phaseforge {

using nn::Var;

double lr_schedule(std::int64_t step, const ScoreTrainConfig& cfg) {
  if (cfg.warmup_steps < 1) throw contract_error("lr_schedule: warmup_steps must be >= 1");
  if (!(cfg.peak_lr > 0.0)) throw contract_error("lr_schedule: peak_lr must be > 0");
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  return cfg.peak_lr * std::min(1.0, frac);
}

ScoreModel::ScoreModel(const ScoreNetworkConfig& cfg, const NoiseSchedule& sched,
                       std::uint64_t init_seed)
    : cfg_(cfg), sched_(sched), init_seed_(init_seed) {
  if (cfg.base_channels < 1 || cfg.depth < 1 || cfg.time_embedding_dim < 2)
    throw contract_error("ScoreModel: invalid network config");
  Rng rng(init_seed);
  const int dim = cfg.time_embedding_dim;
  temb1_ = nn::Linear("temb1", params_, dim, dim, rng);
  temb2_ = nn::Linear("temb2", params_, dim, dim, rng);
  unet_ = nn::UNet("unet", params_, ScoreNetworkConfig::input_channels,
                   ScoreNetworkConfig::output_channels, cfg.base_channels, cfg.depth,
                   dim, rng);
}

namespace {
// phase maps live in [-pi, pi); std of the uniform law on that interval
constexpr double kDataStd = 1.8137993642342178;  // pi / sqrt(3)
}  // namespace

// sigma * s_theta = s_data * c_in * F(c_in * x, y, t) - sigma * c_in^2 * x
// with c_in = 1/sqrt(sigma^2 + s_data^2). A zero-output F therefore yields
// the exact score of N(0, (sigma^2 + s_data^2) I), and the network inputs
// and outputs stay unit-scale across the whole noise range.
Var ScoreModel::forward_raw(const Var& x, const Var& y,
                            const std::vector<double>& ts) const {
  if (!x->value.same_shape(y->value))
    throw contract_error("ScoreModel: condition shape mismatch");
  if (x->value.rank() != 4 || x->value.dim(0) != ts.size())
    throw contract_error("ScoreModel: expects (N,1,H,W) input matching times");
  std::vector<double> c_in(ts.size()), c_out(ts.size()), c_skip(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double sigma = sched_.sigma_at(ts[i]);
    const double inv = 1.0 / std::sqrt(sigma * sigma + kDataStd * kDataStd);
    c_in[i] = inv;
    c_out[i] = kDataStd * inv;
    c_skip[i] = -sigma * inv * inv;
  }
  const Var feats = nn::constant(nn::time_features(ts, cfg_.time_embedding_dim));
  const Var temb = nn::silu(temb2_(nn::silu(temb1_(feats))));
  const Var f = unet_(nn::concat_channels(nn::scale_per_sample(x, c_in), y), temb);
  return nn::add(nn::scale_per_sample(f, c_out), nn::scale_per_sample(x, c_skip));
}

Tensor ScoreModel::score_eval(const Tensor& x_t, double t, const Tensor& y) const {
  if (!x_t.same_shape(y)) throw contract_error("score_eval: shape mismatch");
  if (x_t.rank() != 2) throw contract_error("score_eval: expects 2-D images");
  if (t < sched_.eps || t > 1.0)
    throw contract_error("score_eval: t outside [eps, 1]");

  nn::NoGradGuard ng;
  const std::size_t h = x_t.dim(0), w = x_t.dim(1);
  const Var xv = nn::constant(x_t.reshaped({1, 1, h, w}));
  const Var yv = nn::constant(y.reshaped({1, 1, h, w}));
  const Var raw = forward_raw(xv, yv, {t});
  Tensor out = raw->value.reshaped({h, w});
  const double inv_sigma = 1.0 / sched_.sigma_at(t);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv_sigma;
  if (!out.all_finite()) throw numeric_error("score_eval: non-finite network output");
  return out;
}

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

void check_batch(const std::vector<ScoreSample>& batch) {
  if (batch.empty()) throw contract_error("dsm_loss: empty batch");
  for (const auto& s : batch) {
    if (s.phase == nullptr || s.magnitude == nullptr)
      throw contract_error("dsm_loss: sample missing phase or magnitude");
    if (!s.phase->same_shape(*s.magnitude))
      throw contract_error("dsm_loss: phase/magnitude shape mismatch");
    if (s.phase->min() < -kPi || s.phase->max() >= kPi)
      throw contract_error("dsm_loss: phase outside [-pi, pi)");
  }
}

// Common draw order: per sample, first t then the noise field. Both loss
// routes must consume the stream identically.
struct PerturbedBatch {
  std::vector<double> ts;
  Tensor x0, xt, z, y;  // (N,1,H,W)
};

PerturbedBatch perturb_batch(const std::vector<ScoreSample>& batch,
                             const NoiseSchedule& sched, Rng& rng) {
  const std::size_t n = batch.size();
  const std::size_t h = batch[0].phase->dim(0), w = batch[0].phase->dim(1);
  PerturbedBatch out;
  out.ts.resize(n);
  out.x0 = Tensor({n, 1, h, w});
  out.xt = Tensor({n, 1, h, w});
  out.z = Tensor({n, 1, h, w});
  out.y = Tensor({n, 1, h, w});
  for (std::size_t i = 0; i < n; ++i) {
    out.ts[i] = rng.uniform(sched.eps, 1.0);
    const double sigma = sched.sigma_at(out.ts[i]);
    const Tensor& phase = *batch[i].phase;
    const Tensor& mag = *batch[i].magnitude;
    for (std::size_t p = 0; p < h * w; ++p) {
      const double zz = rng.normal();
      out.x0[i * h * w + p] = phase[p];
      out.z[i * h * w + p] = zz;
      out.xt[i * h * w + p] = phase[p] + sigma * zz;
      out.y[i * h * w + p] = mag[p];
    }
  }
  return out;
}

}  // namespace

Var dsm_loss_graph(const ScoreModel& model, const std::vector<ScoreSample>& batch,
                   Rng& rng) {
  check_batch(batch);
  PerturbedBatch pb = perturb_batch(batch, model.schedule(), rng);
  const std::size_t n = batch.size();
  const std::size_t per = pb.z.size() / n;

  // sigma * s_theta = raw output under the 1/sigma parametrization
  const Var raw = model.forward_raw(nn::constant(pb.xt), nn::constant(pb.y), pb.ts);
  const Var resid = nn::add(raw, nn::constant(pb.z));

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < per; ++p) {
      if (!std::isfinite(resid->value[i * per + p]))
        throw numeric_error("dsm_loss: non-finite loss at batch index " +
                            std::to_string(i));
    }
  }
  return nn::scale(nn::sum(nn::mul(resid, resid)), 1.0 / static_cast<double>(n));
}

double dsm_loss_value(const CondScoreFn& score, const NoiseSchedule& sched,
                      const std::vector<ScoreSample>& batch, Rng& rng) {
  check_batch(batch);
  PerturbedBatch pb = perturb_batch(batch, sched, rng);
  const std::size_t n = batch.size();
  const std::size_t h = batch[0].phase->dim(0), w = batch[0].phase->dim(1);

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double sigma = sched.sigma_at(pb.ts[i]);
    Tensor xt({h, w}), x0({h, w}), y({h, w});
    for (std::size_t p = 0; p < h * w; ++p) {
      xt[p] = pb.xt[i * h * w + p];
      x0[p] = pb.x0[i * h * w + p];
      y[p] = pb.y[i * h * w + p];
    }
    const Tensor s = score(xt, pb.ts[i], y);
    if (!s.same_shape(xt)) throw contract_error("dsm_loss: score shape mismatch");
    double acc = 0.0;
    for (std::size_t p = 0; p < h * w; ++p) {
      const double r = sigma * s[p] + (xt[p] - x0[p]) / sigma;
      acc += r * r;
    }
    if (!std::isfinite(acc))
      throw numeric_error("dsm_loss: non-finite loss at batch index " + std::to_string(i));
    total += acc;
  }
  return total / static_cast<double>(n);
}

namespace {

double validation_loss(const ScoreModel& model, const std::vector<ScoreSample>& val,
                       int batch_size, std::uint64_t val_seed) {
  nn::NoGradGuard ng;
  Rng rng(val_seed);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t at = 0; at < val.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(val.size(), at + static_cast<std::size_t>(batch_size));
    std::vector<ScoreSample> chunk(val.begin() + static_cast<std::ptrdiff_t>(at),
                                   val.begin() + static_cast<std::ptrdiff_t>(end));
    const Var loss = dsm_loss_graph(model, chunk, rng);
    total += loss->value[0] * static_cast<double>(chunk.size());
    counted += chunk.size();
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

std::vector<std::pair<std::string, Tensor>> snapshot_params(const nn::ParamList& params) {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.name, p.var->value);
  return out;
}

}  // namespace

ScoreCheckpoint train_score_model(const std::vector<ScoreSample>& train,
                                  const std::vector<ScoreSample>& val,
                                  const ScoreNetworkConfig& net_cfg,
                                  const ScoreTrainConfig& train_cfg,
                                  const NoiseSchedule& sched,
                                  const std::string& dataset_fingerprint,
                                  std::vector<LossCurvePoint>* curve) {
  if (train.empty()) throw config_error("train_score_model: empty training set");
  for (const auto& s : train)
    if (s.phase == nullptr)
      throw config_error("train_score_model: training record lacks a ground-truth phase");

  ScoreModel model(net_cfg, sched, derive_seed(train_cfg.seed, "score-init"));
  std::vector<Var> vars = nn::vars_of(model.params());
  nn::Adam opt(vars);

  Rng order_rng(derive_seed(train_cfg.seed, "score-batches"));
  Rng noise_rng(derive_seed(train_cfg.seed, "score-noise"));
  const std::uint64_t val_seed = derive_seed(train_cfg.seed, "score-val");

  std::vector<std::size_t> perm(train.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), order_rng.engine());
  std::size_t cursor = 0;

  ScoreCheckpoint ckpt;
  ckpt.net = net_cfg;
  ckpt.schedule = sched;
  ckpt.seed = train_cfg.seed;
  ckpt.dataset_fingerprint = dataset_fingerprint;
  ckpt.params = snapshot_params(model.params());
  ckpt.best_val_loss = std::numeric_limits<double>::infinity();

  double last_train_loss = 0.0;
  for (std::int64_t step = 1; step <= train_cfg.max_steps; ++step) {
    std::vector<ScoreSample> batch;
    batch.reserve(static_cast<std::size_t>(train_cfg.batch_size));
    for (int b = 0; b < train_cfg.batch_size; ++b) {
      if (cursor == perm.size()) {
        std::shuffle(perm.begin(), perm.end(), order_rng.engine());
        cursor = 0;
      }
      batch.push_back(train[perm[cursor++]]);
    }

    nn::zero_grad(vars);
    const Var loss = dsm_loss_graph(model, batch, noise_rng);
    nn::backward(loss);
    opt.step(lr_schedule(step, train_cfg));
    last_train_loss = loss->value[0];

    double val_loss = std::numeric_limits<double>::quiet_NaN();
    const bool val_due = !val.empty() && (step % train_cfg.val_interval == 0 ||
                                          step == train_cfg.max_steps);
    if (val_due) {
      val_loss = validation_loss(model, val, train_cfg.batch_size, val_seed);
      if (val_loss < ckpt.best_val_loss) {
        ckpt.best_val_loss = val_loss;
        ckpt.params = snapshot_params(model.params());
        ckpt.steps = step;
      }
    }
    if (curve) curve->push_back({step, last_train_loss, val_loss});
  }

  if (val.empty()) {
    ckpt.params = snapshot_params(model.params());
    ckpt.steps = train_cfg.max_steps;
    ckpt.best_val_loss = std::numeric_limits<double>::quiet_NaN();
  }
  ckpt.final_train_loss = last_train_loss;
  return ckpt;
}

ScoreModel model_from_checkpoint(const ScoreCheckpoint& ckpt) {
  ScoreModel model(ckpt.net, ckpt.schedule, derive_seed(ckpt.seed, "score-init"));
  if (model.params().size() != ckpt.params.size())
    throw io_error("score checkpoint: parameter table mismatch");
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    auto& p = model.params()[i];
    if (p.name != ckpt.params[i].first ||
        !p.var->value.same_shape(ckpt.params[i].second))
      throw io_error("score checkpoint: parameter " + p.name + " mismatch");
    p.var->value = ckpt.params[i].second;
  }
  return model;
}

void save_score_checkpoint(const std::filesystem::path& path, const ScoreCheckpoint& ckpt) {
  CheckpointBlob blob;
  blob.header = {
      {"kind", "score"},
      {"config",
       {{"base_channels", ckpt.net.base_channels},
        {"depth", ckpt.net.depth},
        {"time_embedding_dim", ckpt.net.time_embedding_dim}}},
      {"schedule",
       {{"sigma_min", ckpt.schedule.sigma_min},
        {"sigma_max", ckpt.schedule.sigma_max},
        {"t_steps", ckpt.schedule.t_steps},
        {"eps", ckpt.schedule.eps}}},
      {"meta",
       {{"steps", ckpt.steps},
        {"final_train_loss", ckpt.final_train_loss},
        {"best_val_loss", std::isfinite(ckpt.best_val_loss) ? ckpt.best_val_loss : -1.0},
        {"seed", ckpt.seed},
        {"dataset_fingerprint", ckpt.dataset_fingerprint}}}};
  blob.params = ckpt.params;
  save_checkpoint(path, blob);
}

ScoreCheckpoint load_score_checkpoint(const std::filesystem::path& path) {
  CheckpointBlob blob = load_checkpoint(path);
  if (blob.header.at("kind") != "score")
    throw io_error("not a score checkpoint: " + path.string());
  ScoreCheckpoint ckpt;
  const auto& cfg = blob.header.at("config");
  ckpt.net.base_channels = cfg.at("base_channels").get<int>();
  ckpt.net.depth = cfg.at("depth").get<int>();
  ckpt.net.time_embedding_dim = cfg.at("time_embedding_dim").get<int>();
  const auto& sch = blob.header.at("schedule");
  ckpt.schedule = NoiseSchedule(sch.at("sigma_min").get<double>(),
                                sch.at("sigma_max").get<double>(),
                                sch.at("t_steps").get<int>(), sch.at("eps").get<double>());
  const auto& meta = blob.header.at("meta");
  ckpt.steps = meta.at("steps").get<std::int64_t>();
  ckpt.final_train_loss = meta.at("final_train_loss").get<double>();
  ckpt.best_val_loss = meta.at("best_val_loss").get<double>();
  if (ckpt.best_val_loss < 0.0)
    ckpt.best_val_loss = std::numeric_limits<double>::quiet_NaN();
  ckpt.seed = meta.at("seed").get<std::uint64_t>();
  ckpt.dataset_fingerprint = meta.at("dataset_fingerprint").get<std::string>();
  ckpt.params = std::move(blob.params);
  return ckpt;
}

}  // namespace phaseforge
