#ifndef PHASEFORGE_SCORE_HPP
#define PHASEFORGE_SCORE_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "phaseforge/nn.hpp"
#include "phaseforge/sde.hpp"
#include "phaseforge/tensor.hpp"

namespace phaseforge {

struct ScoreNetworkConfig {
  int base_channels = 16;
  int depth = 2;
  int time_embedding_dim = 64;
  // Residual skip connections are scaled by exactly 1/sqrt(2).
  static constexpr double skip_scale = 0.7071067811865476;
  static constexpr int input_channels = 2;  // noisy phase + magnitude condition
  static constexpr int output_channels = 1;
};

struct ScoreTrainConfig {
  int batch_size = 8;
  int max_steps = 1000;
  double peak_lr = 1e-4;
  int warmup_steps = 5000;
  std::uint64_t seed = 0;
  int val_interval = 100;  // validation cadence for model selection
};

// lr = peak_lr * min(1, step / warmup_steps)
double lr_schedule(std::int64_t step, const ScoreTrainConfig& cfg);

// Conditional score network s_theta(x_t, t, y): the magnitude condition is
// concatenated to the noisy phase along the channel axis; the raw U-Net
// output is divided by sigma(t) so the network regresses unit-scale noise.
// The noisy input is scaled by 1/sqrt(sigma^2(t) + s_data^2) before the first
// convolution so activations stay bounded across the whole noise range.
class ScoreModel {
 public:
  ScoreModel(const ScoreNetworkConfig& cfg, const NoiseSchedule& sched,
             std::uint64_t init_seed);

  // raw U-Net output (before the 1/sigma scaling); builds a graph node
  nn::Var forward_raw(const nn::Var& x, const nn::Var& y,
                      const std::vector<double>& ts) const;

  // single-record score evaluation, no gradient tracking
  Tensor score_eval(const Tensor& x_t, double t, const Tensor& y) const;

  const ScoreNetworkConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return sched_; }
  nn::ParamList& params() { return params_; }
  const nn::ParamList& params() const { return params_; }
  std::uint64_t init_seed() const { return init_seed_; }

 private:
  ScoreNetworkConfig cfg_;
  NoiseSchedule sched_;
  std::uint64_t init_seed_ = 0;
  nn::ParamList params_;
  nn::Linear temb1_, temb2_;
  nn::UNet unet_;
};

// (ground-truth phase, magnitude) pair used for training/validation
struct ScoreSample {
  const Tensor* phase;
  const Tensor* magnitude;
};

using CondScoreFn =
    std::function<Tensor(const Tensor& x_t, double t, const Tensor& y)>;

// Denoising objective: mean over the batch of ||sigma(t) s(x_t,t,y) +
// (x_t - x0)/sigma(t)||^2 with t ~ U[eps,1] and x_t ~ N(x0, sigma^2(t) I).
// Graph form for training; evaluator form for validation and for checking
// arbitrary score functions (e.g. the analytic kernel score).
nn::Var dsm_loss_graph(const ScoreModel& model, const std::vector<ScoreSample>& batch,
                       Rng& rng);
double dsm_loss_value(const CondScoreFn& score, const NoiseSchedule& sched,
                      const std::vector<ScoreSample>& batch, Rng& rng);

struct ScoreCheckpoint {
  ScoreNetworkConfig net;
  NoiseSchedule schedule;
  std::vector<std::pair<std::string, Tensor>> params;
  // training metadata
  std::int64_t steps = 0;
  double final_train_loss = 0.0;
  double best_val_loss = 0.0;
  std::uint64_t seed = 0;
  std::string dataset_fingerprint;
};

struct LossCurvePoint {
  std::int64_t step;
  double train_loss;
  double val_loss;  // NaN when not evaluated at this step
};

// Trains on `train`, selects the checkpoint with the lowest validation
// denoising loss on `val` (final parameters when `val` is empty).
ScoreCheckpoint train_score_model(const std::vector<ScoreSample>& train,
                                  const std::vector<ScoreSample>& val,
                                  const ScoreNetworkConfig& net_cfg,
                                  const ScoreTrainConfig& train_cfg,
                                  const NoiseSchedule& sched,
                                  const std::string& dataset_fingerprint,
                                  std::vector<LossCurvePoint>* curve = nullptr);

ScoreModel model_from_checkpoint(const ScoreCheckpoint& ckpt);
void save_score_checkpoint(const std::filesystem::path& path, const ScoreCheckpoint& ckpt);
ScoreCheckpoint load_score_checkpoint(const std::filesystem::path& path);

}  // namespace phaseforge

#endif
