#ifndef PHASEFORGE_SDE_HPP
#define PHASEFORGE_SDE_HPP

#include <functional>
#include <vector>

#include "phaseforge/rng.hpp"
#include "phaseforge/tensor.hpp"

namespace phaseforge {

// Geometric sigma schedule of the variance-exploding SDE:
// sigma(t) = sigma_min * (sigma_max/sigma_min)^t on t in [0, 1].
struct NoiseSchedule {
  double sigma_min = 0.01;
  double sigma_max = 378.0;
  int t_steps = 1000;
  double eps = 1e-5;

  NoiseSchedule() = default;
  NoiseSchedule(double smin, double smax, int steps, double eps_ = 1e-5);

  double sigma_at(double t) const;
  // g(t) = sigma(t) * sqrt(2 ln(sigma_max/sigma_min)); the unique diffusion
  // coefficient with zero drift whose perturbation kernel is N(x0, sigma^2(t) I).
  double diffusion_coeff(double t) const;
  // t_steps times from 1 down to eps, uniformly spaced, strictly decreasing.
  std::vector<double> discretize_times() const;
};

struct SdeState {
  Tensor x;
  double t = 1.0;
};

using ScoreFn = std::function<Tensor(const Tensor& x, double t)>;

// x_t = x0 + sigma(t) * z with z ~ N(0, I); returns (x_t, z).
std::pair<Tensor, Tensor> marginal_perturb(const NoiseSchedule& sched,
                                           const Tensor& x0, double t, Rng& rng);

// Reverse-time Euler-Maruyama step (dt < 0, zero drift):
// x' = x - g(t)^2 * score(x, t) * dt + g(t) * sqrt(|dt|) * z.
SdeState reverse_step_euler(const NoiseSchedule& sched, const SdeState& state,
                            double dt, const ScoreFn& score, Rng& rng);

// One Langevin corrector step at fixed t with step size
// alpha = 2 * (snr * ||z|| / ||score||)^2; returns the state unchanged when
// the score norm is zero.
SdeState corrector_step_langevin(const NoiseSchedule& sched, const SdeState& state,
                                 const ScoreFn& score, double snr, Rng& rng);

struct SamplerConfig {
  int predictor_steps = 0;  // 0: use schedule.t_steps
  int corrector_steps = 1;
  double snr = 0.16;
};

// Full reverse pass: start from N(0, sigma_max^2 I) at t = 1, run
// predictor(-corrector) steps down the discretized times, return x at t = eps.
Tensor reverse_sample(const NoiseSchedule& sched, const std::vector<std::size_t>& shape,
                      const ScoreFn& score, const SamplerConfig& cfg, Rng& rng);

}  // namespace phaseforge

#endif
