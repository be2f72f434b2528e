#include "phaseforge/sde.hpp"

#include <cmath>
#include <string>

#include "phaseforge/errors.hpp"

namespace phaseforge {

NoiseSchedule::NoiseSchedule(double smin, double smax, int steps, double eps_)
    : sigma_min(smin), sigma_max(smax), t_steps(steps), eps(eps_) {
  if (!(sigma_min > 0.0)) throw contract_error("NoiseSchedule: sigma_min must be > 0");
  if (!(sigma_max > sigma_min)) throw contract_error("NoiseSchedule: sigma_max must exceed sigma_min");
  if (t_steps < 1) throw contract_error("NoiseSchedule: t_steps must be >= 1");
  if (!(eps > 0.0 && eps < 1.0)) throw contract_error("NoiseSchedule: eps must lie in (0, 1)");
}

double NoiseSchedule::sigma_at(double t) const {
  if (t < 0.0 || t > 1.0) throw contract_error("sigma_at: t outside [0, 1]");
  return sigma_min * std::pow(sigma_max / sigma_min, t);
}

double NoiseSchedule::diffusion_coeff(double t) const {
  return sigma_at(t) * std::sqrt(2.0 * std::log(sigma_max / sigma_min));
}

std::vector<double> NoiseSchedule::discretize_times() const {
  std::vector<double> ts(static_cast<std::size_t>(t_steps));
  if (t_steps == 1) {
    ts[0] = 1.0;
    return ts;
  }
  const double step = (1.0 - eps) / (t_steps - 1);
  for (int i = 0; i < t_steps; ++i) ts[static_cast<std::size_t>(i)] = 1.0 - i * step;
  ts.back() = eps;  // pin the endpoint against accumulated rounding
  return ts;
}

std::pair<Tensor, Tensor> marginal_perturb(const NoiseSchedule& sched,
                                           const Tensor& x0, double t, Rng& rng) {
  const double sigma = sched.sigma_at(t);
  Tensor z(x0.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.normal();
  Tensor xt = x0;
  for (std::size_t i = 0; i < xt.size(); ++i) xt[i] += sigma * z[i];
  return {std::move(xt), std::move(z)};
}

SdeState reverse_step_euler(const NoiseSchedule& sched, const SdeState& state,
                            double dt, const ScoreFn& score, Rng& rng) {
  if (!(dt < 0.0)) throw contract_error("reverse_step_euler: dt must be negative");
  if (state.t + dt < sched.eps - 1e-12)
    throw contract_error("reverse_step_euler: step would pass below eps");

  const double g = sched.diffusion_coeff(state.t);
  Tensor s = score(state.x, state.t);
  if (!s.same_shape(state.x)) throw contract_error("reverse_step_euler: score shape mismatch");
  if (!s.all_finite())
    throw numeric_error("reverse_step_euler: non-finite score at t=" + std::to_string(state.t));

  const double noise_scale = g * std::sqrt(-dt);
  SdeState next;
  next.x = Tensor(state.x.shape());
  for (std::size_t i = 0; i < next.x.size(); ++i) {
    next.x[i] = state.x[i] - g * g * s[i] * dt + noise_scale * rng.normal();
  }
  next.t = state.t + dt;
  if (!next.x.all_finite())
    throw numeric_error("reverse_step_euler: non-finite state at t=" + std::to_string(next.t));
  return next;
}

SdeState corrector_step_langevin(const NoiseSchedule& sched, const SdeState& state,
                                 const ScoreFn& score, double snr, Rng& rng) {
  if (!(snr > 0.0)) throw contract_error("corrector_step_langevin: snr must be > 0");
  (void)sched;

  Tensor s = score(state.x, state.t);
  if (!s.same_shape(state.x)) throw contract_error("corrector_step_langevin: score shape mismatch");
  if (!s.all_finite())
    throw numeric_error("corrector_step_langevin: non-finite score at t=" + std::to_string(state.t));

  Tensor z(state.x.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.normal();

  const double score_norm = s.norm2();
  if (score_norm == 0.0) return state;  // skip rule
  const double alpha = 2.0 * std::pow(snr * z.norm2() / score_norm, 2.0);
  const double noise_scale = std::sqrt(2.0 * alpha);

  SdeState next;
  next.x = Tensor(state.x.shape());
  for (std::size_t i = 0; i < next.x.size(); ++i) {
    next.x[i] = state.x[i] + alpha * s[i] + noise_scale * z[i];
  }
  next.t = state.t;
  if (!next.x.all_finite())
    throw numeric_error("corrector_step_langevin: non-finite state at t=" + std::to_string(state.t));
  return next;
}

Tensor reverse_sample(const NoiseSchedule& sched, const std::vector<std::size_t>& shape,
                      const ScoreFn& score, const SamplerConfig& cfg, Rng& rng) {
  NoiseSchedule sched_run = sched;
  if (cfg.predictor_steps > 0) sched_run.t_steps = cfg.predictor_steps;
  const std::vector<double> times = sched_run.discretize_times();

  SdeState state;
  state.x = Tensor(shape);
  state.t = times.front();
  for (std::size_t i = 0; i < state.x.size(); ++i)
    state.x[i] = sched.sigma_max * rng.normal();

  for (std::size_t i = 0; i + 1 < times.size(); ++i) {
    for (int c = 0; c < cfg.corrector_steps; ++c)
      state = corrector_step_langevin(sched_run, state, score, cfg.snr, rng);
    state = reverse_step_euler(sched_run, state, times[i + 1] - times[i], score, rng);
    state.t = times[i + 1];  // pin to the grid against accumulated rounding
  }
  for (int c = 0; c < cfg.corrector_steps; ++c)
    state = corrector_step_langevin(sched_run, state, score, cfg.snr, rng);
  return state.x;
}

}  // namespace phaseforge
