#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "addose/rng.hpp"
#include "addose/tensor.hpp"

namespace addose {

// Precomputed variance schedule. betas are linear in t; alpha_bar is the
// running product of (1 - beta).
struct NoiseSchedule {
  std::int64_t steps = 1000;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> posterior_var;  // beta~_t = (1-abar_{t-1})/(1-abar_t) * beta_t
};

NoiseSchedule make_schedule(std::int64_t steps, double beta_start = 1e-4,
                            double beta_end = 0.02);

// Closed-form forward marginal: sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
Tensor q_sample(const Tensor& x0, const NoiseSchedule& s, std::int64_t t,
                const Tensor& eps);

// Single forward step t-1 -> t: sqrt(1-beta_t) x + sqrt(beta_t) eps.
Tensor q_step(const Tensor& x_prev, const NoiseSchedule& s, std::int64_t t,
              const Tensor& eps);

// Predicted x0 implied by the noise estimate at step t.
Tensor predict_x0(const Tensor& xt, const Tensor& eps_hat, const NoiseSchedule& s,
                  std::int64_t t);

// Reverse (ancestral) step t -> t-1 given the predicted noise; adds
// sqrt(posterior_var) z for t > 0, nothing at t = 0.
Tensor p_step(const Tensor& xt, const Tensor& eps_hat, const NoiseSchedule& s,
              std::int64_t t, Rng& rng);

// Full reverse chain from pure noise; eps_fn(x_t, t) is the denoiser.
using EpsFn = std::function<Tensor(const Tensor&, std::int64_t)>;
Tensor sample(const std::vector<std::int64_t>& shape, const NoiseSchedule& s,
              const EpsFn& eps_fn, Rng& rng);

}  // namespace addose
