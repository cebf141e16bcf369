#include "addose/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace addose {

namespace {

void check_t(const NoiseSchedule& s, std::int64_t t) {
  if (t < 0 || t >= s.steps)
    throw std::out_of_range("diffusion step t out of range: " + std::to_string(t));
}

}  // namespace

NoiseSchedule make_schedule(std::int64_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("schedule needs at least 1 step");
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
    throw std::invalid_argument("require 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.steps = steps;
  s.beta.resize(static_cast<std::size_t>(steps));
  s.alpha.resize(s.beta.size());
  s.alpha_bar.resize(s.beta.size());
  s.posterior_var.resize(s.beta.size());
  double abar = 1.0;
  for (std::int64_t t = 0; t < steps; ++t) {
    const double b =
        steps == 1 ? beta_start
                   : beta_start + (beta_end - beta_start) *
                                      static_cast<double>(t) /
                                      static_cast<double>(steps - 1);
    const double abar_prev = abar;
    s.beta[t] = b;
    s.alpha[t] = 1.0 - b;
    abar *= s.alpha[t];
    s.alpha_bar[t] = abar;
    s.posterior_var[t] =
        t == 0 ? 0.0 : (1.0 - abar_prev) / (1.0 - abar) * b;
  }
  return s;
}

Tensor q_sample(const Tensor& x0, const NoiseSchedule& s, std::int64_t t,
                const Tensor& eps) {
  check_t(s, t);
  const double a = std::sqrt(s.alpha_bar[t]);
  const double b = std::sqrt(1.0 - s.alpha_bar[t]);
  return ops::add(ops::scale(x0, a), ops::scale(eps, b));
}

Tensor q_step(const Tensor& x_prev, const NoiseSchedule& s, std::int64_t t,
              const Tensor& eps) {
  check_t(s, t);
  return ops::add(ops::scale(x_prev, std::sqrt(1.0 - s.beta[t])),
                  ops::scale(eps, std::sqrt(s.beta[t])));
}

Tensor predict_x0(const Tensor& xt, const Tensor& eps_hat, const NoiseSchedule& s,
                  std::int64_t t) {
  check_t(s, t);
  const double abar = s.alpha_bar[t];
  return ops::scale(
      ops::sub(xt, ops::scale(eps_hat, std::sqrt(1.0 - abar))),
      1.0 / std::sqrt(abar));
}

Tensor p_step(const Tensor& xt, const Tensor& eps_hat, const NoiseSchedule& s,
              std::int64_t t, Rng& rng) {
  check_t(s, t);
  const double a = s.alpha[t];
  const double abar = s.alpha_bar[t];
  // mu = (x_t - beta_t/sqrt(1-abar_t) eps_hat) / sqrt(alpha_t)
  Tensor mu = ops::scale(
      ops::sub(xt, ops::scale(eps_hat, s.beta[t] / std::sqrt(1.0 - abar))),
      1.0 / std::sqrt(a));
  if (t == 0) return mu;
  Tensor z = Tensor::randn(xt.shape(), rng);
  return ops::add(mu, ops::scale(z, std::sqrt(s.posterior_var[t])));
}

Tensor sample(const std::vector<std::int64_t>& shape, const NoiseSchedule& s,
              const EpsFn& eps_fn, Rng& rng) {
  Tensor x = Tensor::randn(shape, rng);
  for (std::int64_t t = s.steps - 1; t >= 0; --t) {
    Tensor eps_hat = ops::detach(eps_fn(x, t));
    x = p_step(x, eps_hat, s, t, rng);
  }
  return x;
}

}  // namespace addose
