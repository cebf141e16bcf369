#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "addose/tensor.hpp"

namespace addose::testing {

// Central finite-difference check of a scalar-valued graph. `loss_fn` must
// rebuild the graph from the leaf's current values on every call. Returns
// the worst relative error over all leaf elements (with an absolute floor
// so near-zero gradients do not blow up the ratio).
inline double fd_max_rel_err(Tensor leaf,
                             const std::function<Tensor()>& loss_fn,
                             double eps = 1e-5, double abs_floor = 1e-7) {
  leaf.set_requires_grad(true);
  Tensor loss = loss_fn();
  leaf.zero_grad();
  loss.backward();
  std::vector<double> analytic = leaf.grad();

  double worst = 0.0;
  for (std::size_t i = 0; i < leaf.data().size(); ++i) {
    const double keep = leaf.data()[i];
    leaf.data()[i] = keep + eps;
    const double up = loss_fn().item();
    leaf.data()[i] = keep - eps;
    const double dn = loss_fn().item();
    leaf.data()[i] = keep;
    const double numeric = (up - dn) / (2.0 * eps);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]),
                                   abs_floor});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace addose::testing
