#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cssgr/rng.hpp"
#include "cssgr/tensor.hpp"

// Shared helpers for the unit suite: a central-difference gradient oracle and
// small numeric comparison utilities.

namespace test_support {

inline bool close(double a, double b, double tol = 1e-12) { return std::fabs(a - b) <= tol; }

// Relative error with a floor so that near-zero gradients compare in absolute
// terms instead of blowing up the ratio.
inline double rel_err(double ad, double fd, double floor_ = 1e-3) {
  const double denom = std::max({std::fabs(ad), std::fabs(fd), floor_});
  return std::fabs(ad - fd) / denom;
}

// Checks the tape gradient of `loss_fn` against central finite differences
// for every entry of every tensor in `params`. `loss_fn` must rebuild the
// computation from the current parameter values on each call (it is invoked
// 2 * numel + 1 times). Returns the worst relative error observed.
inline double gradcheck(const std::function<cssgr::Tensor()>& loss_fn,
                        const std::vector<cssgr::Tensor>& params, double step = 1e-5) {
  using namespace cssgr;
  for (const Tensor& p : params) p.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    backward(loss);
  }
  double worst = 0.0;
  for (const Tensor& p : params) {
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double saved = p.at(i);
      const_cast<Tensor&>(p).at(i) = saved + step;
      const double up = loss_fn().value();
      const_cast<Tensor&>(p).at(i) = saved - step;
      const double down = loss_fn().value();
      const_cast<Tensor&>(p).at(i) = saved;
      const double fd = (up - down) / (2.0 * step);
      worst = std::max(worst, rel_err(p.grad_at(i), fd));
    }
  }
  return worst;
}

inline cssgr::Tensor random_tensor(cssgr::Shape shape, cssgr::Rng& rng, double lo = -1.0,
                                   double hi = 1.0, bool requires_grad = true) {
  cssgr::Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t.at(i) = rng.uniform(lo, hi);
  t.set_requires_grad(requires_grad);
  return t;
}

}  // namespace test_support
