#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cssgr/model.hpp"
#include "cssgr/tensor.hpp"

// Adam with bias correction and a stepped learning-rate schedule
// (multiply by a fixed factor every fixed number of epochs).

namespace cssgr {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // One update over the current .grad buffers. Gradients are consumed as-is;
  // zeroing between steps is the caller's job.
  void step(const std::vector<NamedParam>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const NamedParam& p : params) {
      Moments& mom = moments_[p.name];
      const std::size_t n = p.tensor.numel();
      if (mom.m.size() != n) {
        mom.m.assign(n, 0.0);
        mom.v.assign(n, 0.0);
      }
      const std::vector<double>& g = p.tensor.grad();
      for (std::size_t i = 0; i < n; ++i) {
        mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g[i];
        mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = mom.m[i] / bc1;
        const double vhat = mom.v[i] / bc2;
        const_cast<Tensor&>(p.tensor).at(i) -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      }
    }
  }

  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };

  std::uint64_t step_count() const { return t_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void restore(std::uint64_t step_count, std::map<std::string, Moments> moments) {
    t_ = step_count;
    moments_ = std::move(moments);
  }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

// lr for a 1-based epoch index under the stepped decay schedule:
// lr0 * factor^floor((epoch - 1) / every).
inline double lr_for_epoch(double lr0, double factor, std::size_t every, std::size_t epoch) {
  if (epoch < 1) fail("contract", "lr_for_epoch: epochs are 1-based");
  if (every == 0) fail("config", "lr schedule: decay interval must be positive");
  return lr0 * std::pow(factor, static_cast<double>((epoch - 1) / every));
}

}  // namespace cssgr
