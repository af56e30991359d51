#pragma once

#include <cmath>
#include <vector>

#include "cssgr/ops.hpp"
#include "cssgr/rng.hpp"
#include "cssgr/tensor.hpp"

// Global-context state-space machinery: mean pooling of node states, the
// linear recurrence s' = A s + B z with readout y = C s', and the broadcast
// fusion of the global state back into every node.

namespace cssgr {

// Largest singular value, estimated by power iteration on M^T M.
inline double spectral_norm_estimate(const Tensor& m, int iterations = 50) {
  if (m.rank() != 2) fail("shape", "spectral_norm_estimate expects a matrix");
  const std::size_t r = m.dim(0), c = m.dim(1);
  std::vector<double> v(c, 1.0 / std::sqrt(static_cast<double>(c)));
  std::vector<double> mv(r), mtmv(c);
  double sigma = 0.0;
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += m.at(i, j) * v[j];
      mv[i] = s;
    }
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < r; ++i) s += m.at(i, j) * mv[i];
      mtmv[j] = s;
    }
    double norm = 0.0;
    for (double x : mtmv) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-300) return 0.0;
    for (std::size_t j = 0; j < c; ++j) v[j] = mtmv[j] / norm;
    double num = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += m.at(i, j) * v[j];
      num += s * s;
    }
    sigma = std::sqrt(num);
  }
  return sigma;
}

struct SsmParams {
  Tensor a;      // state transition [d x d], applied as a matrix-vector product
  Tensor b;      // input map [d x d]
  Tensor c;      // readout map [d x d]
  Tensor gamma;  // scalar fusion weight, starts at 0 (pure-GNN start)

  // The transition matrix is rescaled to spectral norm 0.9 so that the
  // recurrence is a contraction at initialization.
  static SsmParams init(std::size_t d, Rng& rng) {
    SsmParams p;
    p.a = make_xavier_param(Shape{d, d}, rng);
    const double sigma = spectral_norm_estimate(p.a);
    if (sigma > 1e-12) {
      const double factor = 0.9 / sigma;
      for (double& v : p.a.data()) v *= factor;
    }
    p.b = make_xavier_param(Shape{d, d}, rng);
    p.c = make_xavier_param(Shape{d, d}, rng);
    p.gamma = make_scalar_param(0.0);
    return p;
  }

  std::vector<Tensor> parameters() const { return {a, b, c, gamma}; }
};

struct SsmState {
  Tensor s;         // global hidden state, length d
  Tensor readout;   // y = c * s, exposed but not consumed downstream
  int step_index = 0;
};

inline SsmState initial_state(std::size_t d) {
  SsmState st;
  st.s = Tensor::zeros(Shape{d});
  st.readout = Tensor::zeros(Shape{d});
  st.step_index = 0;
  return st;
}

// Column-wise mean over node states.
inline Tensor pool(const Tensor& h) {
  if (h.rank() != 2 || h.rows() == 0) fail("contract", "pool: need at least one node row");
  return mean(h, 0);
}

// s' = A s + B z, y = C s' (readout taken after the update).
inline SsmState ssm_step(const SsmState& state, const Tensor& z, const SsmParams& params) {
  SsmState next;
  next.s = add(matvec(params.a, state.s), matvec(params.b, z));
  next.readout = matvec(params.c, next.s);
  next.step_index = state.step_index + 1;
  return next;
}

// h~_i = h_i + gamma * s for every node.
inline Tensor fuse(const Tensor& h, const Tensor& s, const Tensor& gamma) {
  return add_row_broadcast(h, scale_by(s, gamma));
}

// Replacement aggregator used when the recurrence is ablated: a two-layer
// perceptron (d -> d -> d, relu in the middle) applied to the pooled vector,
// fused exactly like the global state.
struct AggregatorParams {
  Tensor w1;  // [d x d]
  Tensor b1;  // [d]
  Tensor w2;  // [d x d]
  Tensor b2;  // [d]

  static AggregatorParams init(std::size_t d, Rng& rng) {
    AggregatorParams p;
    p.w1 = make_xavier_param(Shape{d, d}, rng);
    p.b1 = make_param(Shape{d});
    p.w2 = make_xavier_param(Shape{d, d}, rng);
    p.b2 = make_param(Shape{d});
    return p;
  }

  std::vector<Tensor> parameters() const { return {w1, b1, w2, b2}; }
};

inline Tensor aggregate_mlp(const Tensor& z, const AggregatorParams& params) {
  Tensor hidden = relu(add(matvec(params.w1, z), params.b1));
  return add(matvec(params.w2, hidden), params.b2);
}

}  // namespace cssgr
