#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cssgr/ops.hpp"
#include "cssgr/rng.hpp"
#include "cssgr/tensor.hpp"

// Cross-modal graph reasoning: threshold adjacency over node similarities and
// attention-weighted message passing. The adjacency is structural (binary, no
// gradient); node states and attention weights are differentiable.

namespace cssgr {

// Flat row-major N x N binary adjacency.
using Adjacency = std::vector<std::uint8_t>;

// A_ij = 1 iff cosine(row_i, row_j) >= tau and i != j. Ties at tau include
// the edge. The diagonal stays zero: the update rule already carries a
// dedicated self term, so self-loops would double-count.
inline Adjacency build_adjacency(const Tensor& nodes, double tau) {
  if (nodes.rank() != 2) fail("shape", "build_adjacency expects a node matrix");
  if (tau < -1.0 || tau > 1.0)
    fail("config", "build_adjacency: tau must lie in [-1, 1], got " + std::to_string(tau));
  const std::size_t n = nodes.rows(), d = nodes.cols();
  Adjacency adj(n * n, 0);
  const double* base = nodes.data().data();
  NumericWatch* watch = NumericWatch::active();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double sim = cosine_raw(base + i * d, base + j * d, d);
      if (watch)
        watch->min_threshold_margin =
            std::min(watch->min_threshold_margin, std::fabs(sim - tau));
      if (sim >= tau) {
        adj[i * n + j] = 1;
        adj[j * n + i] = 1;
      }
    }
  return adj;
}

// Recomputes the threshold adjacency on current node states; used between
// layers when dynamic connectivity is enabled.
inline Adjacency dynamic_update(const Tensor& node_states, double tau) {
  return build_adjacency(node_states, tau);
}

// Chain adjacency in node order (text rows first, then visual rows):
// consecutive nodes linked, nothing else. Realizes the "ordered sequence
// instead of a graph" ablation.
inline Adjacency path_adjacency(std::size_t n) {
  Adjacency adj(n * n, 0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    adj[i * n + (i + 1)] = 1;
    adj[(i + 1) * n + i] = 1;
  }
  return adj;
}

struct GnnLayerParams {
  Tensor w1;       // neighbor message map [d x d], applied as h_j * w1
  Tensor w2;       // self map [d x d], applied as h_i * w2
  Tensor attn_q;   // query map [d x d]
  Tensor attn_k;   // key map [d x d]

  static GnnLayerParams init(std::size_t d, Rng& rng) {
    GnnLayerParams p;
    p.attn_q = make_xavier_param(Shape{d, d}, rng);
    p.attn_k = make_xavier_param(Shape{d, d}, rng);
    p.w1 = make_xavier_param(Shape{d, d}, rng);
    p.w2 = make_xavier_param(Shape{d, d}, rng);
    return p;
  }

  std::vector<Tensor> parameters() const { return {attn_q, attn_k, w1, w2}; }
};

// Scaled dot-product attention restricted to graph neighborhoods:
// alpha_ij = softmax_{j in N(i)} of (q_i . k_j) / sqrt(d). Rows with an empty
// neighborhood come out all-zero.
inline Tensor attention_coefficients(const Tensor& h, const Adjacency& adj,
                                     const GnnLayerParams& params) {
  const std::size_t n = h.rows(), d = h.cols();
  if (adj.size() != n * n) fail("shape", "attention_coefficients: adjacency size mismatch");
  Tensor q = matmul(h, params.attn_q);
  Tensor k = matmul(h, params.attn_k);
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
  return masked_softmax(scores, adj);
}

// One update: h_i' = relu(sum_{j in N(i)} alpha_ij (h_j w1) + h_i w2).
// Isolated nodes reduce to relu(h_i w2).
inline Tensor message_passing_layer(const Tensor& h, const Adjacency& adj,
                                    const GnnLayerParams& params) {
  Tensor alpha = attention_coefficients(h, adj, params);
  Tensor messages = matmul(alpha, matmul(h, params.w1));
  Tensor self = matmul(h, params.w2);
  return relu(add(messages, self));
}

}  // namespace cssgr
