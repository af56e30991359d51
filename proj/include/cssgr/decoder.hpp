#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cssgr/encoders.hpp"
#include "cssgr/ops.hpp"
#include "cssgr/rng.hpp"
#include "cssgr/tensor.hpp"

// Autoregressive summary decoder: a small pre-norm transformer (two blocks,
// four heads, feed-forward width 4d) that attends causally over the generated
// prefix and cross-attends over a memory of fused node states plus the final
// global state. Trained with teacher-forced cross-entropy; decodes greedily.

namespace cssgr {

struct DecoderBlockParams {
  Tensor ln1_gain, ln1_bias;
  Tensor self_wq, self_wk, self_wv, self_wo;  // [d x d]
  Tensor ln2_gain, ln2_bias;
  Tensor cross_wq, cross_wk, cross_wv, cross_wo;  // [d x d]
  Tensor ln3_gain, ln3_bias;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;  // d -> 4d -> d
};

struct DecoderParams {
  Tensor token_embedding;   // [vocab x d]
  Tensor prefix_positions;  // [max_len x d], added to prefix embeddings
  Tensor memory_positions;  // [max_memory_rows x d], added to memory rows
  Tensor memory_gain, memory_bias;  // normalization of memory rows before cross-attention
  std::vector<DecoderBlockParams> blocks;
  Tensor final_gain, final_bias;
  Tensor out_proj;  // [d x vocab]
  std::size_t heads = 4;
  std::size_t max_len = 16;

  static DecoderParams init(std::size_t vocab, std::size_t d, std::size_t max_len,
                            std::size_t max_memory_rows, std::size_t num_blocks,
                            std::size_t heads, Rng& rng) {
    if (heads == 0 || d % heads != 0)
      fail("config", "decoder: model width " + std::to_string(d) +
                         " must be divisible by head count " + std::to_string(heads));
    DecoderParams p;
    p.heads = heads;
    p.max_len = max_len;
    p.token_embedding = make_uniform_param(Shape{vocab, d}, rng, 0.05);
    p.prefix_positions = make_uniform_param(Shape{max_len, d}, rng, 0.05);
    p.memory_positions = make_uniform_param(Shape{max_memory_rows, d}, rng, 0.05);
    p.memory_gain = make_param(Shape{d});
    p.memory_bias = make_param(Shape{d});
    for (double& v : p.memory_gain.data()) v = 1.0;
    for (std::size_t b = 0; b < num_blocks; ++b) {
      DecoderBlockParams blk;
      blk.ln1_gain = make_param(Shape{d});
      blk.ln1_bias = make_param(Shape{d});
      for (double& v : blk.ln1_gain.data()) v = 1.0;
      blk.self_wq = make_xavier_param(Shape{d, d}, rng);
      blk.self_wk = make_xavier_param(Shape{d, d}, rng);
      blk.self_wv = make_xavier_param(Shape{d, d}, rng);
      blk.self_wo = make_xavier_param(Shape{d, d}, rng);
      blk.ln2_gain = make_param(Shape{d});
      blk.ln2_bias = make_param(Shape{d});
      for (double& v : blk.ln2_gain.data()) v = 1.0;
      blk.cross_wq = make_xavier_param(Shape{d, d}, rng);
      blk.cross_wk = make_xavier_param(Shape{d, d}, rng);
      blk.cross_wv = make_xavier_param(Shape{d, d}, rng);
      blk.cross_wo = make_xavier_param(Shape{d, d}, rng);
      blk.ln3_gain = make_param(Shape{d});
      blk.ln3_bias = make_param(Shape{d});
      for (double& v : blk.ln3_gain.data()) v = 1.0;
      blk.ff_w1 = make_xavier_param(Shape{d, 4 * d}, rng);
      blk.ff_b1 = make_param(Shape{4 * d});
      blk.ff_w2 = make_xavier_param(Shape{4 * d, d}, rng);
      blk.ff_b2 = make_param(Shape{d});
      p.blocks.push_back(std::move(blk));
    }
    p.final_gain = make_param(Shape{d});
    p.final_bias = make_param(Shape{d});
    for (double& v : p.final_gain.data()) v = 1.0;
    p.out_proj = make_xavier_param(Shape{d, vocab}, rng);
    return p;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out{token_embedding, prefix_positions, memory_positions, memory_gain,
                            memory_bias};
    for (const auto& b : blocks) {
      for (const Tensor& t :
           {b.ln1_gain, b.ln1_bias, b.self_wq, b.self_wk, b.self_wv, b.self_wo, b.ln2_gain,
            b.ln2_bias, b.cross_wq, b.cross_wk, b.cross_wv, b.cross_wo, b.ln3_gain, b.ln3_bias,
            b.ff_w1, b.ff_b1, b.ff_w2, b.ff_b2})
        out.push_back(t);
    }
    out.push_back(final_gain);
    out.push_back(final_bias);
    out.push_back(out_proj);
    return out;
  }
};

namespace detail {

// Standard multi-head scaled dot-product attention. `mask` is row-major
// [rows(q) x rows(kv)]; masked-out scores never participate in the softmax.
inline Tensor multihead_attention(const Tensor& q_in, const Tensor& kv_in,
                                  const std::vector<std::uint8_t>& mask, const Tensor& wq,
                                  const Tensor& wk, const Tensor& wv, const Tensor& wo,
                                  std::size_t heads) {
  const std::size_t d = q_in.cols();
  const std::size_t dh = d / heads;
  Tensor q = matmul(q_in, wq);
  Tensor k = matmul(kv_in, wk);
  Tensor v = matmul(kv_in, wv);
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor alpha = masked_softmax(scores, mask);
    head_outputs.push_back(matmul(alpha, vh));
  }
  return matmul(concat(head_outputs, 1), wo);
}

inline std::vector<std::uint8_t> causal_mask(std::size_t k) {
  std::vector<std::uint8_t> mask(k * k, 0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j <= i; ++j) mask[i * k + j] = 1;
  return mask;
}

}  // namespace detail

// Teacher-forcing workhorse: logits for every prefix position at once.
// Position k of the output scores the token that follows prefix[0..k].
inline Tensor decoder_logits(const std::vector<int>& prefix, const Tensor& memory,
                             const DecoderParams& params) {
  if (prefix.empty() || prefix[0] != kBos)
    fail("contract", "decoder: prefix must start with the BOS token");
  if (prefix.size() > params.max_len)
    fail("contract", "decoder: prefix length " + std::to_string(prefix.size()) +
                         " exceeds max_len " + std::to_string(params.max_len));
  if (memory.rank() != 2 || memory.cols() != params.token_embedding.cols())
    fail("shape", "decoder: memory width must match model width");
  if (memory.rows() > params.memory_positions.dim(0))
    fail("contract", "decoder: memory has more rows than the memory position table");
  const std::size_t k = prefix.size();
  const std::size_t m = memory.rows();

  std::vector<int> pos_ids(k);
  for (std::size_t i = 0; i < k; ++i) pos_ids[i] = static_cast<int>(i);
  Tensor x = add(gather_rows(params.token_embedding, prefix),
                 gather_rows(params.prefix_positions, pos_ids));

  std::vector<int> mem_ids(m);
  for (std::size_t i = 0; i < m; ++i) mem_ids[i] = static_cast<int>(i);
  // Normalizing the conditioning rows puts both modalities (and the global
  // state row) on one scale before any key/value projection sees them.
  Tensor mem = layer_norm(add(memory, gather_rows(params.memory_positions, mem_ids)),
                          params.memory_gain, params.memory_bias);

  const std::vector<std::uint8_t> self_mask = detail::causal_mask(k);
  const std::vector<std::uint8_t> cross_mask(k * m, 1);

  for (const DecoderBlockParams& blk : params.blocks) {
    Tensor normed = layer_norm(x, blk.ln1_gain, blk.ln1_bias);
    x = add(x, detail::multihead_attention(normed, normed, self_mask, blk.self_wq, blk.self_wk,
                                           blk.self_wv, blk.self_wo, params.heads));
    Tensor normed2 = layer_norm(x, blk.ln2_gain, blk.ln2_bias);
    x = add(x, detail::multihead_attention(normed2, mem, cross_mask, blk.cross_wq, blk.cross_wk,
                                           blk.cross_wv, blk.cross_wo, params.heads));
    Tensor normed3 = layer_norm(x, blk.ln3_gain, blk.ln3_bias);
    Tensor hidden = relu(add_row_broadcast(matmul(normed3, blk.ff_w1), blk.ff_b1));
    x = add(x, add_row_broadcast(matmul(hidden, blk.ff_w2), blk.ff_b2));
  }
  x = layer_norm(x, params.final_gain, params.final_bias);
  return matmul(x, params.out_proj);
}

// Distribution over the next token given the prefix so far.
inline Tensor decode_step(const std::vector<int>& prefix, const Tensor& memory,
                          const DecoderParams& params) {
  Tensor logits = decoder_logits(prefix, memory, params);
  Tensor last = slice_rows(logits, logits.rows() - 1, 1);
  return reshape(softmax(last, 1), Shape{last.cols()});
}

// Mean cross-entropy over non-PAD target positions; the target stream is the
// reference summary followed by EOS.
inline Tensor decoder_nll(const std::vector<int>& summary, const Tensor& memory,
                          const DecoderParams& params) {
  if (summary.empty()) fail("contract", "decoder_nll: empty reference summary");
  std::vector<int> prefix{kBos};
  prefix.insert(prefix.end(), summary.begin(), summary.end());
  std::vector<int> targets(summary.begin(), summary.end());
  targets.push_back(kEos);
  std::vector<std::uint8_t> mask(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) mask[i] = targets[i] != kPad ? 1 : 0;
  Tensor logits = decoder_logits(prefix, memory, params);
  return nll_rows(logits, targets, mask);
}

// Greedy decoding from BOS: argmax each step (ties to the lowest token id),
// stop on EOS or when the prefix fills max_len. BOS/EOS are stripped from the
// returned sequence.
inline std::vector<int> greedy_decode(const Tensor& memory, const DecoderParams& params) {
  std::vector<int> prefix{kBos};
  std::vector<int> output;
  while (prefix.size() < params.max_len) {
    Tensor dist = decode_step(prefix, memory, params);
    std::size_t best = 0;
    for (std::size_t j = 1; j < dist.numel(); ++j)
      if (dist.at(j) > dist.at(best)) best = j;  // strict: ties keep the lowest id
    const int token = static_cast<int>(best);
    if (token == kEos) break;
    output.push_back(token);
    prefix.push_back(token);
  }
  return output;
}

}  // namespace cssgr
