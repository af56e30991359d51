#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cssgr/ops.hpp"
#include "cssgr/rng.hpp"
#include "cssgr/tensor.hpp"

// Segment encoders: small trainable encoders that map token-id sequences and
// raw feature vectors into a shared d-dimensional node space, plus the node
// assembly step that stacks them into one matrix (text rows first).

namespace cssgr {

// Reserved token ids shared across the whole pipeline.
inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kPad = 2;
inline constexpr int kFirstContentToken = 3;

struct Sample {
  std::string sample_id;
  std::vector<std::vector<int>> text_segments;      // m segments of token ids
  std::vector<std::vector<double>> visual_segments;  // n segments, each length d_raw
  std::vector<int> summary;                          // reference token ids
};

struct TextEncoderParams {
  Tensor embedding;  // [vocab x d]
  Tensor positions;  // [max_positions x d] multiplicative gates, ~1 at init;
                     // consumed only when use_positions (additive offsets
                     // would cancel under mean pooling)
  Tensor proj;       // [d x d]
  Tensor bias;       // [d]
  bool use_positions = false;

  static TextEncoderParams init(std::size_t vocab, std::size_t d, std::size_t max_positions,
                                Rng& rng) {
    TextEncoderParams p;
    p.embedding = make_uniform_param(Shape{vocab, d}, rng, 0.05);
    p.positions = make_uniform_param(Shape{max_positions, d}, rng, 0.05);
    for (double& v : p.positions.data()) v += 1.0;
    p.proj = make_xavier_param(Shape{d, d}, rng);
    p.bias = make_param(Shape{d});
    return p;
  }

  std::vector<Tensor> parameters() const { return {embedding, positions, proj, bias}; }
};

struct VisualEncoderParams {
  Tensor proj;  // [d_raw x d]
  Tensor bias;  // [d]

  static VisualEncoderParams init(std::size_t d_raw, std::size_t d, Rng& rng) {
    VisualEncoderParams p;
    p.proj = make_xavier_param(Shape{d_raw, d}, rng);
    p.bias = make_param(Shape{d});
    return p;
  }

  std::vector<Tensor> parameters() const { return {proj, bias}; }
};

// Bag-of-tokens encoder: mean of token embeddings (optionally offset by
// position embeddings), then one linear layer with relu.
inline Tensor encode_text(const std::vector<int>& segment, const TextEncoderParams& params) {
  if (segment.empty()) fail("contract", "encode_text: empty segment");
  const std::size_t vocab = params.embedding.dim(0);
  for (int id : segment)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      fail("contract", "encode_text: token id " + std::to_string(id) +
                           " outside vocabulary of size " + std::to_string(vocab));
  Tensor rows = gather_rows(params.embedding, segment);
  if (params.use_positions) {
    if (segment.size() > params.positions.dim(0))
      fail("contract", "encode_text: segment longer than position table");
    std::vector<int> pos_ids(segment.size());
    for (std::size_t i = 0; i < segment.size(); ++i) pos_ids[i] = static_cast<int>(i);
    rows = mul(rows, gather_rows(params.positions, pos_ids));
  }
  Tensor pooled = mean(rows, 0);
  return relu(add(vecmat(pooled, params.proj), params.bias));
}

// One linear layer with relu over the raw feature vector.
inline Tensor encode_visual(const std::vector<double>& segment,
                            const VisualEncoderParams& params) {
  if (segment.size() != params.proj.dim(0))
    fail("shape", "encode_visual: expected length " + std::to_string(params.proj.dim(0)) +
                      ", got " + std::to_string(segment.size()));
  Tensor x = Tensor::from(Shape{segment.size()}, segment);
  return relu(add(vecmat(x, params.proj), params.bias));
}

struct NodeSet {
  Tensor embeddings;                       // [(m+n) x d], text rows first
  std::vector<std::uint8_t> modality_tags;  // 0 = textual, 1 = visual
  std::size_t num_text = 0;
  std::size_t num_visual = 0;
};

inline NodeSet build_nodes(const Sample& sample, const TextEncoderParams& text_params,
                           const VisualEncoderParams& visual_params) {
  if (sample.text_segments.empty() || sample.visual_segments.empty())
    fail("contract", "build_nodes: need at least one segment of each modality");
  std::vector<Tensor> rows;
  rows.reserve(sample.text_segments.size() + sample.visual_segments.size());
  NodeSet nodes;
  for (const auto& seg : sample.text_segments) {
    rows.push_back(encode_text(seg, text_params));
    nodes.modality_tags.push_back(0);
  }
  for (const auto& seg : sample.visual_segments) {
    rows.push_back(encode_visual(seg, visual_params));
    nodes.modality_tags.push_back(1);
  }
  nodes.embeddings = stack_rows(rows);
  nodes.num_text = sample.text_segments.size();
  nodes.num_visual = sample.visual_segments.size();
  return nodes;
}

}  // namespace cssgr
