#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cssgr/data.hpp"
#include "cssgr/decoder.hpp"
#include "cssgr/encoders.hpp"
#include "cssgr/graph.hpp"
#include "cssgr/state_space.hpp"

// Full model: segment encoders -> similarity graph -> L rounds of
// (message passing, pooling, global-state update, fusion) -> transformer
// decoder over the fused node states plus the final global state.

namespace cssgr {

enum class AblationMode { full, no_ssm, no_graph, static_adjacency };

inline std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::full: return "full";
    case AblationMode::no_ssm: return "no_ssm";
    case AblationMode::no_graph: return "no_graph";
    case AblationMode::static_adjacency: return "static_adjacency";
  }
  fail("config", "unknown ablation mode");
}

inline AblationMode ablation_from_string(const std::string& s) {
  if (s == "full") return AblationMode::full;
  if (s == "no_ssm") return AblationMode::no_ssm;
  if (s == "no_graph") return AblationMode::no_graph;
  if (s == "static_adjacency") return AblationMode::static_adjacency;
  fail("config", "unknown ablation mode: '" + s +
                     "' (expected full, no_ssm, no_graph, or static_adjacency)");
}

struct ModelConfig {
  std::size_t d = 32;
  std::size_t layers = 2;
  double tau = 0.5;
  std::size_t vocab_size = 64;
  std::size_t max_len = 16;
  std::size_t d_raw = 4;  // visual feature length (= generator topic count)
  std::size_t decoder_blocks = 2;
  std::size_t decoder_heads = 4;
  std::size_t max_memory_rows = 16;  // >= max(m+n)+1
  AblationMode mode = AblationMode::full;
};

struct NamedParam {
  std::string name;
  std::string group;  // encoders | graph | ssm | decoder
  Tensor tensor;
};

struct ReasoningResult {
  Tensor node_states;  // [(m+n) x d] after the final fusion
  Tensor context;      // [d]: final global state (or aggregate when ablated)
  Tensor readout;      // [d]: final y = C s, exposed but unconsumed
};

class CssgrModel {
 public:
  // Every parameter group is drawn from one seeded stream in a fixed order:
  // text encoder, visual encoder, graph layers, decoder, then the global
  // context parameters (recurrence first, aggregator second). Variants that
  // ignore the trailing groups therefore share every earlier parameter
  // bit for bit with the full model at the same seed.
  CssgrModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) { init_params(rng); }

  CssgrModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    init_params(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  TextEncoderParams& text_encoder() { return text_; }
  VisualEncoderParams& visual_encoder() { return visual_; }
  std::vector<GnnLayerParams>& gnn_layers() { return gnn_; }
  DecoderParams& decoder() { return decoder_; }
  SsmParams& ssm() { return ssm_; }
  AggregatorParams& aggregator() { return agg_; }
  const TextEncoderParams& text_encoder() const { return text_; }
  const VisualEncoderParams& visual_encoder() const { return visual_; }
  const std::vector<GnnLayerParams>& gnn_layers() const { return gnn_; }
  const DecoderParams& decoder() const { return decoder_; }
  const SsmParams& ssm() const { return ssm_; }
  const AggregatorParams& aggregator() const { return agg_; }

  // Graph reasoning over one sample. Connectivity policy by mode:
  //   full, no_ssm       — similarity graph recomputed from the current
  //                        states before every layer (dynamic)
  //   static_adjacency   — similarity graph built once from the encoders
  //   no_graph           — fixed chain over the segment order
  ReasoningResult run_reasoning(const Sample& sample) const {
    NodeSet nodes = build_nodes(sample, text_, visual_);
    Tensor h = nodes.embeddings;
    const std::size_t count = h.rows();

    Adjacency fixed;
    if (cfg_.mode == AblationMode::static_adjacency)
      fixed = build_adjacency(h, cfg_.tau);
    else if (cfg_.mode == AblationMode::no_graph)
      fixed = path_adjacency(count);

    SsmState state = initial_state(cfg_.d);
    Tensor context = Tensor::zeros(Shape{cfg_.d});
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const Adjacency& adj = (cfg_.mode == AblationMode::full ||
                              cfg_.mode == AblationMode::no_ssm)
                                 ? (scratch_ = dynamic_update(h, cfg_.tau))
                                 : fixed;
      h = message_passing_layer(h, adj, gnn_[l]);
      Tensor z = pool(h);
      if (cfg_.mode == AblationMode::no_ssm) {
        context = aggregate_mlp(z, agg_);
      } else {
        state = ssm_step(state, z, ssm_);
        check_state_bounded(state.s);
        context = state.s;
      }
      h = fuse(h, context, ssm_.gamma);
    }
    ReasoningResult result;
    result.node_states = h;
    result.context = context;
    result.readout = state.readout;
    return result;
  }

  // Decoder conditioning set: every fused node state plus the context row.
  Tensor build_memory(const ReasoningResult& reasoning) const {
    return concat({reasoning.node_states, as_row(reasoning.context)}, 0);
  }

  Tensor loss(const Sample& sample) const {
    return decoder_nll(sample.summary, build_memory(run_reasoning(sample)), decoder_);
  }

  std::vector<int> predict(const Sample& sample) const {
    return greedy_decode(build_memory(run_reasoning(sample)), decoder_);
  }

  // Active parameters for the current mode (what the optimizer and the
  // gradient checker see). The full inventory, mode-independent, is
  // all_parameters(); inactive tensors simply receive no gradient.
  std::vector<NamedParam> named_parameters() const {
    std::vector<NamedParam> out = shared_parameters();
    if (cfg_.mode == AblationMode::no_ssm) {
      out.push_back({"ssm.gamma", "ssm", ssm_.gamma});
      out.push_back({"aggregator.w1", "ssm", agg_.w1});
      out.push_back({"aggregator.b1", "ssm", agg_.b1});
      out.push_back({"aggregator.w2", "ssm", agg_.w2});
      out.push_back({"aggregator.b2", "ssm", agg_.b2});
    } else {
      out.push_back({"ssm.a", "ssm", ssm_.a});
      out.push_back({"ssm.b", "ssm", ssm_.b});
      out.push_back({"ssm.c", "ssm", ssm_.c});
      out.push_back({"ssm.gamma", "ssm", ssm_.gamma});
    }
    return out;
  }

  std::vector<NamedParam> all_parameters() const {
    std::vector<NamedParam> out = shared_parameters();
    out.push_back({"ssm.a", "ssm", ssm_.a});
    out.push_back({"ssm.b", "ssm", ssm_.b});
    out.push_back({"ssm.c", "ssm", ssm_.c});
    out.push_back({"ssm.gamma", "ssm", ssm_.gamma});
    out.push_back({"aggregator.w1", "ssm", agg_.w1});
    out.push_back({"aggregator.b1", "ssm", agg_.b1});
    out.push_back({"aggregator.w2", "ssm", agg_.w2});
    out.push_back({"aggregator.b2", "ssm", agg_.b2});
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const NamedParam& p : named_parameters()) out.push_back(p.tensor);
    return out;
  }

 private:
  void init_params(Rng& rng) {
    if (cfg_.d == 0 || cfg_.layers == 0) fail("config", "model: d and layers must be positive");
    if (cfg_.vocab_size <= static_cast<std::size_t>(kFirstContentToken))
      fail("config", "model: vocabulary must extend past the reserved ids");
    text_ = TextEncoderParams::init(cfg_.vocab_size, cfg_.d, cfg_.max_len, rng);
    visual_ = VisualEncoderParams::init(cfg_.d_raw, cfg_.d, rng);
    for (std::size_t l = 0; l < cfg_.layers; ++l)
      gnn_.push_back(GnnLayerParams::init(cfg_.d, rng));
    decoder_ = DecoderParams::init(cfg_.vocab_size, cfg_.d, cfg_.max_len, cfg_.max_memory_rows,
                                   cfg_.decoder_blocks, cfg_.decoder_heads, rng);
    ssm_ = SsmParams::init(cfg_.d, rng);
    agg_ = AggregatorParams::init(cfg_.d, rng);
  }

  std::vector<NamedParam> shared_parameters() const {
    std::vector<NamedParam> out;
    out.push_back({"text.embedding", "encoders", text_.embedding});
    out.push_back({"text.positions", "encoders", text_.positions});
    out.push_back({"text.proj", "encoders", text_.proj});
    out.push_back({"text.bias", "encoders", text_.bias});
    out.push_back({"visual.proj", "encoders", visual_.proj});
    out.push_back({"visual.bias", "encoders", visual_.bias});
    for (std::size_t l = 0; l < gnn_.size(); ++l) {
      const std::string prefix = "graph." + std::to_string(l) + ".";
      out.push_back({prefix + "attn_q", "graph", gnn_[l].attn_q});
      out.push_back({prefix + "attn_k", "graph", gnn_[l].attn_k});
      out.push_back({prefix + "w1", "graph", gnn_[l].w1});
      out.push_back({prefix + "w2", "graph", gnn_[l].w2});
    }
    out.push_back({"decoder.token_embedding", "decoder", decoder_.token_embedding});
    out.push_back({"decoder.prefix_positions", "decoder", decoder_.prefix_positions});
    out.push_back({"decoder.memory_positions", "decoder", decoder_.memory_positions});
    out.push_back({"decoder.memory_gain", "decoder", decoder_.memory_gain});
    out.push_back({"decoder.memory_bias", "decoder", decoder_.memory_bias});
    for (std::size_t b = 0; b < decoder_.blocks.size(); ++b) {
      const std::string prefix = "decoder.block" + std::to_string(b) + ".";
      const DecoderBlockParams& blk = decoder_.blocks[b];
      out.push_back({prefix + "ln1_gain", "decoder", blk.ln1_gain});
      out.push_back({prefix + "ln1_bias", "decoder", blk.ln1_bias});
      out.push_back({prefix + "self_wq", "decoder", blk.self_wq});
      out.push_back({prefix + "self_wk", "decoder", blk.self_wk});
      out.push_back({prefix + "self_wv", "decoder", blk.self_wv});
      out.push_back({prefix + "self_wo", "decoder", blk.self_wo});
      out.push_back({prefix + "ln2_gain", "decoder", blk.ln2_gain});
      out.push_back({prefix + "ln2_bias", "decoder", blk.ln2_bias});
      out.push_back({prefix + "cross_wq", "decoder", blk.cross_wq});
      out.push_back({prefix + "cross_wk", "decoder", blk.cross_wk});
      out.push_back({prefix + "cross_wv", "decoder", blk.cross_wv});
      out.push_back({prefix + "cross_wo", "decoder", blk.cross_wo});
      out.push_back({prefix + "ln3_gain", "decoder", blk.ln3_gain});
      out.push_back({prefix + "ln3_bias", "decoder", blk.ln3_bias});
      out.push_back({prefix + "ff_w1", "decoder", blk.ff_w1});
      out.push_back({prefix + "ff_b1", "decoder", blk.ff_b1});
      out.push_back({prefix + "ff_w2", "decoder", blk.ff_w2});
      out.push_back({prefix + "ff_b2", "decoder", blk.ff_b2});
    }
    out.push_back({"decoder.final_gain", "decoder", decoder_.final_gain});
    out.push_back({"decoder.final_bias", "decoder", decoder_.final_bias});
    out.push_back({"decoder.out_proj", "decoder", decoder_.out_proj});
    return out;
  }

  static void check_state_bounded(const Tensor& s) {
    double norm = 0.0;
    for (std::size_t i = 0; i < s.numel(); ++i) norm += s.at(i) * s.at(i);
    if (!(std::sqrt(norm) <= 1e6))
      fail("numeric", "global state diverged: ||s|| exceeded 1e6 during reasoning");
  }

  ModelConfig cfg_;
  TextEncoderParams text_;
  VisualEncoderParams visual_;
  std::vector<GnnLayerParams> gnn_;
  DecoderParams decoder_;
  SsmParams ssm_;
  AggregatorParams agg_;
  mutable Adjacency scratch_;  // holds the per-layer dynamic adjacency
};

}  // namespace cssgr
