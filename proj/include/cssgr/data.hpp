#pragma once

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cssgr/encoders.hpp"
#include "cssgr/error.hpp"
#include "cssgr/rng.hpp"

// Synthetic cross-modal summarization task and its JSONL serialization.
//
// Task construction: token ids 3..vocab-1 are partitioned into equal
// contiguous per-topic ranges. Each text segment draws tokens from a single
// topic's range; each visual segment is a noisy one-hot topic indicator
// (noise never flips the argmax). The reference summary concatenates, in
// original order, the tokens of the text segments whose topic equals the
// majority topic over the visual segments (ties broken toward the lowest
// topic id). Solving the task therefore requires combining both modalities:
// the text stream carries the content, the visual stream selects it.

namespace cssgr {

struct GeneratorConfig {
  std::size_t num_train = 2000;
  std::size_t num_eval = 200;
  std::size_t vocab_size = 64;
  std::size_t topics = 4;
  std::size_t min_text_segments = 3;
  std::size_t max_text_segments = 5;
  std::size_t min_visual_segments = 3;
  std::size_t max_visual_segments = 5;
  std::size_t min_segment_tokens = 1;
  std::size_t max_segment_tokens = 2;
  double visual_noise = 0.3;  // additive uniform noise, must stay below 0.5
  std::size_t max_len = 16;   // decoder budget the summaries must fit into
};

namespace detail {

inline void validate_generator_config(const GeneratorConfig& cfg) {
  if (cfg.vocab_size < 16)
    fail("config", "generator: vocab_size must be at least 16, got " +
                       std::to_string(cfg.vocab_size));
  if (cfg.topics < 1) fail("config", "generator: topics must be at least 1");
  if (cfg.vocab_size - kFirstContentToken < cfg.topics)
    fail("config", "generator: not enough content tokens for " + std::to_string(cfg.topics) +
                       " topics");
  if (cfg.min_text_segments < 1 || cfg.min_visual_segments < 1)
    fail("config", "generator: need at least one segment per modality");
  if (cfg.max_text_segments < cfg.min_text_segments ||
      cfg.max_visual_segments < cfg.min_visual_segments ||
      cfg.max_segment_tokens < cfg.min_segment_tokens)
    fail("config", "generator: segment ranges must satisfy min <= max");
  if (cfg.min_segment_tokens < 1) fail("config", "generator: segments need at least one token");
  if (cfg.visual_noise < 0.0 || cfg.visual_noise >= 0.5)
    fail("config", "generator: visual_noise must lie in [0, 0.5) to keep the topic readable");
  // Worst case: every text segment belongs to the majority topic.
  const std::size_t worst_summary = cfg.max_text_segments * cfg.max_segment_tokens;
  if (worst_summary + 1 > cfg.max_len)
    fail("config", "generator: max summary length " + std::to_string(worst_summary) +
                       " cannot fit the decoder budget max_len=" + std::to_string(cfg.max_len));
}

}  // namespace detail

// Contiguous token range [first, last) owned by one topic.
struct TopicRange {
  int first;
  int last;
};

inline std::vector<TopicRange> topic_token_ranges(std::size_t vocab_size, std::size_t topics) {
  const std::size_t usable = vocab_size - kFirstContentToken;
  const std::size_t span = usable / topics;
  std::vector<TopicRange> ranges;
  ranges.reserve(topics);
  for (std::size_t t = 0; t < topics; ++t) {
    const int first = kFirstContentToken + static_cast<int>(t * span);
    ranges.push_back(TopicRange{first, first + static_cast<int>(span)});
  }
  return ranges;
}

// One synthetic sample. Token draws within a segment are sorted ascending so
// that a segment's token order is recoverable from its unordered embedding.
inline Sample generate_sample(const GeneratorConfig& cfg, Rng& rng, std::size_t index) {
  const std::vector<TopicRange> ranges = topic_token_ranges(cfg.vocab_size, cfg.topics);
  Sample s;
  s.sample_id = "sample-" + std::to_string(index);

  const std::size_t m =
      cfg.min_text_segments + rng.below(cfg.max_text_segments - cfg.min_text_segments + 1);
  const std::size_t n =
      cfg.min_visual_segments + rng.below(cfg.max_visual_segments - cfg.min_visual_segments + 1);

  std::vector<std::size_t> text_topics(m);
  for (std::size_t i = 0; i < m; ++i) text_topics[i] = rng.below(cfg.topics);

  // The majority topic is forced to be the topic of one random text segment,
  // so the reference summary is never empty.
  const std::size_t majority = text_topics[rng.below(m)];

  for (std::size_t i = 0; i < m; ++i) {
    const TopicRange r = ranges[text_topics[i]];
    const std::size_t len =
        cfg.min_segment_tokens + rng.below(cfg.max_segment_tokens - cfg.min_segment_tokens + 1);
    std::vector<int> seg(len);
    for (std::size_t t = 0; t < len; ++t)
      seg[t] = r.first + static_cast<int>(rng.below(static_cast<std::uint64_t>(r.last - r.first)));
    std::sort(seg.begin(), seg.end());
    s.text_segments.push_back(std::move(seg));
  }

  // floor(n/2) + 1 visual segments carry the majority topic: strict majority
  // regardless of what the remaining draws land on.
  std::vector<std::size_t> visual_topics(n);
  const std::size_t forced = n / 2 + 1;
  for (std::size_t i = 0; i < n; ++i)
    visual_topics[i] = i < forced ? majority : rng.below(cfg.topics);
  rng.shuffle(visual_topics);

  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> feature(cfg.topics, 0.0);
    feature[visual_topics[i]] = 1.0;
    for (double& v : feature) v += cfg.visual_noise * rng.uniform();
    s.visual_segments.push_back(std::move(feature));
  }

  for (std::size_t i = 0; i < m; ++i)
    if (text_topics[i] == majority)
      s.summary.insert(s.summary.end(), s.text_segments[i].begin(), s.text_segments[i].end());

  return s;
}

inline std::vector<Sample> generate_dataset(const GeneratorConfig& cfg, std::size_t count,
                                            Rng& rng) {
  detail::validate_generator_config(cfg);
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_sample(cfg, rng, i));
  return out;
}

// ---------------------------------------------------------------------------
// JSONL serialization
// ---------------------------------------------------------------------------

inline nlohmann::json sample_to_json(const Sample& s) {
  nlohmann::json j;
  j["sample_id"] = s.sample_id;
  j["text_segments"] = s.text_segments;
  j["visual_segments"] = s.visual_segments;
  j["summary"] = s.summary;
  return j;
}

inline Sample sample_from_json(const nlohmann::json& j) {
  Sample s;
  try {
    s.sample_id = j.at("sample_id").get<std::string>();
    s.text_segments = j.at("text_segments").get<std::vector<std::vector<int>>>();
    s.visual_segments = j.at("visual_segments").get<std::vector<std::vector<double>>>();
    s.summary = j.at("summary").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    fail("io", std::string("malformed sample record: ") + e.what());
  }
  if (s.text_segments.empty() || s.visual_segments.empty())
    fail("contract", "sample " + s.sample_id + ": needs at least one segment per modality");
  for (const auto& seg : s.text_segments)
    if (seg.empty()) fail("contract", "sample " + s.sample_id + ": empty text segment");
  const std::size_t d_raw = s.visual_segments.front().size();
  for (const auto& seg : s.visual_segments)
    if (seg.size() != d_raw)
      fail("contract", "sample " + s.sample_id + ": ragged visual features");
  return s;
}

inline void save_jsonl(const std::vector<Sample>& samples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("io", "cannot open for writing: " + path);
  for (const Sample& s : samples) out << sample_to_json(s).dump() << "\n";
  if (!out) fail("io", "write failed: " + path);
}

inline std::vector<Sample> load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("io", "cannot open dataset: " + path);
  std::vector<Sample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      fail("io", path + ":" + std::to_string(line_no) + ": invalid JSON");
    samples.push_back(sample_from_json(j));
  }
  return samples;
}

}  // namespace cssgr
