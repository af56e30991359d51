#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "cssgr/data.hpp"

using namespace cssgr;

namespace {

// Independent rule-based oracle: recomputes the reference summary from the
// raw segments alone. Topic of a text segment is derived from its first
// token's range; topic of a visual segment is the feature argmax; majority
// counted by hand with ties toward the lowest topic id.
std::vector<int> oracle_summary(const Sample& s, std::size_t vocab, std::size_t topics) {
  const std::size_t span = (vocab - 3) / topics;
  std::vector<std::size_t> votes(topics, 0);
  for (const auto& feat : s.visual_segments) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < feat.size(); ++j)
      if (feat[j] > feat[best]) best = j;
    ++votes[best];
  }
  std::size_t majority = 0;
  for (std::size_t t = 1; t < topics; ++t)
    if (votes[t] > votes[majority]) majority = t;  // strict: ties keep lowest
  std::vector<int> summary;
  for (const auto& seg : s.text_segments) {
    const std::size_t topic = static_cast<std::size_t>(seg.front() - 3) / span;
    if (topic == majority) summary.insert(summary.end(), seg.begin(), seg.end());
  }
  return summary;
}

GeneratorConfig small_config() {
  GeneratorConfig cfg;
  cfg.vocab_size = 64;
  cfg.topics = 4;
  return cfg;
}

}  // namespace

TEST_CASE("topic ranges partition the content ids evenly", "[data]") {
  auto ranges = topic_token_ranges(64, 4);
  REQUIRE(ranges.size() == 4);
  REQUIRE(ranges[0].first == 3);
  for (std::size_t t = 0; t < 4; ++t) {
    REQUIRE(ranges[t].last - ranges[t].first == 15);  // (64-3)/4 = 15
    if (t > 0) REQUIRE(ranges[t].first == ranges[t - 1].last);
  }
}

TEST_CASE("generated samples: structure, majority, and ordering guarantees", "[data]") {
  GeneratorConfig cfg = small_config();
  Rng rng(101);
  auto samples = generate_dataset(cfg, 300, rng);
  REQUIRE(samples.size() == 300);
  for (const Sample& s : samples) {
    REQUIRE(s.text_segments.size() >= cfg.min_text_segments);
    REQUIRE(s.text_segments.size() <= cfg.max_text_segments);
    REQUIRE(s.visual_segments.size() >= cfg.min_visual_segments);
    REQUIRE(s.visual_segments.size() <= cfg.max_visual_segments);
    REQUIRE_FALSE(s.summary.empty());
    REQUIRE(s.summary.size() + 1 <= cfg.max_len);

    // Visual features: d_raw = topics, entries in [0, 1 + noise), argmax
    // unambiguous because the noise band stays below the one-hot gap.
    for (const auto& feat : s.visual_segments) {
      REQUIRE(feat.size() == cfg.topics);
      int big = 0;
      for (double v : feat) {
        REQUIRE(v >= 0.0);
        REQUIRE(v < 1.0 + cfg.visual_noise);
        if (v >= 1.0) ++big;
      }
      REQUIRE(big == 1);
    }

    // Tokens within a segment are sorted and stay inside one topic range.
    for (const auto& seg : s.text_segments) {
      REQUIRE(std::is_sorted(seg.begin(), seg.end()));
      const std::size_t topic = static_cast<std::size_t>(seg.front() - 3) / 15;
      for (int tok : seg) {
        REQUIRE(tok >= 3);
        REQUIRE(tok < 63);  // 3 + 4*15
        REQUIRE(static_cast<std::size_t>(tok - 3) / 15 == topic);
      }
    }

    // The majority topic is strict: its vote count exceeds n/2.
    std::vector<std::size_t> votes(cfg.topics, 0);
    for (const auto& feat : s.visual_segments) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < feat.size(); ++j)
        if (feat[j] > feat[best]) best = j;
      ++votes[best];
    }
    const std::size_t top = *std::max_element(votes.begin(), votes.end());
    REQUIRE(2 * top > s.visual_segments.size());
  }
}

TEST_CASE("rule-based oracle reproduces every reference summary", "[data]") {
  GeneratorConfig cfg = small_config();
  Rng rng(102);
  auto samples = generate_dataset(cfg, 1000, rng);
  for (const Sample& s : samples)
    REQUIRE(s.summary == oracle_summary(s, cfg.vocab_size, cfg.topics));
}

TEST_CASE("single-topic configuration keeps every text token", "[data]") {
  GeneratorConfig cfg = small_config();
  cfg.topics = 1;
  Rng rng(103);
  auto samples = generate_dataset(cfg, 50, rng);
  for (const Sample& s : samples) {
    std::vector<int> all_tokens;
    for (const auto& seg : s.text_segments)
      all_tokens.insert(all_tokens.end(), seg.begin(), seg.end());
    REQUIRE(s.summary == all_tokens);
  }
}

TEST_CASE("generation is deterministic per seed", "[data]") {
  GeneratorConfig cfg = small_config();
  Rng a(7), b(7), c(8);
  auto first = generate_dataset(cfg, 40, a);
  auto second = generate_dataset(cfg, 40, b);
  auto third = generate_dataset(cfg, 40, c);
  std::ostringstream sa, sb, sc;
  for (const auto& s : first) sa << sample_to_json(s).dump() << "\n";
  for (const auto& s : second) sb << sample_to_json(s).dump() << "\n";
  for (const auto& s : third) sc << sample_to_json(s).dump() << "\n";
  REQUIRE(sa.str() == sb.str());  // byte-identical
  REQUIRE(sa.str() != sc.str());
}

TEST_CASE("generator validates its configuration", "[data]") {
  GeneratorConfig cfg = small_config();
  Rng rng(104);
  cfg.vocab_size = 8;
  REQUIRE_THROWS_AS(generate_dataset(cfg, 1, rng), Error);
  cfg = small_config();
  cfg.topics = 0;
  REQUIRE_THROWS_AS(generate_dataset(cfg, 1, rng), Error);
  cfg = small_config();
  cfg.visual_noise = 0.6;
  REQUIRE_THROWS_AS(generate_dataset(cfg, 1, rng), Error);
  cfg = small_config();
  cfg.max_text_segments = 2;  // below min
  REQUIRE_THROWS_AS(generate_dataset(cfg, 1, rng), Error);
  cfg = small_config();
  cfg.max_len = 8;  // summaries of up to 10 tokens cannot fit
  REQUIRE_THROWS_AS(generate_dataset(cfg, 1, rng), Error);
  cfg = small_config();
  cfg.topics = 61;  // one token per topic still fits (61 usable ids)
  REQUIRE_NOTHROW(generate_dataset(cfg, 1, rng));
  cfg.topics = 62;
  REQUIRE_THROWS_AS(generate_dataset(cfg, 1, rng), Error);
}

TEST_CASE("JSONL round trip preserves every sample exactly", "[data]") {
  GeneratorConfig cfg = small_config();
  Rng rng(105);
  auto samples = generate_dataset(cfg, 60, rng);
  const std::string path = "test_data_roundtrip.jsonl";
  save_jsonl(samples, path);
  auto loaded = load_jsonl(path);
  REQUIRE(loaded.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    REQUIRE(loaded[i].sample_id == samples[i].sample_id);
    REQUIRE(loaded[i].text_segments == samples[i].text_segments);
    REQUIRE(loaded[i].visual_segments == samples[i].visual_segments);  // exact doubles
    REQUIRE(loaded[i].summary == samples[i].summary);
  }
  std::remove(path.c_str());
}

TEST_CASE("dataset loader rejects missing files and malformed records", "[data]") {
  REQUIRE_THROWS_AS(load_jsonl("does_not_exist.jsonl"), Error);

  const std::string path = "test_data_bad.jsonl";
  {
    std::ofstream out(path);
    out << "{not json}\n";
  }
  REQUIRE_THROWS_AS(load_jsonl(path), Error);
  {
    std::ofstream out(path);
    out << R"({"sample_id":"x","text_segments":[],"visual_segments":[[1.0]],"summary":[3]})"
        << "\n";
  }
  REQUIRE_THROWS_AS(load_jsonl(path), Error);
  {
    std::ofstream out(path);
    out << R"({"sample_id":"x","text_segments":[[3]],"visual_segments":[[1.0],[1.0,2.0]],"summary":[3]})"
        << "\n";
  }
  REQUIRE_THROWS_AS(load_jsonl(path), Error);
  {
    std::ofstream out(path);
    out << R"({"sample_id":"x","summary":[3]})" << "\n";
  }
  REQUIRE_THROWS_AS(load_jsonl(path), Error);
  std::remove(path.c_str());
}
