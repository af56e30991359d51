#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <vector>

#include "cssgr/error.hpp"

// Overlap metrics over token-id sequences: clipped n-gram precision/recall
// (ROUGE-1/2 style) and longest-common-subsequence scores (ROUGE-L style).

namespace cssgr {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

namespace detail {

inline RougeScore from_counts(double overlap, double candidate_total, double reference_total) {
  RougeScore s;
  s.precision = candidate_total > 0.0 ? overlap / candidate_total : 0.0;
  s.recall = reference_total > 0.0 ? overlap / reference_total : 0.0;
  s.f1 = (s.precision + s.recall) > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

}  // namespace detail

// Clipped n-gram overlap: each candidate n-gram counts at most as often as it
// appears in the reference. Sequences shorter than n score zero.
inline RougeScore rouge_n(const std::vector<int>& candidate, const std::vector<int>& reference,
                          std::size_t n) {
  if (n < 1) fail("contract", "rouge_n: n must be at least 1");
  const std::size_t cand_total = candidate.size() >= n ? candidate.size() - n + 1 : 0;
  const std::size_t ref_total = reference.size() >= n ? reference.size() - n + 1 : 0;
  if (cand_total == 0 || ref_total == 0)
    return detail::from_counts(0.0, static_cast<double>(cand_total),
                               static_cast<double>(ref_total));
  std::map<std::vector<int>, std::size_t> ref_counts;
  for (std::size_t i = 0; i + n <= reference.size(); ++i)
    ++ref_counts[std::vector<int>(reference.begin() + i, reference.begin() + i + n)];
  std::size_t overlap = 0;
  for (std::size_t i = 0; i + n <= candidate.size(); ++i) {
    auto it = ref_counts.find(std::vector<int>(candidate.begin() + i, candidate.begin() + i + n));
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return detail::from_counts(static_cast<double>(overlap), static_cast<double>(cand_total),
                             static_cast<double>(ref_total));
}

// Classic O(len_a * len_b) dynamic program.
inline std::size_t lcs_length(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline RougeScore rouge_l(const std::vector<int>& candidate, const std::vector<int>& reference) {
  if (candidate.empty() || reference.empty()) return RougeScore{};
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  return detail::from_counts(lcs, static_cast<double>(candidate.size()),
                             static_cast<double>(reference.size()));
}

}  // namespace cssgr
