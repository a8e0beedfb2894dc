// SPDX-License-Identifier: Apache-2.0
#pragma once

// Aggregation of five-annotator responses into verifiability classes, and the
// stratified train/val/test split.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "steerlab/error.hpp"
#include "steerlab/random.hpp"
#include "steerlab/types.hpp"

namespace steerlab {

struct CategorizationRule {
  double obvious_min_rate = 0.8;
  double elusive_max_rate = 0.4;
  double borderline_rate = 0.6;
  double borderline_median_rt_s = 12.0;
  double timeout_s = kTimeoutSeconds;

  void validate() const {
    if (!(elusive_max_rate < borderline_rate && borderline_rate < obvious_min_rate)) {
      raise(ErrorKind::kConfig, "rule requires elusive_max_rate < borderline_rate < obvious_min_rate");
    }
    if (!(timeout_s > 0.0)) raise(ErrorKind::kConfig, "timeout_s must be positive");
  }
};

inline SampleRecord cap_response_times(SampleRecord sample, double timeout_s = kTimeoutSeconds) {
  for (auto& a : sample.annotations) {
    if (!a.response_time_s || *a.response_time_s > timeout_s) {
      a.response_time_s = timeout_s;
      a.located_correctly = false;
    }
  }
  return sample;
}

namespace detail {
inline void require_five(const SampleRecord& sample) {
  if (sample.annotations.size() != kAnnotatorsPerSample) {
    raise(ErrorKind::kValidation, "sample '" + sample.sample_id + "' field 'annotations': expected 5 entries, got " +
                                      std::to_string(sample.annotations.size()));
  }
}
}  // namespace detail

// Number of annotators (out of five) who located the hallucinated word.
inline int located_count(const SampleRecord& sample) {
  detail::require_five(sample);
  return static_cast<int>(std::count_if(sample.annotations.begin(), sample.annotations.end(),
                                        [](const AnnotationResponse& a) { return a.located_correctly; }));
}

inline double identification_rate(const SampleRecord& sample) {
  return static_cast<double>(located_count(sample)) / static_cast<double>(kAnnotatorsPerSample);
}

inline double median_response_time(const SampleRecord& sample, double timeout_s = kTimeoutSeconds) {
  detail::require_five(sample);
  std::array<double, kAnnotatorsPerSample> times{};
  for (std::size_t k = 0; k < times.size(); ++k) {
    const auto& t = sample.annotations[k].response_time_s;
    times[k] = t ? std::min(*t, timeout_s) : timeout_s;
  }
  std::nth_element(times.begin(), times.begin() + 2, times.end());
  return times[2];
}

// Rates are compared on the located count so 0.6 is exact; "exceeds" on the
// median is strict.
inline Verifiability categorize(const SampleRecord& sample, const CategorizationRule& rule = {}) {
  if (!sample.gold_hallucinated) {
    raise(ErrorKind::kUsage, "categorize called on non-hallucinated sample '" + sample.sample_id + "'");
  }
  const int located = located_count(sample);
  auto count_at = [](double rate) { return static_cast<int>(std::lround(rate * kAnnotatorsPerSample)); };
  auto at_least = [](int count, double rate) {
    return static_cast<double>(count) >= rate * static_cast<double>(kAnnotatorsPerSample) - 1e-9;
  };
  auto at_most = [](int count, double rate) {
    return static_cast<double>(count) <= rate * static_cast<double>(kAnnotatorsPerSample) + 1e-9;
  };
  if (at_least(located, rule.obvious_min_rate)) return Verifiability::kObvious;
  if (at_most(located, rule.elusive_max_rate)) return Verifiability::kElusive;
  if (located == count_at(rule.borderline_rate) &&
      median_response_time(sample, rule.timeout_s) > rule.borderline_median_rt_s) {
    return Verifiability::kElusive;
  }
  return Verifiability::kNeutral;
}

// Caps times and assigns the verifiability class to every record.
inline std::vector<SampleRecord> aggregate_records(std::vector<SampleRecord> records, const CategorizationRule& rule = {}) {
  rule.validate();
  for (auto& rec : records) {
    if (!rec.gold_hallucinated) {
      if (!rec.annotations.empty()) rec = cap_response_times(std::move(rec), rule.timeout_s);
      rec.verifiability = Verifiability::kNonHallucinated;
      continue;
    }
    rec = cap_response_times(std::move(rec), rule.timeout_s);
    rec.verifiability = categorize(rec, rule);
  }
  return records;
}

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;

  bool operator==(const SplitCounts&) const = default;
};

// floor(0.55 n) train, floor(0.20 n) val, remainder test.
constexpr SplitCounts split_counts(std::size_t n) {
  const std::size_t train = n * 55 / 100;
  const std::size_t val = n * 20 / 100;
  return {train, val, n - train - val};
}

// Stratified split. Each of the three used subsets is shuffled on its own,
// starting from ascending sample_id order, so the result depends only on the
// ids and the seed. Neutral and unassigned records keep split=unassigned.
inline std::vector<SampleRecord> split_dataset(std::vector<SampleRecord> records, std::uint64_t seed) {
  constexpr std::array<Verifiability, 3> kSubsets = {Verifiability::kNonHallucinated, Verifiability::kObvious,
                                                     Verifiability::kElusive};
  for (auto& rec : records) rec.split = Split::kUnassigned;
  for (std::size_t s = 0; s < kSubsets.size(); ++s) {
    std::vector<std::size_t> members;
    for (std::size_t k = 0; k < records.size(); ++k) {
      if (records[k].verifiability == kSubsets[s]) members.push_back(k);
    }
    std::sort(members.begin(), members.end(),
              [&](std::size_t a, std::size_t b) { return records[a].sample_id < records[b].sample_id; });
    Rng rng(seed ^ Rng::splitmix64(s + 1));
    for (std::size_t k = members.size(); k > 1; --k) {
      std::swap(members[k - 1], members[rng.below(k)]);
    }
    const auto counts = split_counts(members.size());
    for (std::size_t k = 0; k < members.size(); ++k) {
      records[members[k]].split = k < counts.train               ? Split::kTrain
                                  : k < counts.train + counts.val ? Split::kVal
                                                                  : Split::kTest;
    }
  }
  return records;
}

}  // namespace steerlab
