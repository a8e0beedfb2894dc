// SPDX-License-Identifier: Apache-2.0
#pragma once

// Validation-time scoring of candidate directions and constrained selection.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "steerlab/csv.hpp"
#include "steerlab/error.hpp"
#include "steerlab/parallel.hpp"
#include "steerlab/steering.hpp"
#include "steerlab/toy_model.hpp"
#include "steerlab/types.hpp"

namespace steerlab {

enum class KlSupport { kFullVocab, kAnswerTokens };

struct SelectionConfig {
  double layer_fraction_max = 0.9;
  double kl_max = 0.1;
  double delta_acc_nh_max = 0.1;
  double alpha_for_scoring = 1.0;
  KlSupport kl_support = KlSupport::kFullVocab;
  unsigned threads = 1;

  void validate() const {
    if (!(layer_fraction_max > 0.0 && kl_max > 0.0 && delta_acc_nh_max > 0.0)) {
      raise(ErrorKind::kConfig, "selection thresholds must be positive");
    }
    if (!(alpha_for_scoring >= 0.0)) raise(ErrorKind::kConfig, "alpha_for_scoring must be >= 0");
  }
};

namespace detail {
inline std::vector<const SampleRecord*> by_id(std::span<const SampleRecord> samples) {
  std::vector<const SampleRecord*> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(&s);
  std::sort(out.begin(), out.end(),
            [](const SampleRecord* a, const SampleRecord* b) { return a->sample_id < b->sample_id; });
  return out;
}

inline void require_nonempty(std::span<const SampleRecord> samples, const char* what) {
  if (samples.empty()) raise(ErrorKind::kEmptySet, std::string(what) + " validation set is empty");
}

// Log-probabilities over the KL support.
inline std::vector<double> support_log_probs(std::span<const double> logits, KlSupport support) {
  if (support == KlSupport::kFullVocab) return log_softmax(logits);
  const double three[] = {logits[token::kYes], logits[token::kNo], logits[token::kUnc]};
  return log_softmax(three);
}
}  // namespace detail

// KL(p || q) from log-probabilities, natural log. +inf when q has a zero
// where p does not.
inline double kl_divergence(std::span<const double> log_p, std::span<const double> log_q) {
  double kl = 0.0;
  for (std::size_t k = 0; k < log_p.size(); ++k) {
    const double p = std::exp(log_p[k]);
    if (p == 0.0) continue;
    if (std::isinf(log_q[k])) return std::numeric_limits<double>::infinity();
    kl += p * (log_p[k] - log_q[k]);
  }
  return std::max(kl, 0.0);
}

inline double mean_log_prob(const ToyModel& model, std::span<const SampleRecord> samples, int answer_token,
                            const ResidualHook* hook) {
  double sum = 0.0;
  for (const auto* s : detail::by_id(samples)) {
    const auto p = answer_probabilities(model, *s, hook);
    const double prob = answer_token == token::kYes ? p.yes : answer_token == token::kNo ? p.no : p.unc;
    sum += std::log(prob);
  }
  return sum / static_cast<double>(samples.size());
}

// Mean ln P(YES) on hallucinated validation samples, where YES is the wrong answer.
inline double hr_h_score(const ToyModel& model, const Direction& candidate, std::span<const SampleRecord> val_h,
                         double alpha = 1.0) {
  detail::require_nonempty(val_h, "hallucinated");
  const auto hook = make_ablation_hook(candidate, alpha);
  return mean_log_prob(model, val_h, token::kYes, &hook);
}

// Mean ln P(YES) on non-hallucinated validation samples, where YES is correct.
inline double acc_nh_score(const ToyModel& model, const Direction& candidate, std::span<const SampleRecord> val_nh,
                           double alpha = 1.0) {
  detail::require_nonempty(val_nh, "non-hallucinated");
  const auto hook = make_ablation_hook(candidate, alpha);
  return mean_log_prob(model, val_nh, token::kYes, &hook);
}

inline double baseline_acc_nh(const ToyModel& model, std::span<const SampleRecord> val_nh) {
  detail::require_nonempty(val_nh, "non-hallucinated");
  return mean_log_prob(model, val_nh, token::kYes, nullptr);
}

inline double kl_score(const ToyModel& model, const Direction& candidate, std::span<const SampleRecord> val_nh,
                       double alpha = 1.0, KlSupport support = KlSupport::kFullVocab) {
  detail::require_nonempty(val_nh, "non-hallucinated");
  const auto hook = make_ablation_hook(candidate, alpha);
  double sum = 0.0;
  for (const auto* s : detail::by_id(val_nh)) {
    const auto tokens = render_tokens(model, *s);
    const auto base = detail::support_log_probs(forward(model, tokens).logits, support);
    const auto ablated = detail::support_log_probs(forward(model, tokens, &hook).logits, support);
    sum += kl_divergence(base, ablated);
  }
  return sum / static_cast<double>(val_nh.size());
}

// Positive values mean the candidate degrades non-hallucinated accuracy.
constexpr double delta_acc_nh(double baseline_acc, double candidate_acc) { return baseline_acc - candidate_acc; }

inline DirectionScores score_candidate(const ToyModel& model, const Direction& unit_candidate,
                                       std::span<const SampleRecord> val_h, std::span<const SampleRecord> val_nh,
                                       double baseline_acc, const SelectionConfig& config) {
  DirectionScores s;
  s.hr_h_score = hr_h_score(model, unit_candidate, val_h, config.alpha_for_scoring);
  s.acc_nh_score = acc_nh_score(model, unit_candidate, val_nh, config.alpha_for_scoring);
  s.kl_score = kl_score(model, unit_candidate, val_nh, config.alpha_for_scoring, config.kl_support);
  s.delta_acc_nh = delta_acc_nh(baseline_acc, s.acc_nh_score);
  return s;
}

inline bool passes_constraints(int layer, int num_layers, double kl, double delta_acc,
                               const SelectionConfig& config) {
  return static_cast<double>(layer) < config.layer_fraction_max * static_cast<double>(num_layers) &&
         kl < config.kl_max && delta_acc < config.delta_acc_nh_max;
}

struct ScoredCandidate {
  Direction direction;  // unit; scores set unless degenerate
  bool degenerate = false;
  bool passed = false;
  bool selected = false;
};

struct SelectionResult {
  Direction selected;
  std::size_t selected_index = 0;
  bool fallback = false;
  std::vector<ScoredCandidate> table;  // grid order
};

namespace detail {
// Strict total order: lower hr_h_score, then lower layer, then offset closer to -1.
inline bool ranks_before(const Direction& a, const Direction& b) {
  if (a.scores->hr_h_score != b.scores->hr_h_score) return a.scores->hr_h_score < b.scores->hr_h_score;
  if (a.layer != b.layer) return a.layer < b.layer;
  return a.offset > b.offset;
}
}  // namespace detail

// Filter-then-argmin over already scored candidates, falling back to the
// unconstrained argmin when nothing passes. Fills passed/selected flags.
inline SelectionResult select_from_scored(std::vector<ScoredCandidate> candidates, int num_layers,
                                          const SelectionConfig& config) {
  if (candidates.empty()) raise(ErrorKind::kEmptySet, "empty candidate grid");
  const ScoredCandidate* best_passing = nullptr;
  const ScoredCandidate* best_any = nullptr;
  for (auto& c : candidates) {
    c.selected = false;
    if (c.degenerate || !c.direction.scores || std::isnan(c.direction.scores->hr_h_score)) {
      c.passed = false;
      continue;
    }
    const auto& s = *c.direction.scores;
    c.passed = passes_constraints(c.direction.layer, num_layers, s.kl_score, s.delta_acc_nh, config);
    if (!best_any || detail::ranks_before(c.direction, best_any->direction)) best_any = &c;
    if (c.passed && (!best_passing || detail::ranks_before(c.direction, best_passing->direction))) {
      best_passing = &c;
    }
  }
  if (!best_any) raise(ErrorKind::kDegenerateDirection, "every candidate direction is degenerate");
  const auto* chosen = best_passing ? best_passing : best_any;
  SelectionResult result;
  result.fallback = best_passing == nullptr;
  result.selected_index = static_cast<std::size_t>(chosen - candidates.data());
  candidates[result.selected_index].selected = true;
  candidates[result.selected_index].direction.scores->fallback = result.fallback;
  result.selected = candidates[result.selected_index].direction;
  result.table = std::move(candidates);
  return result;
}

inline SelectionResult select_direction(const CandidateGrid& grid, const ToyModel& model,
                                        std::span<const SampleRecord> val_h, std::span<const SampleRecord> val_nh,
                                        const SelectionConfig& config = {}) {
  config.validate();
  if (grid.directions.empty()) raise(ErrorKind::kEmptySet, "empty candidate grid");
  detail::require_nonempty(val_h, "hallucinated");
  const double base_acc = baseline_acc_nh(model, val_nh);

  std::vector<ScoredCandidate> scored(grid.directions.size());
  parallel_for(scored.size(), config.threads, [&](std::size_t k) {
    const auto& raw = grid.directions[k];
    auto& out = scored[k];
    try {
      out.direction = raw.is_unit ? raw : normalize(raw);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDegenerateDirection) throw;
      out.direction = raw;
      out.degenerate = true;
      return;
    }
    out.direction.scores = score_candidate(model, out.direction, val_h, val_nh, base_acc, config);
  });
  return select_from_scored(std::move(scored), grid.geometry.num_layers, config);
}

// One row of the selection score table. Unknown scores are NaN.
struct ScoreRow {
  int layer = 0;
  int offset = -1;
  double hr_h_score = std::numeric_limits<double>::quiet_NaN();
  double acc_nh_score = std::numeric_limits<double>::quiet_NaN();
  double kl_score = std::numeric_limits<double>::quiet_NaN();
  double delta_acc_nh = std::numeric_limits<double>::quiet_NaN();
  bool passed = false;
  bool selected = false;
};

inline const std::vector<std::string>& score_table_header() {
  static const std::vector<std::string> header = {"layer",    "offset",       "hr_h_score", "acc_nh_score",
                                                  "kl_score", "delta_acc_nh", "passed",     "selected"};
  return header;
}

inline std::vector<ScoreRow> score_rows(const SelectionResult& result) {
  std::vector<ScoreRow> rows;
  for (const auto& c : result.table) {
    ScoreRow r;
    r.layer = c.direction.layer;
    r.offset = c.direction.offset;
    if (c.direction.scores) {
      r.hr_h_score = c.direction.scores->hr_h_score;
      r.acc_nh_score = c.direction.scores->acc_nh_score;
      r.kl_score = c.direction.scores->kl_score;
      r.delta_acc_nh = c.direction.scores->delta_acc_nh;
    }
    r.passed = c.passed;
    r.selected = c.selected;
    rows.push_back(r);
  }
  return rows;
}

inline std::string encode_score_table(std::span<const ScoreRow> rows) {
  std::string out = csv::join(score_table_header());
  for (const auto& r : rows) {
    out += csv::join({std::to_string(r.layer), std::to_string(r.offset), csv::number(r.hr_h_score),
                      csv::number(r.acc_nh_score), csv::number(r.kl_score), csv::number(r.delta_acc_nh),
                      r.passed ? "1" : "0", r.selected ? "1" : "0"});
  }
  return out;
}

inline std::vector<ScoreRow> decode_score_table(std::string_view text) {
  std::vector<ScoreRow> rows;
  for (const auto& cells : csv::parse_table(text, score_table_header())) {
    ScoreRow r;
    r.layer = static_cast<int>(csv::parse_int(cells[0]));
    r.offset = static_cast<int>(csv::parse_int(cells[1]));
    r.hr_h_score = csv::parse_number(cells[2]);
    r.acc_nh_score = csv::parse_number(cells[3]);
    r.kl_score = csv::parse_number(cells[4]);
    r.delta_acc_nh = csv::parse_number(cells[5]);
    r.passed = csv::parse_bool(cells[6]);
    r.selected = csv::parse_bool(cells[7]);
    rows.push_back(r);
  }
  return rows;
}

inline bool row_satisfies_constraints(const ScoreRow& row, int num_layers, const SelectionConfig& config = {}) {
  return passes_constraints(row.layer, num_layers, row.kl_score, row.delta_acc_nh, config);
}

}  // namespace steerlab
