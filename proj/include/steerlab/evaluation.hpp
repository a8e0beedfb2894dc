// SPDX-License-Identifier: Apache-2.0
#pragma once

// Logit-based HR / ACC / UT metrics, baseline-vs-intervention reports and the
// alpha, lambda and layer sweeps.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "steerlab/container.hpp"
#include "steerlab/csv.hpp"
#include "steerlab/error.hpp"
#include "steerlab/io.hpp"
#include "steerlab/parallel.hpp"
#include "steerlab/steering.hpp"
#include "steerlab/toy_model.hpp"
#include "steerlab/types.hpp"

namespace steerlab {

struct MetricTriple {
  double hr = 0.0;
  double acc = 0.0;
  double ut = 0.0;

  MetricTriple operator-(const MetricTriple& o) const { return {hr - o.hr, acc - o.acc, ut - o.ut}; }
  bool operator==(const MetricTriple&) const = default;
};

inline MetricTriple sample_metrics(const AnswerProbs& probs, bool gold_hallucinated) {
  if (std::abs(probs.yes + probs.no + probs.unc - 1.0) > 1e-6) {
    raise(ErrorKind::kContract, "answer probabilities do not sum to 1");
  }
  if (gold_hallucinated) return {probs.yes, probs.no, probs.unc};
  return {probs.no, probs.yes, probs.unc};
}

inline MetricTriple evaluate_subset(const ToyModel& model, std::span<const SampleRecord> samples,
                                    const ResidualHook* hook = nullptr, unsigned threads = 1) {
  if (samples.empty()) raise(ErrorKind::kEmptySet, "evaluation subset is empty");
  std::vector<const SampleRecord*> order;
  for (const auto& s : samples) order.push_back(&s);
  std::sort(order.begin(), order.end(),
            [](const SampleRecord* a, const SampleRecord* b) { return a->sample_id < b->sample_id; });
  std::vector<MetricTriple> per_sample(order.size());
  parallel_for(order.size(), threads, [&](std::size_t k) {
    per_sample[k] = sample_metrics(answer_probabilities(model, *order[k], hook), order[k]->gold_hallucinated);
  });
  MetricTriple mean;
  for (const auto& t : per_sample) {
    mean.hr += t.hr;
    mean.acc += t.acc;
    mean.ut += t.ut;
  }
  const auto n = static_cast<double>(per_sample.size());
  return {mean.hr / n, mean.acc / n, mean.ut / n};
}

struct NamedSubset {
  std::string name;
  std::vector<SampleRecord> samples;
};

struct SubsetReport {
  std::string name;
  std::size_t n = 0;
  MetricTriple baseline;
  MetricTriple intervened;
  MetricTriple delta;
};

struct EvalReport {
  std::vector<SubsetReport> subsets;
  std::string direction;  // provenance, e.g. "oh l=2 i=-1"
  double alpha = 0.0;
  std::optional<double> lambda;
  std::uint64_t seed = 0;
};

inline const SubsetReport* find_subset(const EvalReport& report, std::string_view name) {
  for (const auto& s : report.subsets) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

// Empty subsets are skipped.
inline std::vector<MetricTriple> baseline_metrics(const ToyModel& model, std::span<const NamedSubset> subsets,
                                                  unsigned threads = 1) {
  std::vector<MetricTriple> out;
  for (const auto& s : subsets) {
    if (!s.samples.empty()) out.push_back(evaluate_subset(model, s.samples, nullptr, threads));
  }
  return out;
}

inline EvalReport delta_report(const ToyModel& model, std::span<const NamedSubset> subsets, const ResidualHook& hook,
                               std::span<const MetricTriple> precomputed_baseline = {}, unsigned threads = 1) {
  EvalReport report;
  std::size_t b = 0;
  for (const auto& s : subsets) {
    if (s.samples.empty()) continue;
    SubsetReport r;
    r.name = s.name;
    r.n = s.samples.size();
    r.baseline = b < precomputed_baseline.size() ? precomputed_baseline[b]
                                                 : evaluate_subset(model, s.samples, nullptr, threads);
    ++b;
    r.intervened = evaluate_subset(model, s.samples, &hook, threads);
    r.delta = r.intervened - r.baseline;
    report.subsets.push_back(std::move(r));
  }
  return report;
}

inline std::string describe(const Direction& d) {
  return std::string(to_string(d.dir_type)) + " l=" + std::to_string(d.layer) + " i=" + std::to_string(d.offset);
}

struct SweepRow {
  double value = 0.0;  // alpha or lambda
  EvalReport report;
};

inline std::vector<SweepRow> alpha_sweep(const ToyModel& model, const Direction& direction,
                                         std::span<const double> alphas, std::span<const NamedSubset> subsets,
                                         unsigned threads = 1) {
  if (alphas.empty()) raise(ErrorKind::kInput, "alpha list is empty");
  for (double a : alphas) {
    if (!(a >= 0.0) || !std::isfinite(a)) raise(ErrorKind::kInput, "alpha " + std::to_string(a) + " is negative");
  }
  const auto base = baseline_metrics(model, subsets, threads);
  std::vector<SweepRow> rows;
  for (double a : alphas) {
    auto report = delta_report(model, subsets, make_ablation_hook(direction, a), base, threads);
    report.direction = describe(direction);
    report.alpha = a;
    rows.push_back({a, std::move(report)});
  }
  return rows;
}

inline std::vector<SweepRow> lambda_sweep(const ToyModel& model, const Direction& r_oh, const Direction& r_eh,
                                          std::span<const double> lambdas, double alpha,
                                          std::span<const NamedSubset> subsets, unsigned threads = 1) {
  if (lambdas.empty()) raise(ErrorKind::kInput, "lambda list is empty");
  for (double l : lambdas) {
    if (!(l >= 0.0 && l <= 1.0)) raise(ErrorKind::kInput, "lambda " + std::to_string(l) + " outside [0, 1]");
  }
  const auto base = baseline_metrics(model, subsets, threads);
  std::vector<SweepRow> rows;
  for (double l : lambdas) {
    const auto mix = mix_direction(r_oh, r_eh, l);
    auto report = delta_report(model, subsets, make_ablation_hook(mix, alpha), base, threads);
    report.direction = describe(mix);
    report.alpha = alpha;
    report.lambda = l;
    rows.push_back({l, std::move(report)});
  }
  return rows;
}

// Mean over offsets of the HR after ablating each (layer, offset) candidate.
// Zero candidates are left out of their layer's mean; a layer with none left
// reports NaN.
inline std::vector<double> layer_sweep(const ToyModel& model, const ActivationContainer& container,
                                       std::span<const std::string> type_ids, std::span<const std::string> nh_ids,
                                       const ModelGeometry& geometry, std::span<const SampleRecord> samples,
                                       double alpha = 1.0, unsigned threads = 1) {
  const auto grid = build_candidate_grid(container, type_ids, nh_ids, geometry, DirType::kOh, threads);
  const auto num_layers = static_cast<std::size_t>(geometry.num_layers);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> hr(grid.directions.size(), nan);
  parallel_for(grid.directions.size(), threads, [&](std::size_t k) {
    if (!(grid.directions[k].raw_norm > 0.0)) return;
    const auto hook = make_ablation_hook(normalize(grid.directions[k]), alpha);
    hr[k] = evaluate_subset(model, samples, &hook).hr;
  });
  std::vector<double> per_layer(num_layers, 0.0);
  std::vector<int> used(num_layers, 0);
  for (std::size_t k = 0; k < hr.size(); ++k) {
    if (std::isnan(hr[k])) continue;
    per_layer[k % num_layers] += hr[k];
    ++used[k % num_layers];
  }
  for (std::size_t l = 0; l < num_layers; ++l) per_layer[l] = used[l] ? per_layer[l] / used[l] : nan;
  return per_layer;
}

struct LayerCosine {
  int layer = 0;
  std::optional<double> cosine;  // empty when either direction is zero
};

inline std::vector<LayerCosine> direction_cosine_by_layer(const ActivationContainer& container,
                                                          std::span<const std::string> oh_ids,
                                                          std::span<const std::string> eh_ids,
                                                          std::span<const std::string> nh_ids,
                                                          const ModelGeometry& geometry, int offset) {
  std::vector<LayerCosine> out;
  for (int l = 0; l < geometry.num_layers; ++l) {
    const auto oh = diff_in_means(container, oh_ids, nh_ids, l, offset, DirType::kOh);
    const auto eh = diff_in_means(container, eh_ids, nh_ids, l, offset, DirType::kEh);
    LayerCosine lc{l, std::nullopt};
    if (oh.raw_norm > 0.0 && eh.raw_norm > 0.0) lc.cosine = cosine_similarity(oh.vector, eh.vector);
    out.push_back(lc);
  }
  return out;
}

// ---- CSV rendering ----

inline std::vector<std::string> triple_cells(const MetricTriple& t) {
  return {csv::number(t.hr), csv::number(t.acc), csv::number(t.ut)};
}

inline const std::vector<std::string>& report_header() {
  static const std::vector<std::string> h = {
      "subset",        "n",        "baseline_hr", "baseline_acc", "baseline_ut", "intervened_hr",
      "intervened_acc", "intervened_ut", "delta_hr", "delta_acc", "delta_ut"};
  return h;
}

inline std::vector<std::string> report_cells(const SubsetReport& s) {
  std::vector<std::string> cells{s.name, std::to_string(s.n)};
  for (const auto* t : {&s.baseline, &s.intervened, &s.delta}) {
    for (auto& c : triple_cells(*t)) cells.push_back(std::move(c));
  }
  return cells;
}

inline std::string encode_report(const EvalReport& report) {
  std::string out = csv::join(report_header());
  for (const auto& s : report.subsets) out += csv::join(report_cells(s));
  return out;
}

inline std::vector<std::string> sweep_header(std::string_view value_column) {
  std::vector<std::string> h{std::string(value_column)};
  for (const auto& c : report_header()) h.push_back(c);
  return h;
}

inline std::string encode_sweep(std::span<const SweepRow> rows, std::string_view value_column) {
  std::string out = csv::join(sweep_header(value_column));
  for (const auto& row : rows) {
    for (const auto& s : row.report.subsets) {
      auto cells = report_cells(s);
      cells.insert(cells.begin(), csv::number(row.value));
      out += csv::join(cells);
    }
  }
  return out;
}

struct SweepPoint {
  double value = 0.0;
  std::string subset;
  std::size_t n = 0;
  MetricTriple baseline, intervened, delta;
};

inline std::vector<SweepPoint> decode_sweep(std::string_view text, std::string_view value_column) {
  std::vector<SweepPoint> out;
  for (const auto& cells : csv::parse_table(text, sweep_header(value_column))) {
    SweepPoint p;
    p.value = csv::parse_number(cells[0]);
    p.subset = cells[1];
    p.n = static_cast<std::size_t>(csv::parse_int(cells[2]));
    MetricTriple* triples[] = {&p.baseline, &p.intervened, &p.delta};
    for (std::size_t t = 0; t < 3; ++t) {
      triples[t]->hr = csv::parse_number(cells[3 + 3 * t]);
      triples[t]->acc = csv::parse_number(cells[4 + 3 * t]);
      triples[t]->ut = csv::parse_number(cells[5 + 3 * t]);
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline std::string encode_layer_sweep(std::span<const double> per_layer_hr) {
  std::string out = csv::join({"layer", "mean_hr"});
  for (std::size_t l = 0; l < per_layer_hr.size(); ++l) {
    out += csv::join({std::to_string(l), csv::number(per_layer_hr[l])});
  }
  return out;
}

inline std::string encode_cosines(std::span<const LayerCosine> rows, int offset) {
  std::string out = csv::join({"layer", "offset", "cosine", "degenerate"});
  for (const auto& r : rows) {
    out += csv::join({std::to_string(r.layer), std::to_string(offset), r.cosine ? csv::number(*r.cosine) : "",
                      r.cosine ? "0" : "1"});
  }
  return out;
}

inline void emit_report(const std::string& csv_text, const std::filesystem::path& path) {
  io::write_file_atomic(path, csv_text);
}

}  // namespace steerlab
