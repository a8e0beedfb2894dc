// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration shared by every CLI subcommand, and the coefficient
// choice helper.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "steerlab/annotation.hpp"
#include "steerlab/error.hpp"
#include "steerlab/io.hpp"
#include "steerlab/selection.hpp"
#include "steerlab/synthetic.hpp"
#include "steerlab/toy_model.hpp"

namespace steerlab {

struct PlantSettings {
  std::uint64_t direction_seed = 1;
  std::string marker_word = "purple";
  double shift = 4.0;
  double answer_gain = 3.0;
};

struct RunConfig {
  ToyModelConfig model;
  std::optional<PlantSettings> planted;
  std::vector<int> offsets{-1, -2, -3, -4, -5};
  CategorizationRule rule;
  SelectionConfig selection;
  std::vector<double> alphas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4};
  std::vector<double> lambdas{0.0, 0.25, 0.5, 0.75, 1.0};
  double alpha_oh = 1.0;
  double alpha_eh = 1.0;
  double plateau_threshold = 0.005;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::map<std::string, std::string> paths;
};

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["model"] = {{"seed", c.model.seed},
                {"num_layers", c.model.num_layers},
                {"d_model", c.model.d_model},
                {"num_heads", c.model.num_heads},
                {"vocab_size", c.model.vocab_size},
                {"max_seq_len", c.model.max_seq_len},
                {"template_len", c.model.template_len},
                {"image_tokens", c.model.image_tokens}};
  if (c.planted) {
    j["planted"] = {{"direction_seed", c.planted->direction_seed},
                    {"marker_word", c.planted->marker_word},
                    {"shift", c.planted->shift},
                    {"answer_gain", c.planted->answer_gain}};
  } else {
    j["planted"] = nullptr;
  }
  j["offsets"] = c.offsets;
  j["rule"] = {{"obvious_min_rate", c.rule.obvious_min_rate},
               {"elusive_max_rate", c.rule.elusive_max_rate},
               {"borderline_rate", c.rule.borderline_rate},
               {"borderline_median_rt_s", c.rule.borderline_median_rt_s},
               {"timeout_s", c.rule.timeout_s}};
  j["selection"] = {{"layer_fraction_max", c.selection.layer_fraction_max},
                    {"kl_max", c.selection.kl_max},
                    {"delta_acc_nh_max", c.selection.delta_acc_nh_max},
                    {"alpha_for_scoring", c.selection.alpha_for_scoring},
                    {"kl_support", c.selection.kl_support == KlSupport::kFullVocab ? "full_vocab" : "answer_tokens"}};
  j["alphas"] = c.alphas;
  j["lambdas"] = c.lambdas;
  j["alpha_oh"] = c.alpha_oh;
  j["alpha_eh"] = c.alpha_eh;
  j["plateau_threshold"] = c.plateau_threshold;
  j["seed"] = c.seed;
  j["paths"] = c.paths;
  return j;
}

namespace detail {

template <typename T>
void read_field(const nlohmann::ordered_json& obj, const char* key, T& out) {
  if (auto it = obj.find(key); it != obj.end()) out = it->get<T>();
}

inline void reject_unknown(const nlohmann::ordered_json& obj, std::initializer_list<const char*> known,
                           const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      raise(ErrorKind::kConfig, "unknown key '" + key + "' in " + where);
    }
  }
}

}  // namespace detail

// Keys absent from the file keep their defaults; unknown keys are errors.
inline RunConfig config_from_json(const nlohmann::ordered_json& j) {
  RunConfig c;
  try {
    detail::reject_unknown(j,
                           {"model", "planted", "offsets", "rule", "selection", "alphas", "lambdas", "alpha_oh",
                            "alpha_eh", "plateau_threshold", "seed", "threads", "paths"},
                           "config");
    if (auto it = j.find("model"); it != j.end()) {
      detail::reject_unknown(*it,
                             {"seed", "num_layers", "d_model", "num_heads", "vocab_size", "max_seq_len",
                              "template_len", "image_tokens"},
                             "model");
      detail::read_field(*it, "seed", c.model.seed);
      detail::read_field(*it, "num_layers", c.model.num_layers);
      detail::read_field(*it, "d_model", c.model.d_model);
      detail::read_field(*it, "num_heads", c.model.num_heads);
      detail::read_field(*it, "vocab_size", c.model.vocab_size);
      detail::read_field(*it, "max_seq_len", c.model.max_seq_len);
      detail::read_field(*it, "template_len", c.model.template_len);
      detail::read_field(*it, "image_tokens", c.model.image_tokens);
    }
    if (auto it = j.find("planted"); it != j.end() && !it->is_null()) {
      detail::reject_unknown(*it, {"direction_seed", "marker_word", "shift", "answer_gain"}, "planted");
      PlantSettings p;
      detail::read_field(*it, "direction_seed", p.direction_seed);
      detail::read_field(*it, "marker_word", p.marker_word);
      detail::read_field(*it, "shift", p.shift);
      detail::read_field(*it, "answer_gain", p.answer_gain);
      c.planted = p;
    }
    detail::read_field(j, "offsets", c.offsets);
    if (auto it = j.find("rule"); it != j.end()) {
      detail::reject_unknown(
          *it, {"obvious_min_rate", "elusive_max_rate", "borderline_rate", "borderline_median_rt_s", "timeout_s"},
          "rule");
      detail::read_field(*it, "obvious_min_rate", c.rule.obvious_min_rate);
      detail::read_field(*it, "elusive_max_rate", c.rule.elusive_max_rate);
      detail::read_field(*it, "borderline_rate", c.rule.borderline_rate);
      detail::read_field(*it, "borderline_median_rt_s", c.rule.borderline_median_rt_s);
      detail::read_field(*it, "timeout_s", c.rule.timeout_s);
    }
    if (auto it = j.find("selection"); it != j.end()) {
      detail::reject_unknown(*it, {"layer_fraction_max", "kl_max", "delta_acc_nh_max", "alpha_for_scoring", "kl_support"},
                             "selection");
      detail::read_field(*it, "layer_fraction_max", c.selection.layer_fraction_max);
      detail::read_field(*it, "kl_max", c.selection.kl_max);
      detail::read_field(*it, "delta_acc_nh_max", c.selection.delta_acc_nh_max);
      detail::read_field(*it, "alpha_for_scoring", c.selection.alpha_for_scoring);
      std::string support = "full_vocab";
      detail::read_field(*it, "kl_support", support);
      if (support == "full_vocab") {
        c.selection.kl_support = KlSupport::kFullVocab;
      } else if (support == "answer_tokens") {
        c.selection.kl_support = KlSupport::kAnswerTokens;
      } else {
        raise(ErrorKind::kConfig, "kl_support must be full_vocab or answer_tokens");
      }
    }
    detail::read_field(j, "alphas", c.alphas);
    detail::read_field(j, "lambdas", c.lambdas);
    detail::read_field(j, "alpha_oh", c.alpha_oh);
    detail::read_field(j, "alpha_eh", c.alpha_eh);
    detail::read_field(j, "plateau_threshold", c.plateau_threshold);
    detail::read_field(j, "seed", c.seed);
    detail::read_field(j, "threads", c.threads);
    detail::read_field(j, "paths", c.paths);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::kConfig, e.what());
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    raise(ErrorKind::kConfig, "'" + path.string() + "': " + e.what());
  }
  return config_from_json(j);
}

inline std::vector<double> planted_direction(const RunConfig& c) {
  return random_unit_vector(c.model.d_model, c.planted ? c.planted->direction_seed : 1);
}

// The toy model for a run, rewired around the planted direction when the
// config asks for it.
inline ToyModel build_model(const RunConfig& c) {
  auto model = init_toy_model(c.model);
  if (c.planted) {
    PlantOptions opts;
    opts.direction = planted_direction(c);
    opts.marker_word = c.planted->marker_word;
    opts.shift = c.planted->shift;
    opts.answer_gain = c.planted->answer_gain;
    plant_answer_direction(model, opts);
  }
  return model;
}

struct AlphaPoint {
  double alpha = 0.0;
  double hr = 0.0;
};

// Scans alphas in ascending order and returns the first alpha > 0 (and below
// alpha_max) whose next step lowers HR by less than `plateau` per `step` of
// alpha. Returns 1.0 when no point qualifies.
inline double choose_alpha(std::vector<AlphaPoint> points, double plateau = 0.005, double step = 0.1,
                           double alpha_max = 1.5) {
  std::sort(points.begin(), points.end(), [](const AlphaPoint& a, const AlphaPoint& b) { return a.alpha < b.alpha; });
  for (std::size_t k = 0; k + 1 < points.size(); ++k) {
    const auto& cur = points[k];
    const auto& nxt = points[k + 1];
    if (!(cur.alpha > 0.0) || !(cur.alpha < alpha_max)) continue;
    const double span = nxt.alpha - cur.alpha;
    if (!(span > 0.0)) continue;
    const double reduction_per_step = (cur.hr - nxt.hr) * step / span;
    if (reduction_per_step < plateau) return cur.alpha;
  }
  return 1.0;
}

}  // namespace steerlab
