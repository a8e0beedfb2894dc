// SPDX-License-Identifier: Apache-2.0
#pragma once

// Line-delimited JSON dataset files. One SampleRecord per line; fields this
// library does not know are carried through untouched.

#include <cmath>
#include <filesystem>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "steerlab/error.hpp"
#include "steerlab/io.hpp"
#include "steerlab/types.hpp"

namespace steerlab {

enum class DatasetMode {
  // Annotator output before aggregation: response times may be absent or
  // above the timeout, and non-hallucinated rows may still be unassigned.
  kRaw,
  // Every type invariant enforced.
  kStrict,
};

namespace detail {

[[noreturn]] inline void invalid(const std::string& sample_id, std::string_view field, const std::string& why) {
  raise(ErrorKind::kValidation, "sample '" + sample_id + "' field '" + std::string(field) + "': " + why);
}

inline const char* const kKnownFields[] = {"sample_id",     "image_ref", "description", "gold_hallucinated",
                                           "verifiability", "split",     "annotations"};

}  // namespace detail

inline void validate_sample(const SampleRecord& rec, DatasetMode mode) {
  const auto& id = rec.sample_id;
  if (id.empty()) detail::invalid(id, "sample_id", "empty");
  if (rec.gold_hallucinated && rec.verifiability == Verifiability::kNonHallucinated) {
    detail::invalid(id, "verifiability", "non_hallucinated on a hallucinated sample");
  }
  if (!rec.gold_hallucinated && rec.verifiability != Verifiability::kNonHallucinated &&
      !(mode == DatasetMode::kRaw && rec.verifiability == Verifiability::kUnassigned)) {
    detail::invalid(id, "verifiability", std::string(to_string(rec.verifiability)) + " on a non-hallucinated sample");
  }
  if (rec.annotations.empty()) {
    if (rec.gold_hallucinated) detail::invalid(id, "annotations", "hallucinated sample without annotations");
  } else if (rec.annotations.size() != kAnnotatorsPerSample) {
    detail::invalid(id, "annotations", "expected 5 entries, got " + std::to_string(rec.annotations.size()));
  }
  for (const auto& a : rec.annotations) {
    if (!a.response_time_s) {
      if (mode == DatasetMode::kStrict) detail::invalid(id, "annotations", "missing response_time_s");
      continue;
    }
    const double t = *a.response_time_s;
    if (!std::isfinite(t) || t < 0.0) detail::invalid(id, "annotations", "negative or non-finite response_time_s");
    if (mode == DatasetMode::kStrict && t > kTimeoutSeconds) {
      detail::invalid(id, "annotations", "response_time_s above 15");
    }
  }
}

inline nlohmann::ordered_json to_json(const SampleRecord& rec) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  j["sample_id"] = rec.sample_id;
  j["image_ref"] = rec.image_ref;
  j["description"] = rec.description;
  j["gold_hallucinated"] = rec.gold_hallucinated;
  j["verifiability"] = std::string(to_string(rec.verifiability));
  j["split"] = std::string(to_string(rec.split));
  auto anns = nlohmann::ordered_json::array();
  for (const auto& a : rec.annotations) {
    nlohmann::ordered_json aj = nlohmann::ordered_json::object();
    aj["located_correctly"] = a.located_correctly;
    if (a.response_time_s) {
      aj["response_time_s"] = *a.response_time_s;
    } else {
      aj["response_time_s"] = nullptr;
    }
    anns.push_back(std::move(aj));
  }
  j["annotations"] = std::move(anns);
  for (const auto& [key, value] : rec.extra.items()) j[key] = value;
  return j;
}

inline SampleRecord sample_from_json(const nlohmann::ordered_json& j, DatasetMode mode) {
  if (!j.is_object()) raise(ErrorKind::kValidation, "dataset line is not a JSON object");
  SampleRecord rec;
  auto id_it = j.find("sample_id");
  if (id_it == j.end() || !id_it->is_string()) detail::invalid("?", "sample_id", "missing or not a string");
  rec.sample_id = id_it->get<std::string>();
  const auto& id = rec.sample_id;

  auto get_string = [&](const char* field, std::string& out, bool required) {
    auto it = j.find(field);
    if (it == j.end() || it->is_null()) {
      if (required) detail::invalid(id, field, "missing");
      return false;
    }
    if (!it->is_string()) detail::invalid(id, field, "not a string");
    out = it->get<std::string>();
    return true;
  };
  get_string("image_ref", rec.image_ref, true);
  get_string("description", rec.description, true);

  auto gold = j.find("gold_hallucinated");
  if (gold == j.end() || !gold->is_boolean()) detail::invalid(id, "gold_hallucinated", "missing or not a boolean");
  rec.gold_hallucinated = gold->get<bool>();

  std::string text;
  if (get_string("verifiability", text, false)) {
    auto v = parse_verifiability(text);
    if (!v) detail::invalid(id, "verifiability", "unknown value '" + text + "'");
    rec.verifiability = *v;
  }
  if (get_string("split", text, false)) {
    auto s = parse_split(text);
    if (!s) detail::invalid(id, "split", "unknown value '" + text + "'");
    rec.split = *s;
  }

  auto anns = j.find("annotations");
  if (anns != j.end() && !anns->is_null()) {
    if (!anns->is_array()) detail::invalid(id, "annotations", "not a list");
    for (const auto& aj : *anns) {
      if (!aj.is_object()) detail::invalid(id, "annotations", "entry is not an object");
      AnnotationResponse a;
      auto loc = aj.find("located_correctly");
      if (loc == aj.end() || !loc->is_boolean()) detail::invalid(id, "annotations", "located_correctly missing");
      a.located_correctly = loc->get<bool>();
      auto rt = aj.find("response_time_s");
      if (rt != aj.end() && !rt->is_null()) {
        if (!rt->is_number()) detail::invalid(id, "annotations", "response_time_s not a number");
        a.response_time_s = rt->get<double>();
      }
      rec.annotations.push_back(a);
    }
  }

  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* f : detail::kKnownFields) known = known || key == f;
    if (!known) rec.extra[key] = value;
  }
  validate_sample(rec, mode);
  return rec;
}

inline std::string encode_dataset(std::span<const SampleRecord> records) {
  std::string out;
  for (const auto& rec : records) {
    out += to_json(rec).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<SampleRecord> decode_dataset(std::string_view text, DatasetMode mode = DatasetMode::kStrict) {
  std::vector<SampleRecord> records;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      raise(ErrorKind::kValidation, "line " + std::to_string(line_no) + ": " + e.what());
    }
    auto rec = sample_from_json(j, mode);
    if (!ids.insert(rec.sample_id).second) detail::invalid(rec.sample_id, "sample_id", "duplicate");
    records.push_back(std::move(rec));
  }
  return records;
}

inline void write_dataset(std::span<const SampleRecord> records, const std::filesystem::path& path) {
  for (const auto& rec : records) validate_sample(rec, DatasetMode::kRaw);
  io::write_file_atomic(path, encode_dataset(records));
}

inline std::vector<SampleRecord> read_dataset(const std::filesystem::path& path,
                                              DatasetMode mode = DatasetMode::kStrict) {
  return decode_dataset(io::read_file(path), mode);
}

}  // namespace steerlab
