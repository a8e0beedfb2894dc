// SPDX-License-Identifier: Apache-2.0
#pragma once

// Direction files: vectors in the ACTV container layout (one record per
// direction, keyed "<index>:<type>:l<layer>:i<offset>"), with type, unit flag,
// raw norm and scores in a JSON sidecar at "<path>.json".

#include <cmath>
#include <cstdio>
#include <limits>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "steerlab/container.hpp"
#include "steerlab/error.hpp"
#include "steerlab/io.hpp"
#include "steerlab/types.hpp"

namespace steerlab {

struct DirectionSet {
  ModelGeometry geometry;
  std::vector<Direction> directions;
  std::optional<std::size_t> selected;

  const Direction& chosen() const {
    if (selected) return directions.at(*selected);
    if (directions.size() == 1) return directions.front();
    raise(ErrorKind::kValidation, "direction file holds " + std::to_string(directions.size()) +
                                      " directions and none is marked selected");
  }
};

namespace detail {
// JSON has no inf/nan; those travel as strings.
inline nlohmann::ordered_json json_number(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

inline double number_from_json(const nlohmann::ordered_json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  raise(ErrorKind::kFormat, "bad number '" + s + "' in sidecar");
}
}  // namespace detail

inline std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".json";
  return p;
}

inline std::string direction_key(std::size_t index, const Direction& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", index);
  return std::string(buf) + ":" + std::string(to_string(d.dir_type)) + ":l" + std::to_string(d.layer) + ":i" +
         std::to_string(d.offset);
}

inline void write_direction_set(const DirectionSet& set, const std::filesystem::path& path) {
  std::vector<ActivationRecord> records;
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < set.directions.size(); ++k) {
    const auto& d = set.directions[k];
    ActivationRecord rec{direction_key(k, d), static_cast<std::uint32_t>(d.layer), d.offset, {}};
    for (double v : d.vector) rec.vector.push_back(static_cast<float>(v));
    records.push_back(std::move(rec));

    nlohmann::ordered_json e;
    e["key"] = records.back().sample_id;
    e["dir_type"] = std::string(to_string(d.dir_type));
    e["layer"] = d.layer;
    e["offset"] = d.offset;
    e["is_unit"] = d.is_unit;
    e["raw_norm"] = detail::json_number(d.raw_norm);
    if (d.scores) {
      nlohmann::ordered_json s;
      s["hr_h_score"] = detail::json_number(d.scores->hr_h_score);
      s["acc_nh_score"] = detail::json_number(d.scores->acc_nh_score);
      s["kl_score"] = detail::json_number(d.scores->kl_score);
      s["delta_acc_nh"] = detail::json_number(d.scores->delta_acc_nh);
      s["fallback"] = d.scores->fallback;
      e["scores"] = std::move(s);
    } else {
      e["scores"] = nullptr;
    }
    e["selected"] = set.selected == k;
    entries.push_back(std::move(e));
  }
  nlohmann::ordered_json side;
  side["num_layers"] = set.geometry.num_layers;
  side["d_model"] = set.geometry.d_model;
  side["offsets"] = set.geometry.post_instruction_offsets;
  side["entries"] = std::move(entries);

  const auto bytes = encode_activation_container(records, set.geometry);
  io::write_file_atomic(path, bytes);
  io::write_file_atomic(sidecar_path(path), side.dump(2) + "\n");
}

// Unit directions are renormalized in double after the f32 round trip.
inline DirectionSet read_direction_set(const std::filesystem::path& path) {
  const auto container = read_activation_container(path);
  nlohmann::ordered_json side;
  try {
    side = nlohmann::ordered_json::parse(io::read_file(sidecar_path(path)));
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::kFormat, "direction sidecar for '" + path.string() + "': " + e.what());
  }
  DirectionSet set;
  try {
    set.geometry.num_layers = side.at("num_layers").get<int>();
    set.geometry.d_model = side.at("d_model").get<int>();
    set.geometry.post_instruction_offsets = side.at("offsets").get<std::vector<int>>();
    const auto& entries = side.at("entries");
    if (entries.size() != container.size()) raise(ErrorKind::kFormat, "sidecar entry count differs from vectors");
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const auto& e = entries[k];
      const auto& rec = container.records()[k];
      if (e.at("key").get<std::string>() != rec.sample_id) raise(ErrorKind::kFormat, "sidecar key mismatch");
      Direction d;
      auto type = parse_dir_type(e.at("dir_type").get<std::string>());
      if (!type) raise(ErrorKind::kFormat, "unknown dir_type in sidecar");
      d.dir_type = *type;
      d.layer = e.at("layer").get<int>();
      d.offset = e.at("offset").get<int>();
      d.is_unit = e.at("is_unit").get<bool>();
      d.raw_norm = detail::number_from_json(e.at("raw_norm"));
      for (float v : rec.vector) d.vector.push_back(static_cast<double>(v));
      if (d.is_unit) {
        const double n = l2_norm(d.vector);
        if (n > 0.0) {
          for (auto& v : d.vector) v /= n;
        }
      }
      if (!e.at("scores").is_null()) {
        const auto& s = e.at("scores");
        d.scores = DirectionScores{detail::number_from_json(s.at("hr_h_score")),
                                   detail::number_from_json(s.at("acc_nh_score")),
                                   detail::number_from_json(s.at("kl_score")),
                                   detail::number_from_json(s.at("delta_acc_nh")), s.at("fallback").get<bool>()};
      }
      if (e.at("selected").get<bool>()) set.selected = k;
      set.directions.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::kFormat, "direction sidecar for '" + path.string() + "': " + e.what());
  }
  return set;
}

}  // namespace steerlab
