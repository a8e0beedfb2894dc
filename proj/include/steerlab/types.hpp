// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "steerlab/error.hpp"

namespace steerlab {

enum class Verifiability { kNonHallucinated, kObvious, kElusive, kNeutral, kUnassigned };
enum class Split { kTrain, kVal, kTest, kUnassigned };
enum class DirType { kOh, kEh, kMix };

inline std::string_view to_string(Verifiability v) {
  switch (v) {
    case Verifiability::kNonHallucinated: return "non_hallucinated";
    case Verifiability::kObvious: return "obvious";
    case Verifiability::kElusive: return "elusive";
    case Verifiability::kNeutral: return "neutral";
    case Verifiability::kUnassigned: return "unassigned";
  }
  return "unassigned";
}

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kUnassigned: return "unassigned";
  }
  return "unassigned";
}

inline std::string_view to_string(DirType t) {
  switch (t) {
    case DirType::kOh: return "oh";
    case DirType::kEh: return "eh";
    case DirType::kMix: return "mix";
  }
  return "oh";
}

inline std::optional<Verifiability> parse_verifiability(std::string_view s) {
  for (auto v : {Verifiability::kNonHallucinated, Verifiability::kObvious, Verifiability::kElusive,
                 Verifiability::kNeutral, Verifiability::kUnassigned}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

inline std::optional<Split> parse_split(std::string_view s) {
  for (auto v : {Split::kTrain, Split::kVal, Split::kTest, Split::kUnassigned}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

inline std::optional<DirType> parse_dir_type(std::string_view s) {
  for (auto v : {DirType::kOh, DirType::kEh, DirType::kMix}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

inline constexpr double kTimeoutSeconds = 15.0;
inline constexpr std::size_t kAnnotatorsPerSample = 5;

// One annotator's answer. An absent time marks a response that never arrived;
// cap_response_times turns it into (false, 15 s).
struct AnnotationResponse {
  bool located_correctly = false;
  std::optional<double> response_time_s;

  bool operator==(const AnnotationResponse&) const = default;
};

struct SampleRecord {
  std::string sample_id;
  std::string image_ref;
  std::string description;
  bool gold_hallucinated = false;
  Verifiability verifiability = Verifiability::kUnassigned;
  Split split = Split::kUnassigned;
  std::vector<AnnotationResponse> annotations;
  // Fields not known to this library; preserved in their original order.
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

struct ActivationRecord {
  std::string sample_id;
  std::uint32_t layer = 0;
  std::int32_t offset = -1;
  std::vector<float> vector;

  bool operator==(const ActivationRecord&) const = default;
};

struct ModelGeometry {
  int num_layers = 1;
  int d_model = 1;
  std::vector<int> post_instruction_offsets{-1};

  void validate() const {
    if (num_layers < 1) raise(ErrorKind::kConfig, "num_layers must be >= 1");
    if (d_model < 1) raise(ErrorKind::kConfig, "d_model must be >= 1");
    if (post_instruction_offsets.empty()) raise(ErrorKind::kConfig, "post_instruction_offsets is empty");
    std::set<int> seen;
    for (int off : post_instruction_offsets) {
      if (off >= 0) raise(ErrorKind::kConfig, "offset " + std::to_string(off) + " is not strictly negative");
      if (!seen.insert(off).second) raise(ErrorKind::kConfig, "offset " + std::to_string(off) + " repeated");
    }
  }

  bool operator==(const ModelGeometry&) const = default;
};

struct DirectionScores {
  double hr_h_score = 0.0;
  double acc_nh_score = 0.0;
  double kl_score = 0.0;
  double delta_acc_nh = 0.0;
  bool fallback = false;

  bool operator==(const DirectionScores&) const = default;
};

struct Direction {
  DirType dir_type = DirType::kOh;
  int layer = 0;
  int offset = -1;
  std::vector<double> vector;
  bool is_unit = false;
  // Euclidean norm of the difference-in-means vector this direction came from.
  double raw_norm = 0.0;
  std::optional<DirectionScores> scores;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

}  // namespace steerlab
