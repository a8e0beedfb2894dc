// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "steerlab/steerlab.hpp"

namespace steerlab::testing {

inline SampleRecord annotated(const std::string& id, int located, std::vector<double> times, bool hallucinated = true) {
  SampleRecord r;
  r.sample_id = id;
  r.image_ref = "img/" + id + ".jpg";
  r.description = "a photo of " + id;
  r.gold_hallucinated = hallucinated;
  r.verifiability = hallucinated ? Verifiability::kUnassigned : Verifiability::kNonHallucinated;
  for (int k = 0; k < 5; ++k) {
    r.annotations.push_back({k < located, times.at(static_cast<std::size_t>(k))});
  }
  return r;
}

inline std::string padded(const std::string& prefix, int i) {
  return synthetic_id(prefix, i);
}

// 689 non-hallucinated, 351 obvious and 219 elusive labeled records.
inline std::vector<SampleRecord> full_sized_dataset() {
  std::vector<SampleRecord> out;
  auto add = [&](const std::string& prefix, int count, Verifiability v) {
    for (int i = 0; i < count; ++i) {
      SampleRecord r;
      r.sample_id = padded(prefix, i);
      r.image_ref = "coco/" + r.sample_id;
      r.description = "description " + std::to_string(i);
      r.gold_hallucinated = v != Verifiability::kNonHallucinated;
      r.verifiability = v;
      if (r.gold_hallucinated) {
        const int located = v == Verifiability::kObvious ? 4 + (i % 2) : i % 3;
        for (int k = 0; k < 5; ++k) r.annotations.push_back({k < located, 3.0 + 0.5 * k});
      }
      out.push_back(std::move(r));
    }
  };
  add("nh", 689, Verifiability::kNonHallucinated);
  add("oh", 351, Verifiability::kObvious);
  add("eh", 219, Verifiability::kElusive);
  return out;
}

inline std::vector<std::string> filler_words() {
  return {"cat",  "dog",   "table", "chair", "tree",   "car",   "street", "sky",   "river", "house",
          "red",  "green", "small", "large", "wooden", "metal", "near",   "under", "beside", "two",
          "man",  "woman", "child", "ball",  "window", "door",  "grass",  "road",  "bird",  "boat"};
}

// Labeled, split samples for the planted toy testbed. Sample i of each class
// shares one image and one filler description; the hallucinated copies swap a
// single word for the marker, which no filler word shares a token with.
inline std::vector<SampleRecord> planted_samples(const ToyModel& model, int per_class, std::uint64_t seed,
                                                 const std::string& marker = "purple") {
  const int marker_token = content_token(model, marker);
  std::vector<std::string> words;
  for (const auto& w : filler_words()) {
    if (content_token(model, w) != marker_token) words.push_back(w);
  }
  Rng rng(seed);
  std::vector<SampleRecord> out;
  for (int i = 0; i < per_class; ++i) {
    const int slot = i % 4;
    const Split split = slot < 2 ? Split::kTrain : slot == 2 ? Split::kVal : Split::kTest;
    const auto len = 4 + rng.below(5);
    std::vector<std::string> filler;
    for (std::uint64_t k = 0; k < len; ++k) filler.push_back(words[rng.below(words.size())]);
    auto make = [&](const std::string& prefix, Verifiability v) {
      SampleRecord r;
      r.sample_id = padded(prefix, i);
      r.image_ref = "img-" + padded("", i);
      r.gold_hallucinated = v != Verifiability::kNonHallucinated;
      r.verifiability = v;
      r.split = split;
      auto text = filler;
      if (r.gold_hallucinated) {
        text[rng.below(len)] = marker;
        const int located = v == Verifiability::kObvious ? 5 : 1;
        for (int k = 0; k < 5; ++k) r.annotations.push_back({k < located, 4.0 + k});
      }
      for (std::size_t k = 0; k < text.size(); ++k) r.description += (k ? " " : "") + text[k];
      out.push_back(std::move(r));
    };
    make("nh", Verifiability::kNonHallucinated);
    make("oh", Verifiability::kObvious);
    make("eh", Verifiability::kElusive);
  }
  return out;
}

inline std::vector<SampleRecord> filter(const std::vector<SampleRecord>& records, Verifiability v,
                                        std::optional<Split> split = std::nullopt) {
  std::vector<SampleRecord> out;
  for (const auto& r : records) {
    if (r.verifiability == v && (!split || r.split == *split)) out.push_back(r);
  }
  return out;
}

inline std::vector<std::string> ids_of(const std::vector<SampleRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records) out.push_back(r.sample_id);
  return out;
}

// Gaussian activations for every (id, layer, offset) key.
inline ActivationContainer random_container(const std::vector<std::string>& ids, int num_layers, std::vector<int> offsets,
                                            int d, std::uint64_t seed, double scale = 1.0) {
  ActivationContainer c(ModelGeometry{num_layers, d, std::move(offsets)});
  Rng rng(seed);
  for (const auto& id : ids) {
    for (int off : c.geometry().post_instruction_offsets) {
      for (int l = 0; l < num_layers; ++l) {
        std::vector<float> v(static_cast<std::size_t>(d));
        for (auto& x : v) x = static_cast<float>(scale * rng.normal());
        c.add({id, static_cast<std::uint32_t>(l), off, std::move(v)});
      }
    }
  }
  return c;
}

inline std::vector<std::string> numbered_ids(const std::string& prefix, int n) {
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) ids.push_back(padded(prefix, i));
  return ids;
}

struct PlantedTestbed {
  ToyModel model;
  std::vector<double> direction;
  std::vector<SampleRecord> samples;
};

inline PlantedTestbed planted_testbed(int per_class = 40, std::uint64_t seed = 11) {
  ToyModelConfig cfg;
  cfg.seed = seed;
  cfg.num_layers = 4;
  cfg.d_model = 32;
  cfg.num_heads = 4;
  PlantedTestbed tb{init_toy_model(cfg), random_unit_vector(cfg.d_model, seed + 100), {}};
  PlantOptions opts;
  opts.direction = tb.direction;
  plant_answer_direction(tb.model, opts);
  tb.samples = planted_samples(tb.model, per_class, seed + 200);
  return tb;
}

class TempDir {
 public:
  TempDir() {
    path_ = std::filesystem::temp_directory_path() /
            ("steerlab_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::filesystem::path path_;
};

// Kind of the steerlab::Error thrown by fn, or empty when nothing is thrown.
template <typename Fn>
std::optional<ErrorKind> error_kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

}  // namespace steerlab::testing
