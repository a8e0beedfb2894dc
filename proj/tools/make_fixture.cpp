// SPDX-License-Identifier: Apache-2.0
// Writes the bundled raw annotation fixture: unlabeled records with five
// annotator responses each, ready for `steerlab aggregate`.
//
//   steerlab_make_fixture --config configs/fixture.json --per-class 60 --out data/fixture_raw.jsonl

#include <iostream>

#include <CLI11.hpp>

#include "steerlab/config.hpp"
#include "steerlab/dataset.hpp"

namespace {

using namespace steerlab;

const std::vector<std::string>& filler() {
  static const std::vector<std::string> words = {
      "cat",   "dog",    "table", "chair",  "tree",   "car",  "street", "sky",  "river", "house",
      "red",   "green",  "small", "large",  "wooden", "metal", "near",  "under", "beside", "two",
      "man",   "woman",  "child", "ball",   "window", "door", "grass",  "road", "bird",  "boat",
      "white", "yellow", "three", "people", "sitting", "park", "bench", "cloud", "bridge", "lamp"};
  return words;
}

std::string join_words(const std::vector<std::string>& w) {
  std::string s;
  for (std::size_t k = 0; k < w.size(); ++k) s += (k ? " " : "") + w[k];
  return s;
}

std::vector<AnnotationResponse> responses(int located, double first_time, double step) {
  std::vector<AnnotationResponse> out;
  for (int k = 0; k < static_cast<int>(kAnnotatorsPerSample); ++k) out.push_back({k < located, first_time + step * k});
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bundled fixture generator"};
  std::string config_path, out_path;
  int per_class = 60;
  std::uint64_t seed = 2025;
  app.add_option("--config", config_path)->required();
  app.add_option("--per-class", per_class);
  app.add_option("--seed", seed);
  app.add_option("--out", out_path)->required();
  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = load_config(config_path);
    const auto model = init_toy_model(cfg.model);  // tokenization only
    const std::string marker = cfg.planted ? cfg.planted->marker_word : "purple";
    const int marker_token = content_token(model, marker);
    std::vector<std::string> words;
    for (const auto& w : filler()) {
      if (content_token(model, w) != marker_token) words.push_back(w);
    }

    Rng rng(seed);
    std::vector<SampleRecord> records;
    auto add = [&](const std::string& id, const std::string& image, std::vector<std::string> text, bool hallucinated,
                   std::vector<AnnotationResponse> ann) {
      SampleRecord r;
      r.sample_id = id;
      r.image_ref = image;
      r.description = join_words(text);
      r.gold_hallucinated = hallucinated;
      r.verifiability = Verifiability::kUnassigned;
      r.split = Split::kUnassigned;
      r.annotations = std::move(ann);
      records.push_back(std::move(r));
    };
    for (int i = 0; i < per_class; ++i) {
      const auto image = "images/" + synthetic_id("", i) + ".jpg";
      std::vector<std::string> text;
      const auto len = 5 + rng.below(5);
      for (std::uint64_t k = 0; k < len; ++k) text.push_back(words[rng.below(words.size())]);
      auto with_marker = [&] {
        auto t = text;
        t[rng.below(len)] = marker;
        return t;
      };
      add("nh" + synthetic_id("", i), image, text, false, {});
      // Obvious: every annotator locates it within a few seconds.
      add("ob" + synthetic_id("", i), image, with_marker(), true, responses(i % 3 == 0 ? 4 : 5, 2.0 + i % 4, 0.8));
      // Elusive: rarely located, or located by three but slowly; some
      // responses hit the timeout.
      if (i % 2 == 0) {
        add("el" + synthetic_id("", i), image, with_marker(), true, responses(1 + i % 4 / 2, 9.0, 2.5));
      } else {
        auto ann = responses(3, 11.0, 1.5);
        ann.back().response_time_s.reset();
        add("el" + synthetic_id("", i), image, with_marker(), true, std::move(ann));
      }
      // Borderline but quick: neither class, dropped by aggregation.
      if (i % 6 == 0) add("bd" + synthetic_id("", i), image, with_marker(), true, responses(3, 4.0, 1.0));
    }
    write_dataset(records, out_path);
    std::cout << records.size() << " records\n";
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return exit_code_for(e.kind());
  }
  return 0;
}
