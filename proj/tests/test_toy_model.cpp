// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <bit>
#include <cmath>

#include "fixtures.hpp"
#include "steerlab/steering.hpp"
#include "steerlab/synthetic.hpp"
#include "steerlab/toy_model.hpp"

namespace steerlab {
namespace {

using testing::error_kind_of;

const ToyModel& default_model() {
  static const ToyModel m = init_toy_model(7, 4, 32, 4, 256);
  return m;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (std::bit_cast<std::uint64_t>(a[k]) != std::bit_cast<std::uint64_t>(b[k])) return false;
  }
  return true;
}

SampleRecord sample(const std::string& id, const std::string& description) {
  return {id, "img-" + id, description, false, Verifiability::kNonHallucinated, Split::kTrain, {}};
}

TEST(InitToyModel, SameSeedIsBitwiseIdentical) {
  const auto a = init_toy_model(7, 4, 32, 4, 256);
  const auto b = init_toy_model(7, 4, 32, 4, 256);
  EXPECT_TRUE(a == b);
  EXPECT_TRUE(same_bits(a.layers[2].w_in, b.layers[2].w_in));
}

TEST(InitToyModel, DifferentSeedsDiffer) {
  const auto a = init_toy_model(7, 4, 32, 4, 256);
  const auto b = init_toy_model(8, 4, 32, 4, 256);
  EXPECT_FALSE(a.token_embedding == b.token_embedding);
}

TEST(InitToyModel, ConfigurationErrors) {
  EXPECT_EQ(error_kind_of([] { init_toy_model(7, 4, 30, 4, 256); }), ErrorKind::kConfig);
  EXPECT_EQ(error_kind_of([] { init_toy_model(7, 0, 32, 4, 256); }), ErrorKind::kConfig);
  EXPECT_EQ(error_kind_of([] { init_toy_model(7, 4, 32, 4, 8); }), ErrorKind::kConfig);
}

TEST(Forward, GoldenLogits) {
  const std::vector<int> tokens{3, 20, 50, 101, 4, 5, 6, 7, 8};
  const auto logits = forward(default_model(), tokens).logits;
  const std::pair<int, std::uint64_t> golden[] = {
      {0, 0x3fd86f3c6d0ba7deULL}, {1, 0x3ff36ac5a702498cULL},   {2, 0x3fbb39d9028a9aa4ULL},
      {3, 0xbffa1bd18d85dbeaULL}, {100, 0x3fda5dc547c335c5ULL}, {255, 0x3fdb73853ed94038ULL},
  };
  for (const auto& [tok, bits] : golden) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(logits[static_cast<std::size_t>(tok)]), bits) << "token " << tok;
  }
}

TEST(Forward, IdentityHookMatchesNoHook) {
  const auto tokens = render_tokens(default_model(), sample("x", "a dog on the grass"));
  const ResidualHook identity = [](HookPoint, int, std::span<double>) {};
  EXPECT_TRUE(same_bits(forward(default_model(), tokens).logits, forward(default_model(), tokens, &identity).logits));
}

TEST(Forward, ZeroAlphaAblationMatchesNoHook) {
  const auto tokens = render_tokens(default_model(), sample("x", "two red cars"));
  Direction d{DirType::kOh, 0, -1, random_unit_vector(32, 3), true, 1.0, std::nullopt};
  const auto hook = make_ablation_hook(d, 0.0);
  EXPECT_TRUE(same_bits(forward(default_model(), tokens).logits, forward(default_model(), tokens, &hook).logits));
}

TEST(Forward, HookVisitsBothPointsOfEveryLayer) {
  const std::vector<int> tokens{3, 40, 41, 4, 5, 6, 7, 8};
  int pre = 0, post = 0;
  std::vector<int> layers_seen(4, 0);
  const ResidualHook counter = [&](HookPoint p, int l, std::span<double> x) {
    EXPECT_EQ(x.size(), 32u);
    (p == HookPoint::kPreAttention ? pre : post)++;
    layers_seen[static_cast<std::size_t>(l)]++;
  };
  forward(default_model(), tokens, &counter);
  EXPECT_EQ(pre, 4 * 8);
  EXPECT_EQ(post, 4 * 8);
  for (int c : layers_seen) EXPECT_EQ(c, 16);
}

TEST(Forward, InputErrors) {
  const std::vector<int> bad{3, 999};
  EXPECT_EQ(error_kind_of([&] { forward(default_model(), bad); }), ErrorKind::kInput);
  EXPECT_EQ(error_kind_of([&] { forward(default_model(), std::vector<int>{}); }), ErrorKind::kInput);
}

TEST(Forward, CaptureWithHookReadsPostHookValues) {
  const std::vector<int> tokens{3, 40, 41, 4, 5, 6, 7, 8};
  const int offs[] = {-1};
  CaptureRequest req{"s", offs};
  const ResidualHook zero = [](HookPoint, int, std::span<double> x) {
    for (auto& v : x) v = 0.0;
  };
  const auto res = forward(default_model(), tokens, &zero, &req);
  ASSERT_EQ(res.activations.size(), 4u);
  for (float v : res.activations[2].vector) EXPECT_EQ(v, 0.0f);
}

TEST(Forward, SingleTokenCaptureAtOnlyPosition) {
  const std::vector<int> tokens{token::kBos};
  const int offs[] = {-1};
  CaptureRequest req{"one", offs};
  const auto res = forward(default_model(), tokens, nullptr, &req);
  ASSERT_EQ(res.activations.size(), 4u);
  const auto& m = default_model();
  for (int k = 0; k < 32; ++k) {
    const double expected = m.token_embedding[token::kBos * 32 + k] + m.position_embedding[k];
    EXPECT_EQ(res.activations[0].vector[static_cast<std::size_t>(k)], static_cast<float>(expected));
  }
  const int too_deep[] = {-2};
  CaptureRequest deep{"one", too_deep};
  EXPECT_EQ(error_kind_of([&] { forward(default_model(), tokens, nullptr, &deep); }), ErrorKind::kInput);
}

TEST(RenderTokens, LayoutAndTemplateSuffix) {
  const auto& m = default_model();
  const auto toks = render_tokens(m, sample("x", "one two three"));
  ASSERT_EQ(toks.size(), 1u + 4u + 3u + 5u);
  EXPECT_EQ(toks.front(), token::kBos);
  for (int j = 0; j < 5; ++j) EXPECT_EQ(toks[toks.size() - 5 + static_cast<std::size_t>(j)], token::kTemplateBase + j);
  for (std::size_t k = 1; k < toks.size() - 5; ++k) EXPECT_GE(toks[k], m.content_base());
  EXPECT_EQ(toks[5], content_token(m, "one"));
}

TEST(RecordActivations, CountsAndOrdering) {
  const auto m = init_toy_model(3, 3, 16, 2, 64);
  std::vector<SampleRecord> samples{sample("b", "cat"), sample("a", "dog dog")};
  const int offs[] = {-1, -2};
  const auto c = record_activations(m, samples, offs);
  EXPECT_EQ(c.size(), 12u);
  EXPECT_EQ(c.records().front().sample_id, "a");
  EXPECT_EQ(c.geometry().num_layers, 3);
  EXPECT_EQ(c.geometry().post_instruction_offsets, (std::vector<int>{-1, -2}));
}

TEST(RecordActivations, MatchesOneForwardPerKey) {
  const auto m = init_toy_model(5, 3, 16, 4, 64);
  std::vector<SampleRecord> samples{sample("s1", "a b c"), sample("s2", "dog"), sample("s3", "x y z w")};
  const int offs[] = {-1, -3, -5};
  const auto c = record_activations(m, samples, offs, 2);
  for (const auto& s : samples) {
    const auto toks = render_tokens(m, s);
    for (int off : offs) {
      const int single[] = {off};
      CaptureRequest req{s.sample_id, single};
      const auto acts = forward(m, toks, nullptr, &req).activations;
      for (const auto& rec : acts) {
        EXPECT_EQ(c.at(s.sample_id, static_cast<int>(rec.layer), off).vector, rec.vector);
      }
    }
  }
}

TEST(RecordActivations, TooShortListsSampleIds) {
  const auto m = init_toy_model(5, 2, 16, 4, 64);
  std::vector<SampleRecord> samples{sample("shorty", ""), sample("other", "")};
  const int offs[] = {-1, -40};
  try {
    record_activations(m, samples, offs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInput);
    EXPECT_NE(std::string(e.what()).find("shorty"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("other"), std::string::npos);
  }
}

TEST(AnswerProbabilities, SoftmaxOverThreeTokens) {
  const auto eq = answer_probs_from_logits(0.3, 0.3, 0.3);
  EXPECT_NEAR(eq.yes, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(eq.no, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(eq.unc, 1.0 / 3.0, 1e-15);
  const auto p = answer_probs_from_logits(std::log(7.0), std::log(2.0), std::log(1.0));
  EXPECT_NEAR(p.yes, 0.7, 1e-15);
  EXPECT_NEAR(p.no, 0.2, 1e-15);
  EXPECT_NEAR(p.unc, 0.1, 1e-15);
  Rng rng(99);
  for (int k = 0; k < 1000; ++k) {
    const auto r = answer_probs_from_logits(rng.normal() * 20, rng.normal() * 20, rng.normal() * 20);
    EXPECT_NEAR(r.yes + r.no + r.unc, 1.0, 1e-9);
  }
}

TEST(AnswerProbabilities, IgnoresNonAnswerLogits) {
  auto m = default_model();
  const auto s = sample("z", "tree house");
  const auto before = answer_probabilities(m, s);
  m.output_bias[100] += 50.0;
  const auto after = answer_probabilities(m, s);
  EXPECT_EQ(before, after);
}

// ---- synthetic generator ----

TEST(GenerateSynthetic, NoiselessPairDiffersByShift) {
  SyntheticSpec spec;
  spec.d_model = 16;
  spec.planted_direction = random_unit_vector(16, 4);
  spec.shift_magnitude = 2.5;
  spec.noise_sigma = 0.0;
  spec.samples_per_class = 1;
  const auto set = generate_synthetic(spec);
  const auto& h = set.container.at(set.hallucinated_ids[0], 0, -1).vector;
  const auto& n = set.container.at(set.nh_ids[0], 0, -1).vector;
  for (std::size_t k = 0; k < 16; ++k) {
    // Stored as f32: allow one rounding of each endpoint.
    const double tol = 2.0 * std::ldexp(1.0, -24) * (std::abs(h[k]) + std::abs(n[k]));
    EXPECT_NEAR(static_cast<double>(h[k]) - n[k], 2.5 * spec.planted_direction[k], tol);
  }
}

TEST(GenerateSynthetic, EmpiricalMeanDifferenceWithinThreeSigma) {
  SyntheticSpec spec;
  spec.d_model = 64;
  spec.planted_direction = random_unit_vector(64, 8);
  spec.shift_magnitude = 1.0;
  spec.noise_sigma = 0.1;
  spec.samples_per_class = 200;
  spec.seed = 3;
  const auto set = generate_synthetic(spec);
  std::vector<double> mh(64, 0.0), mn(64, 0.0);
  for (const auto& id : set.hallucinated_ids) {
    const auto& v = set.container.at(id, 0, -1).vector;
    for (std::size_t k = 0; k < 64; ++k) mh[k] += v[k] / 200.0;
  }
  for (const auto& id : set.nh_ids) {
    const auto& v = set.container.at(id, 0, -1).vector;
    for (std::size_t k = 0; k < 64; ++k) mn[k] += v[k] / 200.0;
  }
  // Difference of two means has sd sigma*sqrt(2/n); 3 sd bound per coordinate
  // with a small allowance for 64 simultaneous coordinates.
  const double bound = 4.0 * 0.1 * std::sqrt(2.0 / 200.0);
  for (std::size_t k = 0; k < 64; ++k) EXPECT_NEAR(mh[k] - mn[k], spec.planted_direction[k], bound);
}

TEST(GenerateSynthetic, NullShiftMeanDifferenceShrinks) {
  SyntheticSpec spec;
  spec.d_model = 32;
  spec.planted_direction = random_unit_vector(32, 1);
  spec.shift_magnitude = 0.0;
  spec.noise_sigma = 1.0;
  double previous = INFINITY;
  for (int n : {10, 100, 1000}) {
    spec.samples_per_class = n;
    const auto set = generate_synthetic(spec);
    const auto r = diff_in_means(set.container, set.hallucinated_ids, set.nh_ids, 0, -1, DirType::kOh);
    EXPECT_LT(r.raw_norm, previous);
    EXPECT_LT(r.raw_norm, 6.0 * std::sqrt(2.0 * 32.0 / n));
    previous = r.raw_norm;
  }
}

TEST(GenerateSynthetic, RejectsNonUnitDirection) {
  SyntheticSpec spec;
  spec.d_model = 2;
  spec.planted_direction = {1.0, 1.0};
  EXPECT_EQ(error_kind_of([&] { generate_synthetic(spec); }), ErrorKind::kContract);
}

TEST(PlantAnswerDirection, MarkerRaisesYesProbability) {
  const auto tb = testing::planted_testbed();
  double with_marker = 0.0, without = 0.0;
  int nh = 0, h = 0;
  for (const auto& s : tb.samples) {
    const auto p = answer_probabilities(tb.model, s);
    if (s.gold_hallucinated) {
      with_marker += p.yes;
      ++h;
    } else {
      without += p.yes;
      ++nh;
    }
  }
  EXPECT_GT(with_marker / h, without / nh + 0.1);
}

}  // namespace
}  // namespace steerlab
