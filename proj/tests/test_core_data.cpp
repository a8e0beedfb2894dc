// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "fixtures.hpp"
#include "steerlab/container.hpp"
#include "steerlab/dataset.hpp"

namespace steerlab {
namespace {

using testing::error_kind_of;
using testing::TempDir;

ModelGeometry geom(int layers, int d) { return ModelGeometry{layers, d, {-1, -2}}; }

std::vector<ActivationRecord> three_records() {
  return {{"a", 0, -1, {1.0f, -2.5f, 0.0f}}, {"b", 1, -2, {-0.0f, 3.25f, 1e-30f}}, {"a", 1, -1, {7.0f, 8.0f, 9.0f}}};
}

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (std::bit_cast<std::uint32_t>(a[k]) != std::bit_cast<std::uint32_t>(b[k])) return false;
  }
  return true;
}

TEST(ActivationContainer, EmptyContainerIsHeaderOnly) {
  TempDir dir;
  const auto bytes = write_activation_container({}, geom(2, 4), dir / "empty.actv");
  EXPECT_EQ(bytes, kContainerHeaderSize);
  const auto back = read_activation_container(dir / "empty.actv");
  EXPECT_TRUE(back.empty());
  EXPECT_EQ(back.geometry().num_layers, 2);
  EXPECT_EQ(back.geometry().d_model, 4);
}

TEST(ActivationContainer, SingleRecordRoundTripsBitwise) {
  TempDir dir;
  std::vector<ActivationRecord> recs{{"s0", 0, -1, {1.0f, 2.0f}}};
  write_activation_container(recs, geom(1, 2), dir / "one.actv");
  const auto back = read_activation_container(dir / "one.actv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_TRUE(bitwise_equal(back.records()[0].vector, recs[0].vector));
}

TEST(ActivationContainer, HeaderLayoutIsLittleEndian) {
  const auto bytes = encode_activation_container(three_records(), geom(2, 3));
  ASSERT_GE(bytes.size(), kContainerHeaderSize);
  EXPECT_EQ(bytes.substr(0, 4), "ACTV");
  auto u8 = [&](std::size_t i) { return static_cast<unsigned char>(bytes[i]); };
  EXPECT_EQ(u8(4), 1);  // version
  EXPECT_EQ(u8(8), 3);  // d_model
  EXPECT_EQ(u8(12), 2); // num_layers
  EXPECT_EQ(u8(16), 3); // count
  // first record: id length 1, 'a', layer 0, offset -1 as i32 LE.
  EXPECT_EQ(u8(24), 1);
  EXPECT_EQ(bytes[26], 'a');
  EXPECT_EQ(u8(31), 0xFF);
  EXPECT_EQ(u8(34), 0xFF);
  EXPECT_EQ(bytes.size(), kContainerHeaderSize + 3 * (2 + 1 + 4 + 4 + 12));
}

TEST(ActivationContainer, ThreeRecordFixtureReadsBack) {
  const auto recs = three_records();
  const auto back = decode_activation_container(encode_activation_container(recs, geom(2, 3)));
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t k = 0; k < recs.size(); ++k) {
    EXPECT_EQ(back.records()[k].sample_id, recs[k].sample_id);
    EXPECT_TRUE(bitwise_equal(back.records()[k].vector, recs[k].vector));
  }
  EXPECT_EQ(back.geometry().post_instruction_offsets, (std::vector<int>{-1, -2}));
}

TEST(ActivationContainer, RandomRecordsRoundTripIgnoringOrder) {
  Rng rng(2024);
  const int d = 8;
  std::vector<ActivationRecord> recs;
  const float specials[] = {0.0f, -0.0f, std::numeric_limits<float>::max(), std::numeric_limits<float>::lowest(),
                            std::numeric_limits<float>::denorm_min(), std::numeric_limits<float>::min()};
  for (int i = 0; i < 1000; ++i) {
    ActivationRecord r{"sample-" + std::to_string(i / 5), static_cast<std::uint32_t>(i % 5), -1 - (i % 3), {}};
    r.sample_id += "-" + std::to_string(i);
    for (int k = 0; k < d; ++k) {
      r.vector.push_back(rng.below(10) == 0 ? specials[rng.below(6)] : static_cast<float>(rng.normal() * 100.0));
    }
    recs.push_back(std::move(r));
  }
  auto shuffled = recs;
  for (std::size_t k = shuffled.size(); k > 1; --k) std::swap(shuffled[k - 1], shuffled[rng.below(k)]);

  const auto back = decode_activation_container(encode_activation_container(shuffled, geom(5, d)));
  ASSERT_EQ(back.size(), recs.size());
  for (const auto& r : recs) {
    const auto* got = back.find(r.sample_id, static_cast<int>(r.layer), r.offset);
    ASSERT_NE(got, nullptr);
    EXPECT_TRUE(bitwise_equal(got->vector, r.vector)) << r.sample_id;
  }
}

TEST(ActivationContainer, RejectsMismatchedWidthAndDuplicates) {
  std::vector<ActivationRecord> wide{{"a", 0, -1, {1.0f, 2.0f, 3.0f}}};
  EXPECT_EQ(error_kind_of([&] { encode_activation_container(wide, geom(1, 2)); }), ErrorKind::kFormat);
  std::vector<ActivationRecord> dup{{"a", 0, -1, {1.0f, 2.0f}}, {"a", 0, -1, {3.0f, 4.0f}}};
  EXPECT_EQ(error_kind_of([&] { encode_activation_container(dup, geom(1, 2)); }), ErrorKind::kDuplicateKey);
  std::vector<ActivationRecord> nonneg{{"a", 0, 0, {1.0f, 2.0f}}};
  EXPECT_EQ(error_kind_of([&] { encode_activation_container(nonneg, geom(1, 2)); }), ErrorKind::kFormat);
}

TEST(ActivationContainer, UnsupportedVersionAndMagic) {
  auto bytes = encode_activation_container(three_records(), geom(2, 3));
  auto bad_version = bytes;
  bad_version[4] = static_cast<char>(999 & 0xFF);
  bad_version[5] = static_cast<char>(999 >> 8);
  EXPECT_EQ(error_kind_of([&] { decode_activation_container(bad_version); }), ErrorKind::kUnsupportedFormat);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(error_kind_of([&] { decode_activation_container(bad_magic); }), ErrorKind::kUnsupportedFormat);
}

TEST(ActivationContainer, EveryTruncationPastHeaderIsCorruption) {
  const auto bytes = encode_activation_container(three_records(), geom(2, 3));
  for (std::size_t k = kContainerHeaderSize; k < bytes.size(); ++k) {
    EXPECT_EQ(error_kind_of([&] { decode_activation_container(std::string_view(bytes).substr(0, k)); }),
              ErrorKind::kCorruption)
        << "truncated at " << k;
  }
  for (std::size_t k = 4; k < kContainerHeaderSize; ++k) {
    EXPECT_TRUE(error_kind_of([&] { decode_activation_container(std::string_view(bytes).substr(0, k)); }));
  }
  EXPECT_EQ(error_kind_of([&] { decode_activation_container(bytes + "x"); }), ErrorKind::kCorruption);
}

TEST(ActivationContainer, MissingFileIsIOError) {
  EXPECT_EQ(error_kind_of([] { read_activation_container("/nonexistent/dir/x.actv"); }), ErrorKind::kIO);
}

TEST(ModelGeometry, Validation) {
  EXPECT_NO_THROW((ModelGeometry{4, 8, {-1, -2}}.validate()));
  EXPECT_EQ(error_kind_of([] { ModelGeometry{4, 8, {-1, -1}}.validate(); }), ErrorKind::kConfig);
  EXPECT_EQ(error_kind_of([] { ModelGeometry{4, 8, {0}}.validate(); }), ErrorKind::kConfig);
  EXPECT_EQ(error_kind_of([] { ModelGeometry{4, 8, {}}.validate(); }), ErrorKind::kConfig);
  EXPECT_EQ(error_kind_of([] { ModelGeometry{0, 8, {-1}}.validate(); }), ErrorKind::kConfig);
}

// ---- dataset ----

TEST(Dataset, EmptyFileIsEmptyList) {
  EXPECT_TRUE(decode_dataset("").empty());
  EXPECT_TRUE(decode_dataset("\n\n").empty());
}

TEST(Dataset, FourAnnotationsRejected) {
  auto rec = testing::annotated("x1", 3, {1, 2, 3, 4, 5});
  rec.verifiability = Verifiability::kObvious;
  rec.annotations.pop_back();
  const auto line = to_json(rec).dump();
  try {
    decode_dataset(line);
    FAIL() << "expected validation error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
    EXPECT_NE(std::string(e.what()).find("annotations"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("x1"), std::string::npos);
  }
}

TEST(Dataset, VerifiabilityMustMatchGoldLabel) {
  auto rec = testing::annotated("x2", 5, {1, 2, 3, 4, 5});
  rec.verifiability = Verifiability::kNonHallucinated;
  EXPECT_EQ(error_kind_of([&] { decode_dataset(to_json(rec).dump()); }), ErrorKind::kValidation);
  SampleRecord nh{"x3", "i", "d", false, Verifiability::kObvious, Split::kUnassigned, {}};
  EXPECT_EQ(error_kind_of([&] { decode_dataset(to_json(nh).dump()); }), ErrorKind::kValidation);
  SampleRecord hall_no_ann{"x4", "i", "d", true, Verifiability::kObvious, Split::kUnassigned, {}};
  EXPECT_EQ(error_kind_of([&] { decode_dataset(to_json(hall_no_ann).dump()); }), ErrorKind::kValidation);
}

TEST(Dataset, RawModeAcceptsMissingAndLongTimes) {
  auto rec = testing::annotated("r1", 3, {1, 2, 3, 4, 20});
  rec.annotations[0].response_time_s.reset();
  const auto text = to_json(rec).dump();
  EXPECT_EQ(error_kind_of([&] { decode_dataset(text, DatasetMode::kStrict); }), ErrorKind::kValidation);
  const auto raw = decode_dataset(text, DatasetMode::kRaw);
  ASSERT_EQ(raw.size(), 1u);
  EXPECT_FALSE(raw[0].annotations[0].response_time_s.has_value());
  EXPECT_EQ(raw[0].annotations[4].response_time_s, 20.0);
}

TEST(Dataset, FullSizedFixtureRoundTripsWithCounts) {
  TempDir dir;
  const auto records = testing::full_sized_dataset();
  write_dataset(records, dir / "d.jsonl");
  const auto back = read_dataset(dir / "d.jsonl");
  ASSERT_EQ(back.size(), 1259u);
  std::map<Verifiability, int> counts;
  for (const auto& r : back) ++counts[r.verifiability];
  EXPECT_EQ(counts[Verifiability::kNonHallucinated], 689);
  EXPECT_EQ(counts[Verifiability::kObvious], 351);
  EXPECT_EQ(counts[Verifiability::kElusive], 219);
}

TEST(Dataset, UnknownFieldsSurviveAndWriteIsIdempotent) {
  const std::string line =
      R"({"sample_id":"u1","annotator_batch":7,"image_ref":"im","description":"a dog","gold_hallucinated":false,)"
      R"("verifiability":"non_hallucinated","split":"val","annotations":[],"notes":{"k":[1,2]}})";
  const auto recs = decode_dataset(line);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].extra["annotator_batch"], 7);
  EXPECT_EQ(recs[0].extra["notes"]["k"][1], 2);

  const auto once = encode_dataset(recs);
  const auto twice = encode_dataset(decode_dataset(once));
  EXPECT_EQ(once, twice);
  EXPECT_NE(once.find("\"notes\":{\"k\":[1,2]}"), std::string::npos);

  const auto big = encode_dataset(testing::full_sized_dataset());
  EXPECT_EQ(encode_dataset(decode_dataset(big)), big);
}

TEST(Dataset, DuplicateIdsAndBadJsonRejected) {
  SampleRecord nh{"d1", "i", "d", false, Verifiability::kNonHallucinated, Split::kTrain, {}};
  const auto line = to_json(nh).dump();
  EXPECT_EQ(error_kind_of([&] { decode_dataset(line + "\n" + line); }), ErrorKind::kValidation);
  EXPECT_EQ(error_kind_of([&] { decode_dataset("{not json"); }), ErrorKind::kValidation);
  EXPECT_EQ(error_kind_of([&] { decode_dataset(R"({"sample_id":"q","image_ref":"i","description":"d",)"
                                              R"("gold_hallucinated":false,"verifiability":"sorta"})"); }),
            ErrorKind::kValidation);
}

}  // namespace
}  // namespace steerlab
