// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary activation container.
//
//   "ACTV" | version u32 | d_model u32 | num_layers u32 | count u64
//   per record: id_len u16 | id bytes | layer u32 | offset i32 | d_model x f32
//
// All integers and floats are little-endian.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "steerlab/error.hpp"
#include "steerlab/io.hpp"
#include "steerlab/types.hpp"

namespace steerlab {

inline constexpr std::string_view kContainerMagic = "ACTV";
inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kContainerHeaderSize = 4 + 4 + 4 + 4 + 8;

struct ActivationKey {
  std::string sample_id;
  int layer = 0;
  int offset = -1;

  auto operator<=>(const ActivationKey&) const = default;
};

inline std::string describe(const ActivationKey& key) {
  return "(" + key.sample_id + ", layer " + std::to_string(key.layer) + ", offset " +
         std::to_string(key.offset) + ")";
}

// Records plus a keyed index. Insertion order is kept; lookups are by key.
class ActivationContainer {
 public:
  ActivationContainer() = default;
  explicit ActivationContainer(ModelGeometry geometry) : geometry_(std::move(geometry)) {}

  const ModelGeometry& geometry() const noexcept { return geometry_; }
  const std::vector<ActivationRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  void add(ActivationRecord record) {
    check_conforms(record, geometry_);
    ActivationKey key{record.sample_id, static_cast<int>(record.layer), record.offset};
    if (index_.contains(key)) raise(ErrorKind::kDuplicateKey, "duplicate activation key " + describe(key));
    index_.emplace(std::move(key), records_.size());
    records_.push_back(std::move(record));
  }

  const ActivationRecord* find(std::string_view sample_id, int layer, int offset) const {
    auto it = index_.find(ActivationKey{std::string(sample_id), layer, offset});
    return it == index_.end() ? nullptr : &records_[it->second];
  }

  const ActivationRecord& at(std::string_view sample_id, int layer, int offset) const {
    if (const auto* rec = find(sample_id, layer, offset)) return *rec;
    raise(ErrorKind::kMissingRecord,
          "no activation for " + describe(ActivationKey{std::string(sample_id), layer, offset}));
  }

  static void check_conforms(const ActivationRecord& record, const ModelGeometry& geometry) {
    if (record.vector.size() != static_cast<std::size_t>(geometry.d_model)) {
      raise(ErrorKind::kFormat, "record '" + record.sample_id + "' has " + std::to_string(record.vector.size()) +
                                    " values, container d_model is " + std::to_string(geometry.d_model));
    }
    if (record.offset >= 0) {
      raise(ErrorKind::kFormat, "record '" + record.sample_id + "' offset " + std::to_string(record.offset) +
                                    " is not strictly negative");
    }
    if (record.layer >= static_cast<std::uint32_t>(geometry.num_layers)) {
      raise(ErrorKind::kFormat, "record '" + record.sample_id + "' layer " + std::to_string(record.layer) +
                                    " outside [0, " + std::to_string(geometry.num_layers) + ")");
    }
    if (record.sample_id.size() > UINT16_MAX) {
      raise(ErrorKind::kFormat, "sample_id longer than 65535 bytes");
    }
  }

 private:
  ModelGeometry geometry_;
  std::vector<ActivationRecord> records_;
  std::map<ActivationKey, std::size_t> index_;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto bits = static_cast<U>(value);
  for (std::size_t k = 0; k < sizeof(T); ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    using U = std::make_unsigned_t<T>;
    U bits = 0;
    for (std::size_t k = 0; k < sizeof(T); ++k) {
      bits |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + k])) << (8 * k);
    }
    pos_ += sizeof(T);
    return static_cast<T>(bits);
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto view = bytes_.substr(pos_, n);
    pos_ += n;
    return view;
  }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      raise(ErrorKind::kCorruption, "container truncated at byte " + std::to_string(bytes_.size()));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_activation_container(std::span<const ActivationRecord> records,
                                               const ModelGeometry& geometry) {
  std::set<ActivationKey> keys;
  for (const auto& rec : records) {
    ActivationContainer::check_conforms(rec, geometry);
    if (!keys.insert({rec.sample_id, static_cast<int>(rec.layer), rec.offset}).second) {
      raise(ErrorKind::kDuplicateKey,
            "duplicate activation key " + describe({rec.sample_id, static_cast<int>(rec.layer), rec.offset}));
    }
  }
  std::string out;
  out.reserve(kContainerHeaderSize + records.size() * (16 + 4 * static_cast<std::size_t>(geometry.d_model)));
  out.append(kContainerMagic);
  detail::put_le<std::uint32_t>(out, kContainerVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(geometry.d_model));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(geometry.num_layers));
  detail::put_le<std::uint64_t>(out, records.size());
  for (const auto& rec : records) {
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(rec.sample_id.size()));
    out.append(rec.sample_id);
    detail::put_le<std::uint32_t>(out, rec.layer);
    detail::put_le<std::int32_t>(out, rec.offset);
    for (float v : rec.vector) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

// The file carries no offset list; the decoded geometry lists the distinct
// offsets present, nearest-to-end first.
inline ActivationContainer decode_activation_container(std::string_view bytes) {
  if (bytes.size() < kContainerMagic.size() || bytes.substr(0, kContainerMagic.size()) != kContainerMagic) {
    raise(ErrorKind::kUnsupportedFormat, "missing ACTV magic");
  }
  detail::Reader in(bytes.substr(kContainerMagic.size()));
  const auto version = in.get_le<std::uint32_t>();
  if (version != kContainerVersion) {
    raise(ErrorKind::kUnsupportedFormat, "container version " + std::to_string(version));
  }
  ModelGeometry geometry;
  geometry.d_model = static_cast<int>(in.get_le<std::uint32_t>());
  geometry.num_layers = static_cast<int>(in.get_le<std::uint32_t>());
  const auto count = in.get_le<std::uint64_t>();
  if (geometry.d_model < 1 || geometry.num_layers < 1) raise(ErrorKind::kCorruption, "zero-sized geometry");

  const std::size_t min_record = 2 + 4 + 4 + 4 * static_cast<std::size_t>(geometry.d_model);
  if (count > in.remaining() / min_record) raise(ErrorKind::kCorruption, "record count exceeds payload");

  std::vector<ActivationRecord> records;
  records.reserve(count);
  std::set<int> offsets;
  for (std::uint64_t r = 0; r < count; ++r) {
    ActivationRecord rec;
    const auto id_len = in.get_le<std::uint16_t>();
    rec.sample_id = std::string(in.take(id_len));
    rec.layer = in.get_le<std::uint32_t>();
    rec.offset = in.get_le<std::int32_t>();
    rec.vector.resize(static_cast<std::size_t>(geometry.d_model));
    for (auto& v : rec.vector) v = std::bit_cast<float>(in.get_le<std::uint32_t>());
    offsets.insert(rec.offset);
    records.push_back(std::move(rec));
  }
  if (in.remaining() != 0) raise(ErrorKind::kCorruption, "trailing bytes after last record");

  geometry.post_instruction_offsets.assign(offsets.rbegin(), offsets.rend());
  ActivationContainer container(geometry);
  for (auto& rec : records) {
    try {
      container.add(std::move(rec));
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kDuplicateKey) throw;
      raise(ErrorKind::kCorruption, e.what());
    }
  }
  return container;
}

inline std::size_t write_activation_container(std::span<const ActivationRecord> records,
                                              const ModelGeometry& geometry, const std::filesystem::path& path) {
  const auto bytes = encode_activation_container(records, geometry);
  io::write_file_atomic(path, bytes);
  return bytes.size();
}

inline std::size_t write_activation_container(const ActivationContainer& container,
                                              const std::filesystem::path& path) {
  return write_activation_container(container.records(), container.geometry(), path);
}

inline ActivationContainer read_activation_container(const std::filesystem::path& path) {
  return decode_activation_container(io::read_file(path));
}

}  // namespace steerlab
