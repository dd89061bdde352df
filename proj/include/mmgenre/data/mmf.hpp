// SPDX-License-Identifier: Apache-2.0
#pragma once

// MMF feature container, little-endian throughout:
//   magic "MMF1" | version u16 | modality count u16 |
//   per modality (ascending by name):
//     name length u8 | name bytes | T u32 | D u32 | T·D float32 row-major

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mmgenre/data/record.hpp"
#include "mmgenre/error.hpp"

namespace mmgenre::mmf {

inline constexpr char kMagic[4] = {'M', 'M', 'F', '1'};
inline constexpr std::uint16_t kVersion = 1;

using Features = std::map<std::string, FeatureSequence>;

namespace detail {

template <class U>
void put(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }

  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void need(std::uint64_t n, const char* what) const {
    if (n > bytes_.size() - pos_)
      throw FormatError(std::string("truncated MMF data: ") + what + " needs " + std::to_string(n) +
                            " bytes, " + std::to_string(bytes_.size() - pos_) + " remain",
                        pos_);
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::uint8_t* here() const { return bytes_.data() + pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode(const Features& features) {
  if (features.size() > UINT16_MAX) throw DataError("too many modalities for MMF");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  detail::put<std::uint16_t>(out, kVersion);
  detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(features.size()));
  for (const auto& [name, seq] : features) {  // std::map iterates ascending by name
    if (name.empty() || name.size() > 255) throw DataError("MMF modality name must be 1..255 bytes");
    if (seq.rank() != 2) throw DataError("MMF modality " + name + " must be T x D");
    if (seq.dim(0) > UINT32_MAX || seq.dim(1) > UINT32_MAX) throw DataError("MMF dimension overflow");
    out.push_back(static_cast<std::uint8_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(seq.dim(0)));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(seq.dim(1)));
    for (float v : seq.data()) detail::put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline Features decode(std::span<const std::uint8_t> bytes) {
  detail::Reader in(bytes);
  const std::string magic = in.get_string(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad MMF magic '" + magic + "'", 0);
  const std::size_t version_at = in.pos();
  const auto version = in.get<std::uint16_t>("version");
  if (version != kVersion)
    throw FormatError("unsupported MMF version " + std::to_string(version), version_at);
  const auto count = in.get<std::uint16_t>("modality count");
  Features out;
  std::string previous;
  for (std::uint16_t m = 0; m < count; ++m) {
    const std::size_t entry_at = in.pos();
    const auto len = in.get<std::uint8_t>("name length");
    if (len == 0) throw FormatError("empty modality name", entry_at);
    std::string name = in.get_string(len, "modality name");
    if (m > 0 && !(previous < name))
      throw FormatError("modality '" + name + "' out of order or duplicated", entry_at);
    const std::size_t dims_at = in.pos();
    const std::uint64_t T = in.get<std::uint32_t>("T");
    const std::uint64_t D = in.get<std::uint32_t>("D");
    const std::uint64_t count_values = T * D;  // < 2^64 since both < 2^32
    if (count_values > in.remaining() / 4)
      throw FormatError("modality '" + name + "' declares " + std::to_string(T) + "x" +
                            std::to_string(D) + " floats, exceeding the " +
                            std::to_string(in.remaining()) + " bytes left",
                        dims_at);
    FeatureSequence seq({static_cast<std::size_t>(T), static_cast<std::size_t>(D)});
    const std::uint8_t* p = in.here();
    for (std::size_t i = 0; i < count_values; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[4 * i + b]) << (8 * b);
      seq[i] = std::bit_cast<float>(bits);
    }
    in.skip(static_cast<std::size_t>(count_values * 4));
    previous = name;
    out.emplace(std::move(name), std::move(seq));
  }
  if (in.remaining() != 0) throw FormatError("trailing bytes after last modality", in.pos());
  return out;
}

inline void write(const Features& features, const std::filesystem::path& path) {
  const auto bytes = encode(features);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("failed writing " + path.string());
}

inline void write(const VideoRecord& record, const std::filesystem::path& path) {
  write(record.features, path);
}

inline Features read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return decode(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.message(), e.offset());
  }
}

}  // namespace mmgenre::mmf
