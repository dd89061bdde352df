// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reader for NumPy .npy arrays (format versions 1.0, 2.0 and 3.0) holding
// little-endian float32 or float64 data.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <regex>
#include <string>
#include <vector>

#include "mmgenre/error.hpp"
#include "mmgenre/tensor.hpp"

namespace mmgenre::npy {

struct Header {
  std::uint8_t major = 1;
  std::uint8_t minor = 0;
  std::string descr;
  bool fortran_order = false;
  Shape shape;
  std::size_t data_offset = 0;
};

inline Header parse_header(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kMagic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, 6) != 0)
    throw FormatError("not an NPY file (bad magic)", 0);
  Header h;
  h.major = bytes[6];
  h.minor = bytes[7];
  std::size_t header_len = 0, pos = 0;
  if (h.major == 1) {
    header_len = bytes[8] | (static_cast<std::size_t>(bytes[9]) << 8);
    pos = 10;
  } else if (h.major == 2 || h.major == 3) {
    if (bytes.size() < 12) throw FormatError("truncated NPY header length", 8);
    header_len = bytes[8] | (static_cast<std::size_t>(bytes[9]) << 8) |
                 (static_cast<std::size_t>(bytes[10]) << 16) | (static_cast<std::size_t>(bytes[11]) << 24);
    pos = 12;
  } else {
    throw FormatError("unsupported NPY version " + std::to_string(h.major) + "." +
                          std::to_string(h.minor),
                      6);
  }
  if (header_len > bytes.size() - pos) throw FormatError("truncated NPY header", pos);
  const std::string dict(reinterpret_cast<const char*>(bytes.data() + pos), header_len);
  h.data_offset = pos + header_len;

  std::smatch m;
  static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
  static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  if (!std::regex_search(dict, m, descr_re)) throw FormatError("NPY header lacks 'descr'", pos);
  h.descr = m[1];
  if (!std::regex_search(dict, m, order_re)) throw FormatError("NPY header lacks 'fortran_order'", pos);
  h.fortran_order = m[1] == "True";
  if (!std::regex_search(dict, m, shape_re)) throw FormatError("NPY header lacks 'shape'", pos);
  const std::string dims = m[1];
  static const std::regex int_re(R"(\d+)");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), int_re); it != std::sregex_iterator(); ++it)
    h.shape.push_back(static_cast<std::size_t>(std::stoull(it->str())));
  return h;
}

/// Decodes a C-order (T, D) float array, narrowing float64 to float32.
/// Rejects other ranks, Fortran order, and non-float or big-endian dtypes.
inline Tensor<float> decode_matrix(std::span<const std::uint8_t> bytes) {
  const Header h = parse_header(bytes);
  if (h.shape.size() != 2)
    throw FormatError("NPY array has rank " + std::to_string(h.shape.size()) + " (shape " +
                          shape_str(h.shape) + "); expected rank 2 (T, D)",
                      h.data_offset);
  if (h.fortran_order)
    throw FormatError("NPY array is in Fortran order; C order is required", h.data_offset);
  std::size_t width = 0;
  if (h.descr == "<f4") width = 4;
  else if (h.descr == "<f8") width = 8;
  else
    throw FormatError("unsupported NPY dtype '" + h.descr + "'; expected '<f4' or '<f8'", h.data_offset);
  const std::size_t n = element_count(h.shape);
  if (n > (bytes.size() - h.data_offset) / width)
    throw FormatError("NPY data truncated: need " + std::to_string(n * width) + " bytes", h.data_offset);
  Tensor<float> out(h.shape);
  const std::uint8_t* p = bytes.data() + h.data_offset;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < width; ++b) bits |= static_cast<std::uint64_t>(p[i * width + b]) << (8 * b);
    out[i] = width == 4 ? std::bit_cast<float>(static_cast<std::uint32_t>(bits))
                        : static_cast<float>(std::bit_cast<double>(bits));
  }
  return out;
}

inline Tensor<float> read_matrix(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return decode_matrix(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.message(), e.offset());
  }
}

/// Encodes a little-endian float32/float64 C-order array (version 1.0).
/// Used by tests and tooling that need to produce NPY input.
template <class T>
std::vector<std::uint8_t> encode(const Shape& shape, std::span<const T> values, bool fortran_order = false) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  std::string dict = std::string("{'descr': '") + (sizeof(T) == 4 ? "<f4" : "<f8") +
                     "', 'fortran_order': " + (fortran_order ? "True" : "False") + ", 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict += std::to_string(shape[i]);
    if (shape.size() == 1) dict += ",";
    else if (i + 1 < shape.size()) dict += ", ";
  }
  dict += "), }";
  const std::size_t total = 10 + dict.size() + 1;
  dict.append((64 - total % 64) % 64, ' ');
  dict += '\n';
  std::vector<std::uint8_t> out = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  out.push_back(static_cast<std::uint8_t>(dict.size() & 0xff));
  out.push_back(static_cast<std::uint8_t>(dict.size() >> 8));
  out.insert(out.end(), dict.begin(), dict.end());
  for (T v : values) {
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    const Bits bits = std::bit_cast<Bits>(v);
    for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  return out;
}

}  // namespace mmgenre::npy
