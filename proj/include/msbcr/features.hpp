#pragma once

// Per-slide feature container.
//
// Layout (little-endian):
//   magic   "MSWF"  (4 bytes)
//   version u16 = 1
//   reserved u16 = 0
//   n       u32     patch count
//   dim     u32     embedding width
//   features n*dim f32, row-major
//   coords   n*2   f32, (x, y) level-0 pixel centers of 512x512 patches

#include <cstring>
#include <type_traits>

#include "msbcr/common.hpp"

namespace msbcr {

struct FeatureBlock {
  MatF features;  // n x dim
  MatF coords;    // n x 2

  std::size_t n() const { return features.rows; }
  std::size_t dim() const { return features.cols; }

  void validate() const {
    require(features.rows >= 1, "feature block: n must be >= 1");
    require(coords.rows == features.rows, "feature block: coords row count must equal n");
    require(coords.cols == 2, "feature block: coords must have 2 columns");
    if (!features.all_finite() || !coords.all_finite())
      throw DataError("feature block: values must be finite");
  }
};

namespace detail {

constexpr char kFeatureMagic[4] = {'M', 'S', 'W', 'F'};
constexpr std::uint16_t kFeatureVersion = 1;

}  // namespace detail

inline void write_feature_block(const FeatureBlock& block, const std::filesystem::path& path) {
  block.validate();
  std::string bytes;
  bytes.reserve(16 + 4 * (block.features.data.size() + block.coords.data.size()));
  bytes.append(detail::kFeatureMagic, 4);
  detail::put_le<std::uint16_t>(bytes, detail::kFeatureVersion);
  detail::put_le<std::uint16_t>(bytes, 0);
  detail::put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(block.n()));
  detail::put_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(block.dim()));
  for (float v : block.features.data) detail::put_le<float>(bytes, v);
  for (float v : block.coords.data) detail::put_le<float>(bytes, v);
  write_file_atomic(path, bytes);
}

inline FeatureBlock read_feature_block(const std::filesystem::path& path) {
  std::string bytes = read_file(path);
  std::size_t off = 0;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), detail::kFeatureMagic, 4) != 0)
    throw FormatError(path.string() + ": bad magic, not a feature container");
  off = 4;
  auto version = detail::get_le<std::uint16_t>(bytes, off, "version");
  if (version != detail::kFeatureVersion)
    throw FormatError(path.string() + ": unsupported container version " + std::to_string(version));
  detail::get_le<std::uint16_t>(bytes, off, "reserved");
  auto n = detail::get_le<std::uint32_t>(bytes, off, "n");
  auto dim = detail::get_le<std::uint32_t>(bytes, off, "dim");
  if (n < 1) throw FormatError(path.string() + ": n must be >= 1");

  std::size_t payload = static_cast<std::size_t>(n) * dim + static_cast<std::size_t>(n) * 2;
  if (off + payload * sizeof(float) > bytes.size())
    throw FormatError(path.string() + ": truncated payload (declared n=" + std::to_string(n) +
                      ", dim=" + std::to_string(dim) + ")");

  FeatureBlock block;
  block.features = MatF(n, dim);
  block.coords = MatF(n, 2);
  for (float& v : block.features.data) v = detail::get_le<float>(bytes, off, "features");
  for (float& v : block.coords.data) v = detail::get_le<float>(bytes, off, "coords");
  if (!block.features.all_finite() || !block.coords.all_finite())
    throw FormatError(path.string() + ": non-finite values in payload");
  return block;
}

}  // namespace msbcr
