#pragma once

// MNIST-style IDX files: big-endian headers, unsigned byte payload.

#include "smdlab/model.hpp"

#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

namespace smdlab::io {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for '" + path + "'");
  return bytes;
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

}  // namespace detail

struct IdxImages {
  std::uint32_t count = 0, rows = 0, cols = 0;
  std::vector<unsigned char> pixels;  // count * rows * cols, row-major per image
};

inline IdxImages parse_idx_images(const std::vector<unsigned char>& b, const std::string& what = "images") {
  if (b.size() < 16) throw FormatError(what + ": truncated IDX header");
  if (detail::be32(b, 0) != kIdxImagesMagic) throw FormatError(what + ": bad IDX image magic");
  IdxImages im;
  im.count = detail::be32(b, 4);
  im.rows = detail::be32(b, 8);
  im.cols = detail::be32(b, 12);
  const std::uint64_t need = std::uint64_t{im.count} * im.rows * im.cols;
  if (b.size() - 16 < need) throw FormatError(what + ": truncated IDX image payload");
  im.pixels.assign(b.begin() + 16, b.begin() + 16 + static_cast<std::ptrdiff_t>(need));
  return im;
}

inline std::vector<unsigned char> parse_idx_labels(const std::vector<unsigned char>& b,
                                                   const std::string& what = "labels") {
  if (b.size() < 8) throw FormatError(what + ": truncated IDX header");
  if (detail::be32(b, 0) != kIdxLabelsMagic) throw FormatError(what + ": bad IDX label magic");
  const std::uint32_t count = detail::be32(b, 4);
  if (b.size() - 8 < count) throw FormatError(what + ": truncated IDX label payload");
  return {b.begin() + 8, b.begin() + 8 + count};
}

/// First `count` samples whose label is in the pair; pixels scaled to [0, 1],
/// pair.first -> +1, pair.second -> -1. Fewer matches than `count` returns
/// what exists.
inline Dataset load_idx_subset(const std::string& images_path, const std::string& labels_path, std::size_t count,
                               std::pair<int, int> classes) {
  if (count == 0) throw DataError("load_idx_subset: count = 0 gives an empty dataset");
  if (classes.first == classes.second) throw DataError("load_idx_subset: the class pair must be two distinct labels");
  const IdxImages im = parse_idx_images(detail::read_file(images_path), images_path);
  const auto labels = parse_idx_labels(detail::read_file(labels_path), labels_path);
  if (labels.size() != im.count)
    throw FormatError("load_idx_subset: " + images_path + " has " + std::to_string(im.count) + " images but " +
                      labels_path + " has " + std::to_string(labels.size()) + " labels");
  const std::size_t d = std::size_t{im.rows} * im.cols;
  std::vector<std::size_t> picked;
  bool seen_first = false, seen_second = false;
  for (std::size_t k = 0; k < labels.size() && picked.size() < count; ++k) {
    const int l = labels[k];
    if (l == classes.first) seen_first = true;
    else if (l == classes.second) seen_second = true;
    else continue;
    picked.push_back(k);
  }
  if (!seen_first || !seen_second)
    throw DataError("load_idx_subset: class " + std::to_string(seen_first ? classes.second : classes.first) +
                    " does not occur in the selected subset");
  Dataset ds;
  ds.inputs.resize(static_cast<Eigen::Index>(picked.size()), static_cast<Eigen::Index>(d));
  ds.labels.resize(static_cast<Eigen::Index>(picked.size()));
  for (std::size_t r = 0; r < picked.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    const unsigned char* px = im.pixels.data() + picked[r] * d;
    for (std::size_t j = 0; j < d; ++j) ds.inputs(row, static_cast<Eigen::Index>(j)) = px[j] / 255.0;
    ds.labels[row] = labels[picked[r]] == classes.first ? 1.0 : -1.0;
  }
  return ds;
}

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>((v >> s) & 0xFF));
}

/// Encoders, used to author fixtures.
inline std::vector<unsigned char> encode_idx_images(std::uint32_t rows, std::uint32_t cols,
                                                    const std::vector<unsigned char>& pixels) {
  const std::size_t per = std::size_t{rows} * cols;
  if (per == 0 || pixels.size() % per != 0) throw ArgumentError("encode_idx_images: pixel count mismatch");
  std::vector<unsigned char> b;
  put_be32(b, kIdxImagesMagic);
  put_be32(b, static_cast<std::uint32_t>(pixels.size() / per));
  put_be32(b, rows);
  put_be32(b, cols);
  b.insert(b.end(), pixels.begin(), pixels.end());
  return b;
}

inline std::vector<unsigned char> encode_idx_labels(const std::vector<unsigned char>& labels) {
  std::vector<unsigned char> b;
  put_be32(b, kIdxLabelsMagic);
  put_be32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

}  // namespace smdlab::io
