#pragma once

// Raster types shared by every module, plus their on-disk formats:
//   PPM P6 (images), PGM P5 (label maps), SPSEG1 / CSV (segment maps),
//   SPUNR1 (unary and marginal fields).

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "spcrf/error.hpp"

namespace spcrf {

using Color = std::array<double, 3>;

inline double squared_distance(const Color& a, const Color& b) {
  const double d0 = a[0] - b[0];
  const double d1 = a[1] - b[1];
  const double d2 = a[2] - b[2];
  return d0 * d0 + d1 * d1 + d2 * d2;
}

// W x H RGB raster with real-valued channels in [0, 255], row-major.
class Image {
 public:
  Image() = default;

  Image(std::size_t width, std::size_t height, std::vector<Color> pixels)
      : width_(width), height_(height), pixels_(std::move(pixels)) {
    if (pixels_.size() != width_ * height_) {
      throw DimensionError("Image: pixel count " + std::to_string(pixels_.size()) +
                           " != width*height " + std::to_string(width_ * height_));
    }
    for (const Color& c : pixels_) {
      for (double v : c) {
        if (!(v >= 0.0 && v <= 255.0)) {
          throw RangeError("Image: channel value " + std::to_string(v) + " outside [0,255]");
        }
      }
    }
  }

  Image(std::size_t width, std::size_t height, const Color& fill)
      : Image(width, height, std::vector<Color>(width * height, fill)) {}

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  const Color& operator[](std::size_t i) const { return pixels_[i]; }
  const Color& at(std::size_t x, std::size_t y) const { return pixels_[y * width_ + x]; }
  std::span<const Color> pixels() const { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<Color> pixels_;
};

// Per-pixel superpixel index with contiguous ids 0..S-1.
class SegmentMap {
 public:
  SegmentMap() = default;

  // Requires contiguous ids: every value in [0, S-1] used at least once.
  SegmentMap(std::size_t width, std::size_t height, std::vector<std::uint32_t> indices)
      : width_(width), height_(height), indices_(std::move(indices)) {
    if (indices_.size() != width_ * height_ || indices_.empty()) {
      throw DimensionError("SegmentMap: index count " + std::to_string(indices_.size()) +
                           " != width*height " + std::to_string(width_ * height_));
    }
    std::uint32_t max_id = 0;
    for (auto v : indices_) max_id = std::max(max_id, v);
    std::vector<bool> seen(std::size_t{max_id} + 1, false);
    for (auto v : indices_) seen[v] = true;
    for (std::size_t s = 0; s < seen.size(); ++s) {
      if (!seen[s]) {
        throw RangeError("SegmentMap: segment id " + std::to_string(s) + " unused (ids not contiguous)");
      }
    }
    count_ = std::size_t{max_id} + 1;
  }

  // Relabels arbitrary ids to 0..S-1 in first-occurrence scan order.
  static SegmentMap relabeled(std::size_t width, std::size_t height,
                              std::span<const std::uint64_t> raw) {
    std::unordered_map<std::uint64_t, std::uint32_t> remap;
    std::vector<std::uint32_t> out;
    out.reserve(raw.size());
    for (auto v : raw) {
      auto [it, inserted] = remap.try_emplace(v, static_cast<std::uint32_t>(remap.size()));
      out.push_back(it->second);
    }
    return SegmentMap(width, height, std::move(out));
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t size() const { return indices_.size(); }
  std::size_t segment_count() const { return count_; }

  std::uint32_t operator[](std::size_t i) const { return indices_[i]; }
  std::span<const std::uint32_t> indices() const { return indices_; }

  friend bool operator==(const SegmentMap&, const SegmentMap&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<std::uint32_t> indices_;
  std::size_t count_ = 0;
};

// W x H x L grid of reals, L contiguous values per pixel. Used for unary
// potentials (negative log-probabilities) and, through MarginalField, for Q.
class UnaryField {
 public:
  UnaryField() = default;

  UnaryField(std::size_t width, std::size_t height, std::size_t labels, std::vector<double> values)
      : width_(width), height_(height), labels_(labels), values_(std::move(values)) {
    if (width_ == 0 || height_ == 0 || labels_ == 0) {
      throw DimensionError("UnaryField: zero dimension");
    }
    if (values_.size() != width_ * height_ * labels_) {
      throw DimensionError("UnaryField: value count " + std::to_string(values_.size()) +
                           " != width*height*L " + std::to_string(width_ * height_ * labels_));
    }
    for (double v : values_) {
      if (!std::isfinite(v)) throw RangeError("UnaryField: non-finite value");
    }
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t pixel_count() const { return width_ * height_; }
  std::size_t labels() const { return labels_; }

  double operator()(std::size_t i, std::size_t l) const { return values_[i * labels_ + l]; }
  std::span<const double> pixel(std::size_t i) const {
    return std::span<const double>(values_).subspan(i * labels_, labels_);
  }
  std::span<const double> values() const { return values_; }

  friend bool operator==(const UnaryField&, const UnaryField&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::size_t labels_ = 0;
  std::vector<double> values_;
};

// Per-pixel label assignment.
class LabelMap {
 public:
  LabelMap() = default;

  LabelMap(std::size_t width, std::size_t height, std::vector<std::int32_t> labels)
      : width_(width), height_(height), labels_(std::move(labels)) {
    if (labels_.size() != width_ * height_) {
      throw DimensionError("LabelMap: label count " + std::to_string(labels_.size()) +
                           " != width*height " + std::to_string(width_ * height_));
    }
    for (auto l : labels_) {
      if (l < 0) throw RangeError("LabelMap: negative label");
    }
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t size() const { return labels_.size(); }

  std::int32_t operator[](std::size_t i) const { return labels_[i]; }
  std::span<const std::int32_t> labels() const { return labels_; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<std::int32_t> labels_;
};

namespace detail {

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

inline void finish_write(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw IoError("write to '" + path + "' failed");
}

// Reads one PNM header integer, skipping whitespace and '#' comments.
inline std::size_t read_pnm_field(std::istream& in, const char* format, const char* field) {
  int c = in.peek();
  while (c != EOF) {
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
    c = in.peek();
  }
  if (c == EOF || !std::isdigit(c)) {
    throw FormatError(std::string(format) + ": malformed header field '" + field + "'");
  }
  std::uint64_t value = 0;
  while (std::isdigit(in.peek())) {
    value = value * 10 + static_cast<std::uint64_t>(in.get() - '0');
    if (value > (std::uint64_t{1} << 31)) {
      throw FormatError(std::string(format) + ": header field '" + field + "' too large");
    }
  }
  return static_cast<std::size_t>(value);
}

inline void read_pnm_magic(std::istream& in, const char* expected, const char* format) {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != expected[0] || magic[1] != expected[1]) {
    throw FormatError(std::string(format) + ": malformed header field 'magic' (expected " + expected + ")");
  }
}

// The single whitespace byte separating maxval from the payload.
inline void read_pnm_separator(std::istream& in, const char* format) {
  const int c = in.get();
  if (c == EOF || !std::isspace(c)) {
    throw FormatError(std::string(format) + ": malformed header field 'maxval' terminator");
  }
}

inline std::uint8_t round_channel(double v) {
  const double r = std::floor(v + 0.5);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

inline void put_u32le(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                     static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b, 4);
}

inline std::uint32_t get_u32le(const unsigned char* b) {
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

inline std::vector<unsigned char> read_payload(std::istream& in, std::size_t bytes, const char* format) {
  std::vector<unsigned char> buf(bytes);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) {
    throw FormatError(std::string(format) + ": truncated payload (expected " + std::to_string(bytes) +
                      " bytes, got " + std::to_string(in.gcount()) + ")");
  }
  return buf;
}

inline std::string read_line(std::istream& in, const char* format, const char* field) {
  std::string line;
  if (!std::getline(in, line)) {
    throw FormatError(std::string(format) + ": malformed header field '" + field + "'");
  }
  return line;
}

// Parses "<a> <b> [<c>]" header lines of the SP* formats.
inline std::vector<std::size_t> parse_dims(const std::string& line, std::size_t count, const char* format) {
  std::istringstream ss(line);
  std::vector<std::size_t> dims;
  long long v = 0;
  while (ss >> v) {
    if (v <= 0) throw FormatError(std::string(format) + ": malformed header field 'dimensions'");
    dims.push_back(static_cast<std::size_t>(v));
  }
  if (!ss.eof() || dims.size() != count) {
    throw FormatError(std::string(format) + ": malformed header field 'dimensions'");
  }
  return dims;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PPM P6

inline Image read_image(std::istream& in) {
  detail::read_pnm_magic(in, "P6", "PPM");
  const std::size_t width = detail::read_pnm_field(in, "PPM", "width");
  const std::size_t height = detail::read_pnm_field(in, "PPM", "height");
  const std::size_t maxval = detail::read_pnm_field(in, "PPM", "maxval");
  if (width == 0) throw FormatError("PPM: malformed header field 'width' (zero)");
  if (height == 0) throw FormatError("PPM: malformed header field 'height' (zero)");
  if (maxval != 255) throw FormatError("PPM: unsupported header field 'maxval' " + std::to_string(maxval) + " (need 255)");
  detail::read_pnm_separator(in, "PPM");
  const auto buf = detail::read_payload(in, width * height * 3, "PPM");
  std::vector<Color> pixels(width * height);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = {double(buf[3 * i]), double(buf[3 * i + 1]), double(buf[3 * i + 2])};
  }
  return Image(width, height, std::move(pixels));
}

inline Image read_image(const std::string& path) {
  auto in = detail::open_in(path);
  return read_image(in);
}

// Channels are rounded half up to 8 bits.
inline void write_image(const Image& img, std::ostream& out) {
  if (img.width() == 0 || img.height() == 0) throw DimensionError("write_image: zero-sized image");
  out << "P6\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::vector<char> buf(img.size() * 3);
  for (std::size_t i = 0; i < img.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) buf[3 * i + c] = static_cast<char>(detail::round_channel(img[i][c]));
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline void write_image(const Image& img, const std::string& path) {
  if (img.width() == 0 || img.height() == 0) throw DimensionError("write_image: zero-sized image");
  auto out = detail::open_out(path);
  write_image(img, out);
  detail::finish_write(out, path);
}

// ---------------------------------------------------------------------------
// Segment maps: SPSEG1 binary or CSV of non-negative integers.

inline SegmentMap read_segment_map_csv(std::istream& in) {
  std::vector<std::uint64_t> raw;
  std::size_t width = 0;
  std::size_t height = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t row = 0;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const auto b = cell.find_first_not_of(" \t");
      const auto e = cell.find_last_not_of(" \t");
      if (b == std::string::npos) throw FormatError("CSV segment map: empty cell on row " + std::to_string(height));
      cell = cell.substr(b, e - b + 1);
      std::size_t used = 0;
      long long v = 0;
      try {
        v = std::stoll(cell, &used);
      } catch (const std::exception&) {
        throw FormatError("CSV segment map: non-integer cell '" + cell + "'");
      }
      if (used != cell.size()) throw FormatError("CSV segment map: non-integer cell '" + cell + "'");
      if (v < 0) throw RangeError("CSV segment map: negative index " + std::to_string(v));
      raw.push_back(static_cast<std::uint64_t>(v));
      ++row;
    }
    if (height == 0) width = row;
    if (row != width) throw FormatError("CSV segment map: ragged row " + std::to_string(height));
    ++height;
  }
  if (raw.empty()) throw FormatError("CSV segment map: no data");
  return SegmentMap::relabeled(width, height, raw);
}

inline SegmentMap read_segment_map(std::istream& in) {
  std::string head(6, '\0');
  in.read(head.data(), 6);
  if (in.gcount() == 6 && head == "SPSEG1") {
    if (in.get() != '\n') throw FormatError("SPSEG1: malformed header field 'magic'");
    const auto dims = detail::parse_dims(detail::read_line(in, "SPSEG1", "dimensions"), 2, "SPSEG1");
    const std::size_t n = dims[0] * dims[1];
    const auto buf = detail::read_payload(in, n * 4, "SPSEG1");
    std::vector<std::uint64_t> raw(n);
    for (std::size_t i = 0; i < n; ++i) raw[i] = detail::get_u32le(&buf[4 * i]);
    return SegmentMap::relabeled(dims[0], dims[1], raw);
  }
  in.clear();
  in.seekg(0);
  return read_segment_map_csv(in);
}

inline SegmentMap read_segment_map(const std::string& path) {
  auto in = detail::open_in(path);
  return read_segment_map(in);
}

inline void write_segment_map(const SegmentMap& seg, std::ostream& out) {
  out << "SPSEG1\n" << seg.width() << ' ' << seg.height() << '\n';
  for (auto v : seg.indices()) detail::put_u32le(out, v);
}

inline void write_segment_map(const SegmentMap& seg, const std::string& path) {
  auto out = detail::open_out(path);
  write_segment_map(seg, out);
  detail::finish_write(out, path);
}

// ---------------------------------------------------------------------------
// SPUNR1: little-endian float32, pixel-major.

inline UnaryField read_unary(std::istream& in) {
  if (detail::read_line(in, "SPUNR1", "magic") != "SPUNR1") {
    throw FormatError("SPUNR1: malformed header field 'magic'");
  }
  const auto dims = detail::parse_dims(detail::read_line(in, "SPUNR1", "dimensions"), 3, "SPUNR1");
  const std::size_t n = dims[0] * dims[1] * dims[2];
  std::vector<unsigned char> buf(n * 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got != buf.size() || in.peek() != EOF) {
    throw DimensionError("SPUNR1: header declares " + std::to_string(dims[0]) + "x" + std::to_string(dims[1]) +
                         "x" + std::to_string(dims[2]) + " values (" + std::to_string(buf.size()) +
                         " bytes) but payload " +
                         (got != buf.size() ? "holds " + std::to_string(got) + " bytes" : std::string("is longer")));
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float f = std::bit_cast<float>(detail::get_u32le(&buf[4 * i]));
    if (!std::isfinite(f)) throw RangeError("SPUNR1: non-finite value at index " + std::to_string(i));
    values[i] = f;
  }
  return UnaryField(dims[0], dims[1], dims[2], std::move(values));
}

inline UnaryField read_unary(const std::string& path) {
  auto in = detail::open_in(path);
  return read_unary(in);
}

// Values are narrowed to float32.
inline void write_unary(const UnaryField& u, std::ostream& out) {
  out << "SPUNR1\n" << u.width() << ' ' << u.height() << ' ' << u.labels() << '\n';
  for (double v : u.values()) detail::put_u32le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

inline void write_unary(const UnaryField& u, const std::string& path) {
  auto out = detail::open_out(path);
  write_unary(u, out);
  detail::finish_write(out, path);
}

// ---------------------------------------------------------------------------
// PGM P5 label maps: 8-bit samples when L <= 256, 16-bit big-endian otherwise.

inline LabelMap read_label_map(std::istream& in, std::optional<std::size_t> num_labels = std::nullopt) {
  detail::read_pnm_magic(in, "P5", "PGM");
  const std::size_t width = detail::read_pnm_field(in, "PGM", "width");
  const std::size_t height = detail::read_pnm_field(in, "PGM", "height");
  const std::size_t maxval = detail::read_pnm_field(in, "PGM", "maxval");
  if (width == 0) throw FormatError("PGM: malformed header field 'width' (zero)");
  if (height == 0) throw FormatError("PGM: malformed header field 'height' (zero)");
  if (maxval == 0 || maxval > 65535) throw FormatError("PGM: malformed header field 'maxval'");
  detail::read_pnm_separator(in, "PGM");
  const std::size_t bytes_per = maxval < 256 ? 1 : 2;
  const auto buf = detail::read_payload(in, width * height * bytes_per, "PGM");
  std::vector<std::int32_t> labels(width * height);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = bytes_per == 1 ? buf[i] : (std::int32_t{buf[2 * i]} << 8) | buf[2 * i + 1];
    if (num_labels && static_cast<std::size_t>(labels[i]) >= *num_labels) {
      throw RangeError("PGM: label " + std::to_string(labels[i]) + " at pixel " + std::to_string(i) +
                       " >= L=" + std::to_string(*num_labels));
    }
  }
  return LabelMap(width, height, std::move(labels));
}

inline LabelMap read_label_map(const std::string& path, std::optional<std::size_t> num_labels = std::nullopt) {
  auto in = detail::open_in(path);
  return read_label_map(in, num_labels);
}

inline void write_label_map(const LabelMap& lm, std::ostream& out, std::size_t num_labels) {
  if (lm.width() == 0 || lm.height() == 0) throw DimensionError("write_label_map: zero-sized map");
  if (num_labels == 0 || num_labels > 65536) throw RangeError("write_label_map: L must be in [1, 65536]");
  for (auto l : lm.labels()) {
    if (static_cast<std::size_t>(l) >= num_labels) {
      throw RangeError("write_label_map: label " + std::to_string(l) + " >= L=" + std::to_string(num_labels));
    }
  }
  const bool wide = num_labels > 256;
  out << "P5\n" << lm.width() << ' ' << lm.height() << '\n' << (wide ? 65535 : 255) << '\n';
  std::vector<char> buf;
  buf.reserve(lm.size() * (wide ? 2 : 1));
  for (auto l : lm.labels()) {
    if (wide) buf.push_back(static_cast<char>((l >> 8) & 0xFF));
    buf.push_back(static_cast<char>(l & 0xFF));
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline void write_label_map(const LabelMap& lm, const std::string& path, std::size_t num_labels) {
  if (lm.width() == 0 || lm.height() == 0) throw DimensionError("write_label_map: zero-sized map");
  auto out = detail::open_out(path);
  write_label_map(lm, out, num_labels);
  detail::finish_write(out, path);
}

}  // namespace spcrf
