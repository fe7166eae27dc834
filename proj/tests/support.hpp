#pragma once

#include <spcrf/spcrf.hpp>

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

namespace spcrf::test {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Image random_image(Rng& rng, std::size_t w, std::size_t h, bool integral = false) {
  std::vector<Color> px(w * h);
  for (auto& c : px)
    for (auto& v : c) v = integral ? double(uniform_index(rng, 0, 255)) : uniform(rng, 0.0, 255.0);
  return Image(w, h, std::move(px));
}

// Few flat color patches plus small noise, so bilateral kernels have mass.
inline Image patchy_image(Rng& rng, std::size_t w, std::size_t h, std::size_t patches = 4, double noise = 2.0) {
  std::vector<Color> palette(patches);
  for (auto& c : palette)
    for (auto& v : c) v = uniform(rng, 20.0, 235.0);
  std::vector<std::pair<double, double>> seeds(patches);
  for (auto& s : seeds) s = {uniform(rng, 0.0, double(w)), uniform(rng, 0.0, double(h))};
  std::vector<Color> px(w * h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t best = 0;
      double bd = 1e300;
      for (std::size_t p = 0; p < patches; ++p) {
        const double dx = seeds[p].first - double(x), dy = seeds[p].second - double(y);
        if (dx * dx + dy * dy < bd) bd = dx * dx + dy * dy, best = p;
      }
      for (int c = 0; c < 3; ++c) px[y * w + x][c] = std::clamp(palette[best][c] + uniform(rng, -noise, noise), 0.0, 255.0);
    }
  }
  return Image(w, h, std::move(px));
}

inline UnaryField random_unary(Rng& rng, std::size_t w, std::size_t h, std::size_t labels, double scale = 2.0) {
  std::vector<double> v(w * h * labels);
  for (auto& x : v) x = uniform(rng, 0.0, scale);
  return UnaryField(w, h, labels, std::move(v));
}

inline LabelMap random_labels(Rng& rng, std::size_t w, std::size_t h, std::size_t labels) {
  std::vector<std::int32_t> v(w * h);
  for (auto& x : v) x = static_cast<std::int32_t>(uniform_index(rng, 0, labels - 1));
  return LabelMap(w, h, std::move(v));
}

inline MarginalField random_marginals(Rng& rng, std::size_t w, std::size_t h, std::size_t labels) {
  std::vector<double> v(w * h * labels);
  for (std::size_t i = 0; i < w * h; ++i) {
    double s = 0.0;
    for (std::size_t l = 0; l < labels; ++l) s += v[i * labels + l] = uniform(rng, 0.01, 1.0);
    for (std::size_t l = 0; l < labels; ++l) v[i * labels + l] /= s;
  }
  return MarginalField(w, h, labels, std::move(v));
}

// Random segment map with ids drawn from [0, segments) then relabeled.
inline SegmentMap random_segments(Rng& rng, std::size_t w, std::size_t h, std::size_t segments) {
  std::vector<std::uint64_t> raw(w * h);
  for (auto& s : raw) s = uniform_index(rng, 0, segments - 1);
  return SegmentMap::relabeled(w, h, raw);
}

inline SegmentMap singleton_segments(std::size_t w, std::size_t h) {
  std::vector<std::uint32_t> ids(w * h);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::uint32_t>(i);
  return SegmentMap(w, h, std::move(ids));
}

inline FilteredImage filtered(const Image& img, const SegmentMap& seg) { return segment_filter(img, seg); }

// Disk on a flat background. The image carries per-pixel color noise; the
// unary is a clean two-label unary with square salt blobs flipped to
// confidently wrong. The superpixel level is the disk/background split.
struct NoisyDiskParams {
  std::size_t size = 48;
  double radius_fraction = 0.3;
  double p_clean = 0.7;
  double p_salt = 0.95;
  std::size_t salt_blobs = 24;
  std::size_t blob_side = 3;
  double color_noise = 25.0;
};

struct NoisyDisk {
  Image image;
  UnaryField unary;
  LabelMap truth;
  SegmentMap segments;
};

inline NoisyDisk noisy_disk(std::uint64_t seed, const NoisyDiskParams& p = {}) {
  Rng rng(seed);
  const std::size_t size = p.size, n = size * size;
  const double c = (double(size) - 1.0) / 2.0, radius = double(size) * p.radius_fraction;
  std::vector<Color> px(n);
  std::vector<std::int32_t> truth(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = double(i % size) - c, dy = double(i / size) - c;
    truth[i] = dx * dx + dy * dy <= radius * radius ? 1 : 0;
    const Color base = truth[i] ? Color{170, 120, 90} : Color{80, 110, 150};
    for (int k = 0; k < 3; ++k) px[i][k] = std::clamp(base[k] + uniform(rng, -p.color_noise, p.color_noise), 0.0, 255.0);
  }
  std::vector<bool> salt(n, false);
  for (std::size_t b = 0; b < p.salt_blobs; ++b) {
    const std::size_t x0 = uniform_index(rng, 0, size - p.blob_side), y0 = uniform_index(rng, 0, size - p.blob_side);
    for (std::size_t y = y0; y < y0 + p.blob_side; ++y)
      for (std::size_t x = x0; x < x0 + p.blob_side; ++x) salt[y * size + x] = true;
  }
  std::vector<double> u(n * 2);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int32_t favoured = salt[i] ? 1 - truth[i] : truth[i];
    const double q = salt[i] ? p.p_salt : p.p_clean;
    u[i * 2 + std::size_t(favoured)] = -std::log(q);
    u[i * 2 + std::size_t(1 - favoured)] = -std::log(1.0 - q);
  }
  std::vector<std::uint32_t> seg(n);
  for (std::size_t i = 0; i < n; ++i) seg[i] = truth[i] == truth[0] ? 0 : 1;
  return {Image(size, size, std::move(px)), UnaryField(size, size, 2, std::move(u)), LabelMap(size, size, truth),
          SegmentMap(size, size, std::move(seg))};
}

// Number of 4-connected components of equal label.
inline std::size_t component_count(const LabelMap& m) {
  const std::size_t w = m.width(), h = m.height();
  std::vector<bool> seen(m.size(), false);
  std::size_t count = 0;
  for (std::size_t p = 0; p < m.size(); ++p) {
    if (seen[p]) continue;
    ++count;
    std::vector<std::size_t> stack{p};
    seen[p] = true;
    while (!stack.empty()) {
      const std::size_t q = stack.back();
      stack.pop_back();
      const std::size_t x = q % w, y = q / w;
      auto visit = [&](std::size_t r) {
        if (!seen[r] && m[r] == m[q]) seen[r] = true, stack.push_back(r);
      };
      if (x > 0) visit(q - 1);
      if (x + 1 < w) visit(q + 1);
      if (y > 0) visit(q - w);
      if (y + 1 < h) visit(q + w);
    }
  }
  return count;
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("spcrf_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void dump(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out << bytes;
}

}  // namespace spcrf::test
