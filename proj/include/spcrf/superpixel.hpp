#pragma once

// Superpixel segmentation (SLIC-style k-means on RGB + scaled position) and
// segment-filtered images, where each pixel carries its segment's mean color.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "spcrf/error.hpp"
#include "spcrf/imaging.hpp"

namespace spcrf {

struct SlicParams {
  std::size_t target_segments = 100;
  double compactness = 10.0;
  std::size_t max_iterations = 10;
};

// Image whose pixel i holds the mean color of segment s_i. The segment map is
// absent when the filtered image was loaded from disk rather than computed.
struct FilteredImage {
  Image image;
  std::shared_ptr<const SegmentMap> segments;

  const Color& operator[](std::size_t i) const { return image[i]; }
  std::size_t size() const { return image.size(); }
};

using Edge = std::pair<std::size_t, std::size_t>;

struct EdgePartition {
  std::vector<Edge> intra;
  std::vector<Edge> extra;
};

namespace detail {

// 4-connected components of a label raster, numbered in scan order.
inline std::vector<std::uint32_t> connected_components(std::size_t width, std::size_t height,
                                                       std::span<const std::int64_t> labels,
                                                       std::size_t* count) {
  const std::size_t n = width * height;
  constexpr auto unset = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> comp(n, unset);
  std::vector<std::size_t> stack;
  std::uint32_t next = 0;
  for (std::size_t start = 0; start < n; ++start) {
    if (comp[start] != unset) continue;
    comp[start] = next;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const std::size_t x = p % width;
      const std::size_t y = p / width;
      auto visit = [&](std::size_t q) {
        if (comp[q] == unset && labels[q] == labels[p]) {
          comp[q] = next;
          stack.push_back(q);
        }
      };
      if (x > 0) visit(p - 1);
      if (x + 1 < width) visit(p + 1);
      if (y > 0) visit(p - width);
      if (y + 1 < height) visit(p + width);
    }
    ++next;
  }
  *count = next;
  return comp;
}

// Keeps the largest component of every label and gives each other component
// (orphan) to the adjacent kept segment of largest original size, ties to the
// lowest label. Orphans touching no kept segment wait for a resolved neighbour.
inline void merge_orphans(std::size_t width, std::size_t height, std::vector<std::int64_t>& labels) {
  const std::size_t n = width * height;
  std::size_t ncomp = 0;
  const auto comp = connected_components(width, height, labels, &ncomp);
  std::vector<std::size_t> comp_size(ncomp, 0);
  std::vector<std::int64_t> comp_label(ncomp, 0);
  for (std::size_t p = 0; p < n; ++p) {
    ++comp_size[comp[p]];
    comp_label[comp[p]] = labels[p];
  }
  std::int64_t max_label = 0;
  for (auto l : labels) max_label = std::max(max_label, l);
  // Largest component per label; ties go to the first in scan order.
  std::vector<std::int64_t> keeper(static_cast<std::size_t>(max_label) + 1, -1);
  for (std::size_t c = 0; c < ncomp; ++c) {
    auto& k = keeper[static_cast<std::size_t>(comp_label[c])];
    if (k < 0 || comp_size[c] > comp_size[static_cast<std::size_t>(k)]) k = static_cast<std::int64_t>(c);
  }
  // Component each component ends up in; kept components map to themselves.
  constexpr auto unresolved = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> target(ncomp, unresolved);
  std::vector<std::vector<std::size_t>> members(ncomp);
  std::vector<std::size_t> pending;
  for (std::size_t c = 0; c < ncomp; ++c) {
    if (keeper[static_cast<std::size_t>(comp_label[c])] == static_cast<std::int64_t>(c)) {
      target[c] = c;
    } else {
      pending.push_back(c);
    }
  }
  if (pending.empty()) return;
  for (std::size_t p = 0; p < n; ++p) {
    if (target[comp[p]] == unresolved) members[comp[p]].push_back(p);
  }

  while (!pending.empty()) {
    std::vector<std::size_t> next;
    std::vector<std::pair<std::size_t, std::size_t>> resolved;
    for (std::size_t c : pending) {
      std::size_t best = unresolved;
      auto better = [&](std::size_t t) {
        if (best == unresolved) return true;
        if (comp_size[t] != comp_size[best]) return comp_size[t] > comp_size[best];
        return comp_label[t] < comp_label[best];
      };
      for (std::size_t p : members[c]) {
        const std::size_t x = p % width;
        const std::size_t y = p / width;
        auto consider = [&](std::size_t q) {
          const std::size_t t = target[comp[q]];
          if (t != unresolved && t != c && better(t)) best = t;
        };
        if (x > 0) consider(p - 1);
        if (x + 1 < width) consider(p + 1);
        if (y > 0) consider(p - width);
        if (y + 1 < height) consider(p + width);
      }
      if (best == unresolved) {
        next.push_back(c);
      } else {
        resolved.emplace_back(c, best);
      }
    }
    // Applied after the sweep.
    for (const auto& [c, t] : resolved) target[c] = t;
    pending.swap(next);
  }
  for (std::size_t p = 0; p < n; ++p) labels[p] = comp_label[target[comp[p]]];
}

}  // namespace detail

// SLIC-style superpixels. Seeds sit on a regular nx x ny grid with
// nx*ny <= K, cluster distance is |dRGB|^2 + (m/S)^2 |dxy|^2 with
// S = sqrt(WH/K), and ties go to the lowest cluster id. Disconnected
// fragments are merged into their largest neighbouring segment.
inline SegmentMap slic_segment(const Image& img, const SlicParams& params) {
  const std::size_t w = img.width();
  const std::size_t h = img.height();
  const std::size_t n = w * h;
  if (n == 0) throw DimensionError("slic_segment: empty image");
  if (params.target_segments == 0) throw RangeError("slic_segment: K must be >= 1");
  if (params.target_segments > n) {
    throw RangeError("slic_segment: K=" + std::to_string(params.target_segments) + " exceeds pixel count " +
                     std::to_string(n));
  }
  if (!(params.compactness > 0.0)) throw RangeError("slic_segment: compactness must be positive");
  if (params.max_iterations == 0) throw RangeError("slic_segment: max_iterations must be >= 1");

  const std::size_t k = params.target_segments;
  const double step = std::sqrt(double(n) / double(k));
  std::size_t nx = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(std::sqrt(double(k) * double(w) / double(h)))), 1, std::min(w, k));
  std::size_t ny = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(double(k) / double(nx))), 1, h);
  while (nx * ny > k) {
    if (ny > 1) --ny; else --nx;
  }

  struct Center {
    Color color;
    double x, y;
  };
  std::vector<Center> centers;
  centers.reserve(nx * ny);
  for (std::size_t b = 0; b < ny; ++b) {
    for (std::size_t a = 0; a < nx; ++a) {
      const double cx = (double(a) + 0.5) * double(w) / double(nx) - 0.5;
      const double cy = (double(b) + 0.5) * double(h) / double(ny) - 0.5;
      const auto px = static_cast<std::size_t>(std::clamp(std::floor(cx + 0.5), 0.0, double(w - 1)));
      const auto py = static_cast<std::size_t>(std::clamp(std::floor(cy + 0.5), 0.0, double(h - 1)));
      centers.push_back({img.at(px, py), cx, cy});
    }
  }

  const double spatial_weight = (params.compactness / step) * (params.compactness / step);
  const auto radius = static_cast<long long>(
      std::ceil(std::max({step, double(w) / double(nx), double(h) / double(ny)})));
  auto distance = [&](const Center& c, std::size_t p) {
    const double dx = double(p % w) - c.x;
    const double dy = double(p / w) - c.y;
    return squared_distance(img[p], c.color) + spatial_weight * (dx * dx + dy * dy);
  };

  std::vector<std::int64_t> labels(n, -1);
  std::vector<double> best(n);
  for (std::size_t iter = 0; iter < params.max_iterations; ++iter) {
    std::fill(labels.begin(), labels.end(), -1);
    std::fill(best.begin(), best.end(), std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < centers.size(); ++c) {
      const auto cx = static_cast<long long>(std::llround(centers[c].x));
      const auto cy = static_cast<long long>(std::llround(centers[c].y));
      const long long x0 = std::max(0LL, cx - radius), x1 = std::min<long long>(w - 1, cx + radius);
      const long long y0 = std::max(0LL, cy - radius), y1 = std::min<long long>(h - 1, cy + radius);
      for (long long y = y0; y <= y1; ++y) {
        for (long long x = x0; x <= x1; ++x) {
          const auto p = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
          const double d = distance(centers[c], p);
          if (d < best[p]) {
            best[p] = d;
            labels[p] = static_cast<std::int64_t>(c);
          }
        }
      }
    }
    // Pixels outside every window fall back to the globally nearest center.
    for (std::size_t p = 0; p < n; ++p) {
      if (labels[p] >= 0) continue;
      for (std::size_t c = 0; c < centers.size(); ++c) {
        const double d = distance(centers[c], p);
        if (d < best[p]) {
          best[p] = d;
          labels[p] = static_cast<std::int64_t>(c);
        }
      }
    }
    std::vector<std::array<double, 5>> sums(centers.size(), {0, 0, 0, 0, 0});
    std::vector<std::size_t> counts(centers.size(), 0);
    for (std::size_t p = 0; p < n; ++p) {
      const auto c = static_cast<std::size_t>(labels[p]);
      for (std::size_t ch = 0; ch < 3; ++ch) sums[c][ch] += img[p][ch];
      sums[c][3] += double(p % w);
      sums[c][4] += double(p / w);
      ++counts[c];
    }
    for (std::size_t c = 0; c < centers.size(); ++c) {
      if (counts[c] == 0) continue;
      const double inv = 1.0 / double(counts[c]);
      centers[c] = {{sums[c][0] * inv, sums[c][1] * inv, sums[c][2] * inv}, sums[c][3] * inv, sums[c][4] * inv};
    }
  }

  detail::merge_orphans(w, h, labels);
  std::vector<std::uint64_t> raw(labels.begin(), labels.end());
  return SegmentMap::relabeled(w, h, raw);
}

// Replaces each pixel with the mean color of its segment. Means are taken
// relative to the segment's first pixel, so a constant segment maps to
// itself bit-exactly and filtering is idempotent.
inline FilteredImage segment_filter(const Image& img, std::shared_ptr<const SegmentMap> seg) {
  if (!seg) throw DimensionError("segment_filter: null segment map");
  if (seg->width() != img.width() || seg->height() != img.height()) {
    throw DimensionError("segment_filter: segment map " + std::to_string(seg->width()) + "x" +
                         std::to_string(seg->height()) + " does not match image " +
                         std::to_string(img.width()) + "x" + std::to_string(img.height()));
  }
  const std::size_t s = seg->segment_count();
  std::vector<Color> anchor(s);
  std::vector<Color> delta(s, Color{0, 0, 0});
  std::vector<std::size_t> counts(s, 0);
  for (std::size_t p = 0; p < img.size(); ++p) {
    const auto id = (*seg)[p];
    if (counts[id]++ == 0) {
      anchor[id] = img[p];
      continue;
    }
    for (std::size_t c = 0; c < 3; ++c) delta[id][c] += img[p][c] - anchor[id][c];
  }
  std::vector<Color> mean(s);
  for (std::size_t id = 0; id < s; ++id) {
    for (std::size_t c = 0; c < 3; ++c) {
      mean[id][c] = std::clamp(anchor[id][c] + delta[id][c] / double(counts[id]), 0.0, 255.0);
    }
  }
  std::vector<Color> out(img.size());
  for (std::size_t p = 0; p < img.size(); ++p) out[p] = mean[(*seg)[p]];
  return FilteredImage{Image(img.width(), img.height(), std::move(out)), std::move(seg)};
}

inline FilteredImage segment_filter(const Image& img, const SegmentMap& seg) {
  return segment_filter(img, std::make_shared<const SegmentMap>(seg));
}

// Splits edges into those inside one segment and those crossing segments.
inline EdgePartition segment_edge_partition(const SegmentMap& seg, std::span<const Edge> edges) {
  EdgePartition part;
  for (const auto& [i, j] : edges) {
    if (i >= seg.size() || j >= seg.size()) {
      throw RangeError("segment_edge_partition: edge (" + std::to_string(i) + "," + std::to_string(j) +
                       ") out of range for " + std::to_string(seg.size()) + " pixels");
    }
    (seg[i] == seg[j] ? part.intra : part.extra).push_back({i, j});
  }
  return part;
}

// Horizontal and vertical neighbour pairs of a W x H grid.
inline std::vector<Edge> grid_edges_4(std::size_t width, std::size_t height) {
  std::vector<Edge> edges;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t p = y * width + x;
      if (x + 1 < width) edges.push_back({p, p + 1});
      if (y + 1 < height) edges.push_back({p, p + width});
    }
  }
  return edges;
}

// Every unordered pair i < j of an N-pixel image.
inline std::vector<Edge> complete_edges(std::size_t n) {
  std::vector<Edge> edges;
  edges.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) edges.push_back({i, j});
  }
  return edges;
}

}  // namespace spcrf
