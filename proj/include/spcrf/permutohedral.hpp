#pragma once

// Permutohedral lattice for approximate high-dimensional Gaussian filtering
// (splat / blur / slice with barycentric weights). Given bandwidth-scaled
// features f_i it approximates, up to a constant factor,
//
//   out_i = sum_j exp(-|f_i - f_j|^2 / 2) in_j
//
// in time linear in the number of points.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "spcrf/error.hpp"
#include "spcrf/parallel.hpp"

namespace spcrf {

namespace detail {

// Open-addressing table from d-dimensional integer keys to dense ids.
class LatticeHashTable {
 public:
  explicit LatticeHashTable(std::size_t key_size, std::size_t expected)
      : key_size_(key_size), table_(capacity_for(expected), -1) {
    keys_.reserve(expected * key_size_);
  }

  std::size_t size() const { return keys_.size() / key_size_; }
  const std::int32_t* key(std::size_t id) const { return &keys_[id * key_size_]; }

  // Returns the id of key, inserting it when create is set; -1 if absent.
  std::int64_t find(const std::int32_t* key, bool create) {
    if (create && 2 * size() >= table_.size()) grow();
    std::size_t h = hash(key) & (table_.size() - 1);
    for (;;) {
      const std::int64_t id = table_[h];
      if (id < 0) {
        if (!create) return -1;
        const auto fresh = static_cast<std::int64_t>(size());
        keys_.insert(keys_.end(), key, key + key_size_);
        table_[h] = fresh;
        return fresh;
      }
      if (equal(key, this->key(static_cast<std::size_t>(id)))) return id;
      h = (h + 1) & (table_.size() - 1);
    }
  }

 private:
  static std::size_t capacity_for(std::size_t expected) {
    std::size_t c = 64;
    while (c < 2 * expected) c <<= 1;
    return c;
  }

  std::size_t hash(const std::int32_t* key) const {
    std::size_t h = 0;
    for (std::size_t i = 0; i < key_size_; ++i) {
      h += static_cast<std::size_t>(static_cast<std::uint32_t>(key[i]));
      h *= 2531011;
    }
    return h;
  }

  bool equal(const std::int32_t* a, const std::int32_t* b) const {
    for (std::size_t i = 0; i < key_size_; ++i)
      if (a[i] != b[i]) return false;
    return true;
  }

  void grow() {
    std::vector<std::int64_t> bigger(table_.size() * 2, -1);
    for (std::size_t id = 0; id < size(); ++id) {
      std::size_t h = hash(key(id)) & (bigger.size() - 1);
      while (bigger[h] >= 0) h = (h + 1) & (bigger.size() - 1);
      bigger[h] = static_cast<std::int64_t>(id);
    }
    table_.swap(bigger);
  }

  std::size_t key_size_;
  std::vector<std::int32_t> keys_;
  std::vector<std::int64_t> table_;
};

}  // namespace detail

class PermutohedralLattice {
 public:
  // features: n points of `dims` coordinates each, already divided by the
  // kernel bandwidth.
  PermutohedralLattice(std::span<const double> features, std::size_t dims)
      : dims_(dims), points_(dims == 0 ? 0 : features.size() / dims) {
    if (dims == 0 || features.size() != points_ * dims) {
      throw DimensionError("PermutohedralLattice: feature array is not n x dims");
    }
    build(features);
  }

  std::size_t points() const { return points_; }
  std::size_t lattice_size() const { return vertex_count_; }

  // filter() output at each point for a unit input at that point alone.
  std::span<const double> self_weights() const { return self_; }

  // Filters `channels` interleaved values per point. Point i's values are
  // in[i * channels + c]; the result has the same layout.
  std::vector<double> filter(std::span<const double> in, std::size_t channels, unsigned threads = 1) const {
    if (in.size() != points_ * channels) throw DimensionError("PermutohedralLattice::filter: bad input size");
    const std::size_t d1 = dims_ + 1;
    // Slot 0 is a zero vertex standing in for missing neighbours.
    std::vector<double> values((vertex_count_ + 1) * channels, 0.0);
    for (std::size_t i = 0; i < points_; ++i) {
      for (std::size_t r = 0; r < d1; ++r) {
        const std::size_t o = (offset_[i * d1 + r] + 1) * channels;
        const double b = weight_[i * d1 + r];
        for (std::size_t c = 0; c < channels; ++c) values[o + c] += b * in[i * channels + c];
      }
    }

    std::vector<double> scratch(values.size(), 0.0);
    for (std::size_t axis = 0; axis < d1; ++axis) {
      parallel_for(vertex_count_, threads, [&](std::size_t v) {
        const std::size_t n1 = (blur_neighbors_[(axis * vertex_count_ + v) * 2] + 1) * channels;
        const std::size_t n2 = (blur_neighbors_[(axis * vertex_count_ + v) * 2 + 1] + 1) * channels;
        const std::size_t o = (v + 1) * channels;
        for (std::size_t c = 0; c < channels; ++c) {
          scratch[o + c] = values[o + c] + 0.5 * (values[n1 + c] + values[n2 + c]);
        }
      });
      values.swap(scratch);
    }

    const double alpha = slice_gain();
    std::vector<double> out(points_ * channels, 0.0);
    parallel_for(points_, threads, [&](std::size_t i) {
      for (std::size_t r = 0; r < d1; ++r) {
        const std::size_t o = (offset_[i * d1 + r] + 1) * channels;
        const double b = weight_[i * d1 + r] * alpha;
        for (std::size_t c = 0; c < channels; ++c) out[i * channels + c] += b * values[o + c];
      }
    });
    return out;
  }

 private:
  // Blur gain of (1 + 2^-d) per the barycentric-weight identity.
  double slice_gain() const { return 1.0 / (1.0 + std::pow(2.0, -double(dims_))); }

  void build(std::span<const double> features) {
    const std::size_t d = dims_;
    const std::size_t d1 = d + 1;
    detail::LatticeHashTable table(d, points_ * d1);
    offset_.resize(points_ * d1);
    weight_.resize(points_ * d1);

    // Expected stddev of the lattice blur in elevated coordinates.
    const double inv_std_dev = std::sqrt(2.0 / 3.0) * double(d1);
    std::vector<double> scale(d);
    for (std::size_t i = 0; i < d; ++i) scale[i] = inv_std_dev / std::sqrt(double((i + 1) * (i + 2)));

    std::vector<double> elevated(d1), barycentric(d + 2);
    std::vector<std::int32_t> rem0(d1), rank(d1), key(d1);
    for (std::size_t k = 0; k < points_; ++k) {
      const double* f = &features[k * d];
      // Project onto the hyperplane sum(x) = 0 of Z^{d+1}.
      double sm = 0.0;
      for (std::size_t j = d; j > 0; --j) {
        const double cf = f[j - 1] * scale[j - 1];
        elevated[j] = sm - double(j) * cf;
        sm += cf;
      }
      elevated[0] = sm;

      // Nearest remainder-0 lattice point.
      const double down = 1.0 / double(d1);
      int sum = 0;
      for (std::size_t i = 0; i < d1; ++i) {
        const auto rd = static_cast<std::int32_t>(std::nearbyint(down * elevated[i]));
        rem0[i] = rd * static_cast<std::int32_t>(d1);
        sum += rd;
      }

      // Rank of each coordinate's fractional part fixes the simplex.
      std::fill(rank.begin(), rank.end(), 0);
      for (std::size_t i = 0; i < d; ++i) {
        const double di = elevated[i] - rem0[i];
        for (std::size_t j = i + 1; j < d1; ++j) {
          if (di < elevated[j] - rem0[j]) ++rank[i]; else ++rank[j];
        }
      }
      // Restore sum(rem0) = 0 when rounding broke it.
      for (std::size_t i = 0; i < d1; ++i) {
        rank[i] += sum;
        if (rank[i] < 0) {
          rank[i] += static_cast<std::int32_t>(d1);
          rem0[i] += static_cast<std::int32_t>(d1);
        } else if (rank[i] > static_cast<std::int32_t>(d)) {
          rank[i] -= static_cast<std::int32_t>(d1);
          rem0[i] -= static_cast<std::int32_t>(d1);
        }
      }

      std::fill(barycentric.begin(), barycentric.end(), 0.0);
      for (std::size_t i = 0; i < d1; ++i) {
        const double v = (elevated[i] - rem0[i]) * down;
        barycentric[d - static_cast<std::size_t>(rank[i])] += v;
        barycentric[d - static_cast<std::size_t>(rank[i]) + 1] -= v;
      }
      barycentric[0] += 1.0 + barycentric[d + 1];

      for (std::size_t remainder = 0; remainder < d1; ++remainder) {
        for (std::size_t i = 0; i < d; ++i) {
          key[i] = rem0[i] + static_cast<std::int32_t>(remainder);
          if (rank[i] > static_cast<std::int32_t>(d - remainder)) key[i] -= static_cast<std::int32_t>(d1);
        }
        offset_[k * d1 + remainder] = table.find(key.data(), true);
        weight_[k * d1 + remainder] = barycentric[remainder];
      }
    }
    vertex_count_ = table.size();

    // Neighbours along each of the d+1 lattice directions.
    blur_neighbors_.assign(d1 * vertex_count_ * 2, -1);
    std::vector<std::int32_t> n1(d1), n2(d1);
    for (std::size_t axis = 0; axis < d1; ++axis) {
      for (std::size_t v = 0; v < vertex_count_; ++v) {
        const std::int32_t* key_v = table.key(v);
        for (std::size_t i = 0; i < d; ++i) {
          n1[i] = key_v[i] - 1;
          n2[i] = key_v[i] + 1;
        }
        if (axis < d) {
          n1[axis] = key_v[axis] + static_cast<std::int32_t>(d);
          n2[axis] = key_v[axis] - static_cast<std::int32_t>(d);
        }
        blur_neighbors_[(axis * vertex_count_ + v) * 2] = table.find(n1.data(), false);
        blur_neighbors_[(axis * vertex_count_ + v) * 2 + 1] = table.find(n2.data(), false);
      }
    }
    build_self_weights(table);
  }

  // The blur is a product of per-axis passes x += (x[+e_a] + x[-e_a]) / 2,
  // e_a = (d+1) u_a - 1, so the response from vertex u to vertex v sums
  // 2^-|s| over step vectors s in {-1,0,1}^{d+1} with sum_a s_a e_a = v - u
  // whose intermediate vertices all exist.
  void build_self_weights(detail::LatticeHashTable& table) {
    const std::size_t d = dims_;
    const std::size_t d1 = d + 1;
    const auto n1 = static_cast<std::int32_t>(d1);
    const double alpha = slice_gain();
    self_.assign(points_, 0.0);
    std::vector<std::int32_t> delta(d1), step(d1), pos(d);
    for (std::size_t k = 0; k < points_; ++k) {
      double total = 0.0;
      for (std::size_t from = 0; from < d1; ++from) {
        const std::int32_t* kf = table.key(static_cast<std::size_t>(offset_[k * d1 + from]));
        for (std::size_t to = 0; to < d1; ++to) {
          const std::int32_t* kt = table.key(static_cast<std::size_t>(offset_[k * d1 + to]));
          std::int32_t last = 0;
          for (std::size_t i = 0; i < d; ++i) {
            delta[i] = kt[i] - kf[i];
            last -= delta[i];
          }
          delta[d] = last;
          double paths = 0.0;
          // delta_a = (d+1) s_a - S with S = sum(s).
          for (std::int32_t sum = -n1; sum <= n1; ++sum) {
            std::int32_t check = 0;
            bool valid = true;
            for (std::size_t a = 0; a < d1 && valid; ++a) {
              const std::int32_t num = delta[a] + sum;
              valid = num % n1 == 0 && num / n1 >= -1 && num / n1 <= 1;
              step[a] = num / n1;
              check += step[a];
            }
            if (!valid || check != sum) continue;
            std::copy(kf, kf + d, pos.begin());
            double w = 1.0;
            for (std::size_t a = 0; a < d1 && w > 0.0; ++a) {
              if (step[a] == 0) continue;
              for (std::size_t i = 0; i < d; ++i) pos[i] += step[a] * (i == a ? n1 - 1 : -1);
              w = table.find(pos.data(), false) < 0 ? 0.0 : w * 0.5;
            }
            paths += w;
          }
          total += weight_[k * d1 + from] * weight_[k * d1 + to] * paths;
        }
      }
      self_[k] = alpha * total;
    }
  }

  std::size_t dims_;
  std::size_t points_;
  std::size_t vertex_count_ = 0;
  std::vector<std::int64_t> offset_;
  std::vector<double> weight_;
  std::vector<std::int64_t> blur_neighbors_;
  std::vector<double> self_;
};

}  // namespace spcrf
