#pragma once

// Mean-field inference for the superpixel-enhanced dense CRF.
//
// Each synchronous step computes, from the previous Q,
//   M_i(l)  = sum_k sum_l' C_k(l,l') sum_{j != i} K_k(i,j) Q_j(l')
//   Q'_i(l) = exp(-psi_U(i,l) - M_i(l)) / Z_i
// where the kernels K_k are the appearance, smoothness and one kernel per
// superpixel level (see potentials.hpp). Messages come either from the exact
// O(N^2) sum or from permutohedral-lattice filtering.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spcrf/error.hpp"
#include "spcrf/imaging.hpp"
#include "spcrf/parallel.hpp"
#include "spcrf/permutohedral.hpp"
#include "spcrf/potentials.hpp"

namespace spcrf {

enum class Backend { naive, lattice };

inline const char* to_string(Backend b) { return b == Backend::naive ? "naive" : "lattice"; }

inline Backend parse_backend(const std::string& s) {
  if (s == "naive") return Backend::naive;
  if (s == "lattice") return Backend::lattice;
  throw UsageError("unknown backend '" + s + "' (expected naive or lattice)");
}

// Per-pixel label distributions Q_i(l); each pixel sums to 1 within 1e-6.
class MarginalField {
 public:
  static constexpr double kNormTolerance = 1e-6;

  MarginalField() = default;

  MarginalField(std::size_t width, std::size_t height, std::size_t labels, std::vector<double> values)
      : width_(width), height_(height), labels_(labels), values_(std::move(values)) {
    if (width_ == 0 || height_ == 0 || labels_ == 0) throw DimensionError("MarginalField: zero dimension");
    if (values_.size() != width_ * height_ * labels_) throw DimensionError("MarginalField: value count mismatch");
    for (std::size_t i = 0; i < width_ * height_; ++i) {
      double s = 0.0;
      for (std::size_t l = 0; l < labels_; ++l) {
        const double q = values_[i * labels_ + l];
        if (!(q >= 0.0 && q <= 1.0)) throw RangeError("MarginalField: Q outside [0,1] at pixel " + std::to_string(i));
        s += q;
      }
      if (std::abs(s - 1.0) > kNormTolerance) {
        throw RangeError("MarginalField: unnormalized Q at pixel " + std::to_string(i));
      }
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

  // Same values viewed as an SPUNR1-serializable field.
  UnaryField as_field() const { return UnaryField(width_, height_, labels_, values_); }

  friend bool operator==(const MarginalField&, const MarginalField&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::size_t labels_ = 0;
  std::vector<double> values_;
};

// W x H x L message values M_i(l).
struct MessageField {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t labels = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t l) const { return values[i * labels + l]; }
};

struct InferenceReport {
  std::size_t iterations = 0;
  std::vector<double> max_change;   // per iteration, max |Q' - Q|
  std::vector<double> free_energy;  // per iteration when tracking is on
  Backend backend = Backend::lattice;
};

struct InferOptions {
  Backend backend = Backend::lattice;
  std::optional<std::size_t> iterations;  // defaults to CrfConfig::iterations
  bool track_energy = false;
  bool early_stop = false;
  double tolerance = 1e-4;
  unsigned threads = 1;
};

struct InferenceResult {
  LabelMap labels;
  MarginalField marginals;
  InferenceReport report;
};

namespace detail {

// In-place softmax of -energy over one pixel, max-subtracted.
inline void normalize_negated(std::span<const double> energy, std::span<double> out) {
  double lowest = std::numeric_limits<double>::infinity();
  for (double e : energy) lowest = std::min(lowest, e);
  double z = 0.0;
  for (std::size_t l = 0; l < energy.size(); ++l) {
    out[l] = std::exp(-(energy[l] - lowest));
    z += out[l];
  }
  for (double& q : out) q /= z;
}

inline void check_inputs(const UnaryField& unary, const Image& img, const CrfConfig& cfg) {
  if (unary.width() != img.width() || unary.height() != img.height()) {
    throw DimensionError("inference: unary is " + std::to_string(unary.width()) + "x" +
                         std::to_string(unary.height()) + ", image is " + std::to_string(img.width()) + "x" +
                         std::to_string(img.height()));
  }
  if (unary.labels() != cfg.labels) {
    throw DimensionError("inference: unary has L=" + std::to_string(unary.labels()) + ", config has L=" +
                         std::to_string(cfg.labels));
  }
}

inline void check_marginals(const MarginalField& q, const Image& img, const CrfConfig& cfg) {
  if (q.width() != img.width() || q.height() != img.height() || q.labels() != cfg.labels) {
    throw DimensionError("inference: marginal field dimensions do not match image/config");
  }
}

// Adds sum_l' cost(l,l') acc[l'] to message row m.
inline void apply_cost(const LabelMatrix& cost, std::span<const double> acc, double* m) {
  const std::size_t labels = acc.size();
  for (std::size_t l = 0; l < labels; ++l) {
    double s = 0.0;
    for (std::size_t lp = 0; lp < labels; ++lp) s += cost(l, lp) * acc[lp];
    m[l] += s;
  }
}

}  // namespace detail

inline MarginalField init_marginals(const UnaryField& unary) {
  const std::size_t labels = unary.labels();
  std::vector<double> q(unary.values().size());
  for (std::size_t i = 0; i < unary.pixel_count(); ++i) {
    detail::normalize_negated(unary.pixel(i), std::span<double>(q).subspan(i * labels, labels));
  }
  return MarginalField(unary.width(), unary.height(), labels, std::move(q));
}

// Holds the kernels (and lattices) of one CRF instance so repeated message
// passes do not rebuild them.
class MessagePasser {
 public:
  MessagePasser(const Image& img, const CrfConfig& cfg, Backend backend, unsigned threads = 1)
      : width_(img.width()),
        height_(img.height()),
        labels_(cfg.labels),
        backend_(backend),
        threads_(threads),
        kernels_(build_kernels(img, cfg)) {
    if (backend_ == Backend::lattice) {
      lattices_.reserve(kernels_.size());
      gain_.reserve(kernels_.size());
      scale_.reserve(kernels_.size());
      for (const auto& k : kernels_) {
        lattices_.emplace_back(k.features, k.dims);
        const auto self = lattices_.back().self_weights();
        std::vector<double> g(self.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = 1.0 / std::sqrt(self[i]);
        gain_.push_back(std::move(g));
        scale_.push_back(calibrate(gain_.size() - 1));
      }
    }
  }

  Backend backend() const { return backend_; }
  const std::vector<GaussianKernel>& kernels() const { return kernels_; }

  MessageField messages(const MarginalField& q) const {
    MessageField m{width_, height_, labels_, std::vector<double>(q.values().size(), 0.0)};
    for (std::size_t k = 0; k < kernels_.size(); ++k) {
      const auto acc = neighbour_sums(k, q.values());
      parallel_for(pixels(), threads_, [&](std::size_t i) {
        detail::apply_cost(kernels_[k].cost, std::span<const double>(acc).subspan(i * labels_, labels_),
                           &m.values[i * labels_]);
      });
    }
    return m;
  }

  // For kernel k: sum_{j != i} K(i,j) Q_j(l) / sum_{j != i} K(i,j), i.e. the
  // neighbour-averaged marginal, each backend using its own filter mass.
  std::vector<double> normalized_sums(std::size_t k, const MarginalField& q) const {
    std::vector<double> ones(pixels(), 1.0);
    auto acc = neighbour_sums(k, q.values());
    const auto mass = neighbour_sums(k, ones, 1);
    for (std::size_t i = 0; i < pixels(); ++i) {
      for (std::size_t l = 0; l < labels_; ++l) {
        acc[i * labels_ + l] = mass[i] > 0.0 ? acc[i * labels_ + l] / mass[i] : 0.0;
      }
    }
    return acc;
  }

  // sum_{j != i} K_k(i,j) v_j(c) for every pixel and channel, values >= 0.
  std::vector<double> neighbour_sums(std::size_t k, std::span<const double> v, std::size_t channels = 0) const {
    if (channels == 0) channels = labels_;
    const auto& kernel = kernels_[k];
    const std::size_t n = pixels();
    std::vector<double> out(n * channels, 0.0);
    if (backend_ == Backend::naive) {
      parallel_for(n, threads_, [&](std::size_t i) {
        double* row = &out[i * channels];
        for (std::size_t j = 0; j < n; ++j) {
          if (j == i) continue;
          const double kij = kernel(i, j);
          const double* vj = &v[j * channels];
          for (std::size_t c = 0; c < channels; ++c) row[c] += kij * vj[c];
        }
      });
      return out;
    }
    // Unit peak L(i,j) / sqrt(L(i,i) L(j,j)), so the self term is exactly v_i;
    // the off-diagonal part is then rescaled to the exact neighbour mass.
    const auto& g = gain_[k];
    std::vector<double> scaled(v.begin(), v.end());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < channels; ++c) scaled[i * channels + c] *= g[i];
    }
    const auto filtered = lattices_[k].filter(scaled, channels, threads_);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t e = i * channels + c;
        out[e] = std::max(0.0, (filtered[e] * g[i] - v[e]) * scale_[k]);
      }
    }
    return out;
  }

  std::size_t pixels() const { return width_ * height_; }

 private:
  // Exact over lattice neighbour mass sum_{j != i} K(i,j), pooled over a
  // fixed stride of sample pixels. Called while scale_ is still being filled.
  double calibrate(std::size_t k) const {
    const std::size_t n = pixels();
    const auto& g = gain_[k];
    const auto filtered = lattices_[k].filter(g, 1, threads_);
    const std::size_t samples = std::min<std::size_t>(n, 64);
    const std::size_t stride = n / samples;
    double approx_sum = 0.0;
    double exact_sum = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
      const std::size_t i = s * stride + stride / 2;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) exact_sum += kernels_[k](i, j);
      }
      approx_sum += filtered[i] * g[i] - 1.0;
    }
    return exact_sum > 0.0 && approx_sum > 0.0 ? exact_sum / approx_sum : 1.0;
  }

  std::size_t width_;
  std::size_t height_;
  std::size_t labels_;
  Backend backend_;
  unsigned threads_;
  std::vector<GaussianKernel> kernels_;
  std::vector<PermutohedralLattice> lattices_;
  std::vector<std::vector<double>> gain_;
  std::vector<double> scale_;
};

inline MessageField message_pass_naive(const MarginalField& q, const Image& img, const CrfConfig& cfg,
                                       unsigned threads = 1) {
  detail::check_marginals(q, img, cfg);
  return MessagePasser(img, cfg, Backend::naive, threads).messages(q);
}

inline MessageField message_pass_lattice(const MarginalField& q, const Image& img, const CrfConfig& cfg,
                                         unsigned threads = 1) {
  detail::check_marginals(q, img, cfg);
  return MessagePasser(img, cfg, Backend::lattice, threads).messages(q);
}

// Q' from precomputed messages of the previous Q.
inline MarginalField update_from_messages(const UnaryField& unary, const MessageField& m, unsigned threads = 1) {
  const std::size_t labels = unary.labels();
  std::vector<double> q(unary.values().size());
  parallel_for(unary.pixel_count(), threads, [&](std::size_t i) {
    std::vector<double> energy(labels);
    for (std::size_t l = 0; l < labels; ++l) energy[l] = unary(i, l) + m(i, l);
    detail::normalize_negated(energy, std::span<double>(q).subspan(i * labels, labels));
  });
  return MarginalField(unary.width(), unary.height(), labels, std::move(q));
}

inline MarginalField mf_step_synchronous(const MarginalField& q, const UnaryField& unary, const Image& img,
                                         const CrfConfig& cfg, Backend backend, unsigned threads = 1) {
  detail::check_inputs(unary, img, cfg);
  detail::check_marginals(q, img, cfg);
  return update_from_messages(unary, MessagePasser(img, cfg, backend, threads).messages(q), threads);
}

// One raster-order sweep of single-pixel updates with immediate writes,
// exact messages. Each pixel update minimises the free energy in Q_i with
// the others fixed, so the sweep never increases it (for symmetric costs).
inline MarginalField mf_step_sequential(const MarginalField& q, const UnaryField& unary, const Image& img,
                                        const CrfConfig& cfg) {
  constexpr std::size_t kMaxPixels = 4096;
  detail::check_inputs(unary, img, cfg);
  detail::check_marginals(q, img, cfg);
  const std::size_t n = img.size();
  if (n > kMaxPixels) {
    throw TooLargeError("mf_step_sequential: " + std::to_string(n) + " pixels exceeds limit " +
                        std::to_string(kMaxPixels));
  }
  const std::size_t labels = cfg.labels;
  const auto kernels = build_kernels(img, cfg);
  std::vector<double> values(q.values().begin(), q.values().end());
  std::vector<double> acc(labels), message(labels), energy(labels);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(message.begin(), message.end(), 0.0);
    for (const auto& k : kernels) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double kij = k(i, j);
        for (std::size_t l = 0; l < labels; ++l) acc[l] += kij * values[j * labels + l];
      }
      detail::apply_cost(k.cost, acc, message.data());
    }
    for (std::size_t l = 0; l < labels; ++l) energy[l] = unary(i, l) + message[l];
    detail::normalize_negated(energy, std::span<double>(values).subspan(i * labels, labels));
  }
  return MarginalField(img.width(), img.height(), labels, std::move(values));
}

// Mean-field free energy E_Q[E] - H(Q) with the exact pair sum over i < j.
inline double free_energy(const MarginalField& q, const UnaryField& unary, const Image& img, const CrfConfig& cfg,
                          unsigned threads = 1) {
  detail::check_inputs(unary, img, cfg);
  detail::check_marginals(q, img, cfg);
  const auto kernels = build_kernels(img, cfg);
  const std::size_t n = img.size();
  const std::size_t labels = cfg.labels;
  std::vector<double> rows(n, 0.0);
  parallel_for(n, threads, [&](std::size_t i) {
    std::vector<double> acc(labels), pulled(labels);
    double row = 0.0;
    for (std::size_t l = 0; l < labels; ++l) {
      const double qi = q(i, l);
      row += qi * unary(i, l);
      if (qi > 0.0) row += qi * std::log(qi);
    }
    for (const auto& k : kernels) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t j = i + 1; j < n; ++j) {
        const double kij = k(i, j);
        for (std::size_t l = 0; l < labels; ++l) acc[l] += kij * q(j, l);
      }
      std::fill(pulled.begin(), pulled.end(), 0.0);
      detail::apply_cost(k.cost, acc, pulled.data());
      for (std::size_t l = 0; l < labels; ++l) row += q(i, l) * pulled[l];
    }
    rows[i] = row;
  });
  double total = 0.0;
  for (double r : rows) total += r;
  return total;
}

// Free energy from messages of the same Q: sum Q psi_U + 1/2 sum Q M + sum Q ln Q.
// Equals free_energy when every cost matrix is symmetric and M is exact.
inline double free_energy_from_messages(const MarginalField& q, const UnaryField& unary, const MessageField& m) {
  double total = 0.0;
  for (std::size_t i = 0; i < q.pixel_count(); ++i) {
    for (std::size_t l = 0; l < q.labels(); ++l) {
      const double qi = q(i, l);
      total += qi * unary(i, l) + 0.5 * qi * m(i, l);
      if (qi > 0.0) total += qi * std::log(qi);
    }
  }
  return total;
}

// Per-pixel argmax, ties to the lowest label.
inline LabelMap argmax_labels(const MarginalField& q) {
  std::vector<std::int32_t> labels(q.pixel_count());
  for (std::size_t i = 0; i < q.pixel_count(); ++i) {
    std::size_t best = 0;
    for (std::size_t l = 1; l < q.labels(); ++l)
      if (q(i, l) > q(i, best)) best = l;
    labels[i] = static_cast<std::int32_t>(best);
  }
  return LabelMap(q.width(), q.height(), std::move(labels));
}

inline InferenceResult infer(const UnaryField& unary, const Image& img, const CrfConfig& cfg,
                             const InferOptions& options = {}) {
  detail::check_inputs(unary, img, cfg);
  const std::size_t iterations = options.iterations.value_or(cfg.iterations);
  if (iterations == 0) throw RangeError("infer: iterations must be >= 1");
  const MessagePasser passer(img, cfg, options.backend, options.threads);

  InferenceReport report;
  report.backend = options.backend;
  MarginalField q = init_marginals(unary);
  MessageField m = passer.messages(q);
  for (std::size_t it = 0; it < iterations; ++it) {
    MarginalField next = update_from_messages(unary, m, options.threads);
    double change = 0.0;
    for (std::size_t e = 0; e < next.values().size(); ++e) {
      change = std::max(change, std::abs(next.values()[e] - q.values()[e]));
    }
    q = std::move(next);
    report.max_change.push_back(change);
    ++report.iterations;
    const bool stop = options.early_stop && change < options.tolerance;
    if (options.track_energy || (!stop && it + 1 < iterations)) m = passer.messages(q);
    if (options.track_energy) report.free_energy.push_back(free_energy_from_messages(q, unary, m));
    if (stop) break;
  }
  return InferenceResult{argmax_labels(q), std::move(q), std::move(report)};
}

}  // namespace spcrf
