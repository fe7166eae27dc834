#pragma once

// Potential functions and Gibbs energy of the superpixel-enhanced dense CRF:
//
//   E(x) = sum_i psi_U(x_i)
//        + sum_{i<j} mu(x_i,x_j) [w1 k_app(i,j; D) + w2 k_smooth(i,j)]
//        + sum_h sum_{i<j} mu(x_i,x_j) r w1 k_sp(i,j; D_sh)
//
// with unit-peak Gaussians
//   k_app    = exp(-|P_i-P_j|^2 / 2 theta_alpha^2   - |I_i-I_j|^2 / 2 theta_beta^2)
//   k_smooth = exp(-|P_i-P_j|^2 / 2 theta_gamma^2)
//   k_sp     = exp(-|P_i-P_j|^2 / 2 theta_alpha_s^2 - |C_si-C_sj|^2 / 2 theta_beta^2)
//
// Every superpixel level shares theta_alpha_s, r, theta_beta and mu with the
// pixel-level term; those are stored once in CrfConfig.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spcrf/error.hpp"
#include "spcrf/imaging.hpp"
#include "spcrf/parallel.hpp"
#include "spcrf/superpixel.hpp"

namespace spcrf {

// Dense L x L matrix indexed by (label, label).
class LabelMatrix {
 public:
  LabelMatrix() = default;
  LabelMatrix(std::size_t labels, double fill) : n_(labels), v_(labels * labels, fill) {}
  LabelMatrix(std::size_t labels, std::vector<double> values) : n_(labels), v_(std::move(values)) {
    if (v_.size() != n_ * n_) throw DimensionError("LabelMatrix: expected L*L entries");
  }

  std::size_t labels() const { return n_; }
  double operator()(std::size_t a, std::size_t b) const { return v_[a * n_ + b]; }
  double& operator()(std::size_t a, std::size_t b) { return v_[a * n_ + b]; }
  std::span<const double> values() const { return v_; }

  friend bool operator==(const LabelMatrix&, const LabelMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> v_;
};

// Label compatibility mu(l, l'): non-negative, zero cost means agreement.
class CompatibilityMatrix {
 public:
  CompatibilityMatrix() = default;

  static CompatibilityMatrix potts(std::size_t labels) {
    LabelMatrix m(labels, 1.0);
    for (std::size_t l = 0; l < labels; ++l) m(l, l) = 0.0;
    CompatibilityMatrix c(std::move(m));
    c.potts_ = true;
    return c;
  }

  explicit CompatibilityMatrix(LabelMatrix m) : m_(std::move(m)) {
    for (double v : m_.values()) {
      if (!std::isfinite(v) || v < 0.0) throw RangeError("CompatibilityMatrix: entries must be finite and >= 0");
    }
  }

  std::size_t labels() const { return m_.labels(); }
  bool is_potts() const { return potts_; }
  double operator()(std::size_t a, std::size_t b) const { return m_(a, b); }

 private:
  LabelMatrix m_;
  bool potts_ = false;
};

// Kernel weight: one scalar (DenseCRF style) or an L x L matrix (CRF-RNN style).
class KernelWeight {
 public:
  KernelWeight(double scalar = 1.0) : scalar_(scalar) {}  // NOLINT: implicit from scalar is intended
  explicit KernelWeight(LabelMatrix m) : matrix_(std::move(m)) {}

  bool is_matrix() const { return matrix_.has_value(); }
  double scalar() const { return scalar_; }
  const LabelMatrix& matrix() const { return *matrix_; }

  double operator()(std::size_t a, std::size_t b) const { return matrix_ ? (*matrix_)(a, b) : scalar_; }

  KernelWeight scaled(double r) const {
    if (!matrix_) return KernelWeight(scalar_ * r);
    LabelMatrix m = *matrix_;
    for (std::size_t a = 0; a < m.labels(); ++a)
      for (std::size_t b = 0; b < m.labels(); ++b) m(a, b) *= r;
    return KernelWeight(std::move(m));
  }

  bool is_zero() const {
    if (!matrix_) return scalar_ == 0.0;
    for (double v : matrix_->values())
      if (v != 0.0) return false;
    return true;
  }

  void validate(std::size_t labels, const char* name) const {
    if (matrix_) {
      if (matrix_->labels() != labels) throw DimensionError(std::string(name) + ": weight matrix is not L x L");
      for (double v : matrix_->values())
        if (!std::isfinite(v) || v < 0.0) throw RangeError(std::string(name) + ": weights must be finite and >= 0");
    } else if (!std::isfinite(scalar_) || scalar_ < 0.0) {
      throw RangeError(std::string(name) + ": weight must be finite and >= 0");
    }
  }

 private:
  double scalar_ = 1.0;
  std::optional<LabelMatrix> matrix_;
};

struct PairwiseKernelConfig {
  double theta_alpha = 160.0;  // appearance kernel, spatial stddev (pixels)
  double theta_beta = 3.0;     // appearance kernel, color stddev (channel units)
  double theta_gamma = 3.0;    // smoothness kernel, spatial stddev (pixels)
  KernelWeight w1 = 10.0;      // appearance weight
  KernelWeight w2 = 3.0;       // smoothness weight

  void validate(std::size_t labels) const {
    if (!(theta_alpha > 0.0) || !(theta_beta > 0.0) || !(theta_gamma > 0.0)) {
      throw RangeError("PairwiseKernelConfig: theta_alpha, theta_beta, theta_gamma must be > 0");
    }
    w1.validate(labels, "w1");
    w2.validate(labels, "w2");
  }
};

// Superpixel-level kernel. Its color bandwidth is the pixel-level
// theta_beta and its weight is r * w1; only theta_alpha_s and r are free.
struct SpKernelConfig {
  double theta_alpha_s = 30.0;
  double r = 0.5;

  void validate() const {
    if (!(theta_alpha_s > 0.0)) throw RangeError("SpKernelConfig: theta_alpha_s must be > 0");
    if (!(r > 0.0 && r <= 1.0)) throw RangeError("SpKernelConfig: r must lie in (0, 1]");
  }
};

// mu(x_i,x_j) (theta_p + theta_v exp(-theta_beta |C_si - C_sj|^2)), Potts mu.
struct ContrastSpParams {
  double theta_p = 0.0;
  double theta_v = 0.0;
  double theta_beta = 1.0;

  void validate() const {
    if (!(theta_p >= 0.0) || !(theta_v >= 0.0) || !(theta_p + theta_v > 0.0)) {
      throw RangeError("ContrastSpParams: need theta_p, theta_v >= 0 and theta_p + theta_v > 0");
    }
    if (!(theta_beta > 0.0)) throw RangeError("ContrastSpParams: theta_beta must be > 0");
  }
};

struct CrfConfig {
  std::size_t labels = 2;
  CompatibilityMatrix compatibility = CompatibilityMatrix::potts(2);
  PairwiseKernelConfig pairwise;
  SpKernelConfig sp;
  std::vector<FilteredImage> sp_levels;  // H >= 0; empty is plain DenseCRF
  std::size_t iterations = 10;
  // When false the appearance kernel on D is dropped; w1 still scales the
  // superpixel levels through r.
  bool appearance_on_image = true;

  static CrfConfig potts(std::size_t labels) {
    CrfConfig cfg;
    cfg.labels = labels;
    cfg.compatibility = CompatibilityMatrix::potts(labels);
    return cfg;
  }

  void validate(const Image& img) const {
    if (labels == 0) throw RangeError("CrfConfig: L must be >= 1");
    if (compatibility.labels() != labels) throw DimensionError("CrfConfig: compatibility matrix is not L x L");
    if (iterations == 0) throw RangeError("CrfConfig: iterations must be >= 1");
    pairwise.validate(labels);
    if (!sp_levels.empty()) sp.validate();
    for (std::size_t h = 0; h < sp_levels.size(); ++h) {
      const auto& f = sp_levels[h].image;
      if (f.width() != img.width() || f.height() != img.height()) {
        throw DimensionError("CrfConfig: superpixel level " + std::to_string(h) + " is " +
                             std::to_string(f.width()) + "x" + std::to_string(f.height()) + ", image is " +
                             std::to_string(img.width()) + "x" + std::to_string(img.height()));
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Closed-form kernels on a single pixel pair.

namespace detail {

inline double squared_position_distance(std::size_t width, std::size_t i, std::size_t j) {
  const double dx = double(i % width) - double(j % width);
  const double dy = double(i / width) - double(j / width);
  return dx * dx + dy * dy;
}

inline void require_scalar(const KernelWeight& w, const char* what) {
  if (w.is_matrix()) throw UsageError(std::string(what) + ": defined for scalar weights only");
}

}  // namespace detail

// w1 exp(-|dP|^2/2ta^2 - |dI|^2/2tb^2) + w2 exp(-|dP|^2/2tg^2), scalar weights.
inline double pairwise_kernel(const Image& img, std::size_t i, std::size_t j, const PairwiseKernelConfig& cfg) {
  detail::require_scalar(cfg.w1, "pairwise_kernel");
  detail::require_scalar(cfg.w2, "pairwise_kernel");
  const double dp = detail::squared_position_distance(img.width(), i, j);
  const double dc = squared_distance(img[i], img[j]);
  const double appearance = std::exp(-dp / (2.0 * cfg.theta_alpha * cfg.theta_alpha) -
                                     dc / (2.0 * cfg.theta_beta * cfg.theta_beta));
  const double smoothness = std::exp(-dp / (2.0 * cfg.theta_gamma * cfg.theta_gamma));
  return cfg.w1.scalar() * appearance + cfg.w2.scalar() * smoothness;
}

// r w1 exp(-|dP|^2/2ta_s^2 - |dC|^2/2tb^2) on the segment-filtered image.
inline double sp_kernel(const FilteredImage& filtered, std::size_t i, std::size_t j, const SpKernelConfig& cfg,
                        const PairwiseKernelConfig& base) {
  detail::require_scalar(base.w1, "sp_kernel");
  const double dp = detail::squared_position_distance(filtered.image.width(), i, j);
  const double dc = squared_distance(filtered[i], filtered[j]);
  return cfg.r * base.w1.scalar() *
         std::exp(-dp / (2.0 * cfg.theta_alpha_s * cfg.theta_alpha_s) -
                  dc / (2.0 * base.theta_beta * base.theta_beta));
}

inline double contrast_sp_potential(const FilteredImage& filtered, std::size_t i, std::size_t j, std::int32_t li,
                                    std::int32_t lj, const ContrastSpParams& p) {
  if (li == lj) return 0.0;
  return p.theta_p + p.theta_v * std::exp(-p.theta_beta * squared_distance(filtered[i], filtered[j]));
}

// A superpixel clique: labels of its pixels and its edges in local indices.
struct Clique {
  std::vector<std::int32_t> labels;
  std::vector<Edge> edges;
};

// All pairs of a clique, the fully connected case.
inline Clique complete_clique(std::vector<std::int32_t> labels) {
  Clique c{std::move(labels), {}};
  c.edges = complete_edges(c.labels.size());
  return c;
}

// Number of clique edges whose endpoints carry different labels.
inline std::size_t disagreeing_edges(const Clique& clique) {
  std::size_t n = 0;
  for (const auto& [a, b] : clique.edges) {
    if (a >= clique.labels.size() || b >= clique.labels.size()) throw RangeError("Clique: edge endpoint out of range");
    if (clique.labels[a] != clique.labels[b]) ++n;
  }
  return n;
}

// Robust P^n Potts form of the summed intra-segment contrast potential:
// N (1/|c|) gamma_max while N < |c|, gamma_max otherwise, with
// gamma_max = |c| (theta_p + theta_v) and |c| the clique's edge count.
inline double robust_pn_closed_form(const Clique& clique, const ContrastSpParams& p) {
  if (clique.edges.empty()) throw RangeError("robust_pn_closed_form: clique has no edges");
  const double edges = double(clique.edges.size());
  const double gamma_max = edges * (p.theta_p + p.theta_v);
  const auto violated = double(disagreeing_edges(clique));
  return violated < edges ? violated * (1.0 / edges) * gamma_max : gamma_max;
}

// ---------------------------------------------------------------------------
// Kernel bank: every Gaussian term of the energy as (features, compat).

enum class KernelKind { appearance, smoothness, superpixel };

// exp(-|f_i - f_j|^2 / 2) on bandwidth-scaled features, paired with the
// label cost C(l, l') = mu(l, l') w(l, l') that multiplies it.
struct GaussianKernel {
  KernelKind kind = KernelKind::appearance;
  std::size_t level = 0;  // superpixel level index for KernelKind::superpixel
  std::size_t dims = 0;
  std::vector<double> features;  // N x dims
  LabelMatrix cost;

  std::span<const double> feature(std::size_t i) const {
    return std::span<const double>(features).subspan(i * dims, dims);
  }

  double operator()(std::size_t i, std::size_t j) const {
    const double* a = &features[i * dims];
    const double* b = &features[j * dims];
    double d = 0.0;
    for (std::size_t k = 0; k < dims; ++k) {
      const double t = a[k] - b[k];
      d += t * t;
    }
    return std::exp(-0.5 * d);
  }
};

namespace detail {

inline LabelMatrix label_cost(const CompatibilityMatrix& mu, const KernelWeight& w, std::size_t labels) {
  LabelMatrix m(labels, 0.0);
  for (std::size_t a = 0; a < labels; ++a)
    for (std::size_t b = 0; b < labels; ++b) m(a, b) = mu(a, b) * w(a, b);
  return m;
}

inline std::vector<double> bilateral_features(const Image& colors, double spatial, double range) {
  const std::size_t w = colors.width();
  std::vector<double> f(colors.size() * 5);
  for (std::size_t p = 0; p < colors.size(); ++p) {
    f[5 * p + 0] = double(p % w) / spatial;
    f[5 * p + 1] = double(p / w) / spatial;
    for (std::size_t c = 0; c < 3; ++c) f[5 * p + 2 + c] = colors[p][c] / range;
  }
  return f;
}

inline std::vector<double> spatial_features(std::size_t width, std::size_t n, double spatial) {
  std::vector<double> f(n * 2);
  for (std::size_t p = 0; p < n; ++p) {
    f[2 * p + 0] = double(p % width) / spatial;
    f[2 * p + 1] = double(p / width) / spatial;
  }
  return f;
}

}  // namespace detail

// Builds the active kernels of cfg; terms whose weight is identically zero
// are omitted.
inline std::vector<GaussianKernel> build_kernels(const Image& img, const CrfConfig& cfg) {
  cfg.validate(img);
  const auto& pw = cfg.pairwise;
  std::vector<GaussianKernel> kernels;
  if (cfg.appearance_on_image && !pw.w1.is_zero()) {
    kernels.push_back({KernelKind::appearance, 0, 5, detail::bilateral_features(img, pw.theta_alpha, pw.theta_beta),
                       detail::label_cost(cfg.compatibility, pw.w1, cfg.labels)});
  }
  if (!pw.w2.is_zero()) {
    kernels.push_back({KernelKind::smoothness, 0, 2, detail::spatial_features(img.width(), img.size(), pw.theta_gamma),
                       detail::label_cost(cfg.compatibility, pw.w2, cfg.labels)});
  }
  if (!pw.w1.is_zero()) {
    const KernelWeight ws = pw.w1.scaled(cfg.sp.r);
    for (std::size_t h = 0; h < cfg.sp_levels.size(); ++h) {
      kernels.push_back({KernelKind::superpixel, h, 5,
                         detail::bilateral_features(cfg.sp_levels[h].image, cfg.sp.theta_alpha_s, pw.theta_beta),
                         detail::label_cost(cfg.compatibility, ws, cfg.labels)});
    }
  }
  return kernels;
}

// ---------------------------------------------------------------------------
// Energies.

struct SpLevelEnergy {
  double intra = 0.0;
  double extra = 0.0;
};

struct EnergyParts {
  double unary = 0.0;
  double pairwise = 0.0;  // appearance + smoothness on D
  std::vector<SpLevelEnergy> sp;

  double total() const {
    double t = unary + pairwise;
    for (const auto& s : sp) t += s.intra + s.extra;
    return t;
  }
};

namespace detail {

inline void check_energy_inputs(const LabelMap& labeling, const UnaryField& unary, const Image& img,
                                const CrfConfig& cfg) {
  if (labeling.width() != img.width() || labeling.height() != img.height() || unary.width() != img.width() ||
      unary.height() != img.height()) {
    throw DimensionError("energy: labeling, unary and image dimensions differ");
  }
  if (unary.labels() != cfg.labels) throw DimensionError("energy: unary L differs from config L");
  for (auto l : labeling.labels()) {
    if (static_cast<std::size_t>(l) >= cfg.labels) throw RangeError("energy: label out of range");
  }
}

}  // namespace detail

// Unary, pixel-level pairwise, and per-level superpixel sums split into
// intra-segment and cross-segment pairs. Superpixel levels must carry their
// segment map. Per-row partial sums are combined in index order, so the
// result does not depend on the thread count.
inline EnergyParts energy_decomposed(const LabelMap& labeling, const UnaryField& unary, const Image& img,
                                     const CrfConfig& cfg, unsigned threads = 1) {
  detail::check_energy_inputs(labeling, unary, img, cfg);
  const auto kernels = build_kernels(img, cfg);
  const std::size_t n = img.size();
  const std::size_t levels = cfg.sp_levels.size();
  for (std::size_t h = 0; h < levels; ++h) {
    if (!cfg.sp_levels[h].segments) {
      throw UsageError("energy_decomposed: superpixel level " + std::to_string(h) + " has no segment map");
    }
  }

  // Row layout: [pairwise, intra_0, extra_0, intra_1, extra_1, ...]
  const std::size_t stride = 1 + 2 * levels;
  std::vector<double> rows(n * stride, 0.0);
  parallel_for(n, threads, [&](std::size_t i) {
    double* row = &rows[i * stride];
    const auto li = static_cast<std::size_t>(labeling[i]);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto lj = static_cast<std::size_t>(labeling[j]);
      for (const auto& k : kernels) {
        const double c = k.cost(li, lj);
        if (c == 0.0) continue;
        const double v = c * k(i, j);
        if (k.kind == KernelKind::superpixel) {
          const auto& seg = *cfg.sp_levels[k.level].segments;
          row[1 + 2 * k.level + (seg[i] == seg[j] ? 0 : 1)] += v;
        } else {
          row[0] += v;
        }
      }
    }
  });

  EnergyParts parts;
  parts.sp.resize(levels);
  for (std::size_t i = 0; i < n; ++i) {
    parts.unary += unary(i, static_cast<std::size_t>(labeling[i]));
    const double* row = &rows[i * stride];
    parts.pairwise += row[0];
    for (std::size_t h = 0; h < levels; ++h) {
      parts.sp[h].intra += row[1 + 2 * h];
      parts.sp[h].extra += row[2 + 2 * h];
    }
  }
  return parts;
}

// Total Gibbs energy over the fully connected pair set i < j.
inline double gibbs_energy(const LabelMap& labeling, const UnaryField& unary, const Image& img, const CrfConfig& cfg,
                           unsigned threads = 1) {
  detail::check_energy_inputs(labeling, unary, img, cfg);
  const auto kernels = build_kernels(img, cfg);
  const std::size_t n = img.size();
  std::vector<double> rows(n, 0.0);
  parallel_for(n, threads, [&](std::size_t i) {
    const auto li = static_cast<std::size_t>(labeling[i]);
    double acc = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto lj = static_cast<std::size_t>(labeling[j]);
      for (const auto& k : kernels) {
        const double c = k.cost(li, lj);
        if (c != 0.0) acc += c * k(i, j);
      }
    }
    rows[i] = acc;
  });
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += unary(i, static_cast<std::size_t>(labeling[i])) + rows[i];
  return total;
}

// Sum of contrast_sp_potential over all pairs i < j, split by whether the
// pair lies inside one segment. Requires the level's segment map.
inline SpLevelEnergy contrast_sp_energy(const LabelMap& labeling, const FilteredImage& filtered,
                                        const ContrastSpParams& p) {
  p.validate();
  if (!filtered.segments) throw UsageError("contrast_sp_energy: filtered image has no segment map");
  if (labeling.size() != filtered.size()) throw DimensionError("contrast_sp_energy: size mismatch");
  const auto& seg = *filtered.segments;
  SpLevelEnergy e;
  for (std::size_t i = 0; i < labeling.size(); ++i) {
    for (std::size_t j = i + 1; j < labeling.size(); ++j) {
      const double v = contrast_sp_potential(filtered, i, j, labeling[i], labeling[j], p);
      (seg[i] == seg[j] ? e.intra : e.extra) += v;
    }
  }
  return e;
}

// The intra part of contrast_sp_energy written as one robust P^n term per
// segment (each segment a fully connected clique).
inline double contrast_sp_intra_as_pn(const LabelMap& labeling, const SegmentMap& seg, const ContrastSpParams& p) {
  if (labeling.size() != seg.size()) throw DimensionError("contrast_sp_intra_as_pn: size mismatch");
  std::vector<std::vector<std::int32_t>> members(seg.segment_count());
  for (std::size_t i = 0; i < seg.size(); ++i) members[seg[i]].push_back(labeling[i]);
  double total = 0.0;
  for (auto& m : members) {
    if (m.size() < 2) continue;
    total += robust_pn_closed_form(complete_clique(std::move(m)), p);
  }
  return total;
}

}  // namespace spcrf
