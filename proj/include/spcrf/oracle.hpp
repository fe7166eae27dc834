#pragma once

// Exact inference by enumerating all L^N labelings. Test oracle for the
// energy and mean-field code; only usable on tiny instances.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "spcrf/error.hpp"
#include "spcrf/imaging.hpp"
#include "spcrf/meanfield.hpp"
#include "spcrf/potentials.hpp"

namespace spcrf {

struct ExactResult {
  double log_partition = 0.0;
  MarginalField marginals;
  LabelMap map_labeling;
  double map_energy = 0.0;
};

inline constexpr std::uint64_t kMaxEnumeratedLabelings = std::uint64_t{1} << 20;

// Labelings are visited in lexicographic order (pixel 0 most significant),
// so the first minimum found is the lexicographically smallest MAP.
inline ExactResult exact_inference(const UnaryField& unary, const Image& img, const CrfConfig& cfg) {
  detail::check_inputs(unary, img, cfg);
  const std::size_t n = img.size();
  const std::size_t labels = cfg.labels;
  std::uint64_t total = 1;
  for (std::size_t i = 0; i < n; ++i) {
    total *= labels;
    if (total > kMaxEnumeratedLabelings) {
      throw TooLargeError("exact_inference: L^N exceeds 2^20 (N=" + std::to_string(n) +
                          ", L=" + std::to_string(labels) + ")");
    }
  }

  // Pair costs psi_ij(a, b) for i < j.
  const auto kernels = build_kernels(img, cfg);
  const std::size_t ll = labels * labels;
  std::vector<double> pair_cost(n * n * ll, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double* t = &pair_cost[(i * n + j) * ll];
      for (const auto& k : kernels) {
        const double kij = k(i, j);
        for (std::size_t a = 0; a < labels; ++a)
          for (std::size_t b = 0; b < labels; ++b) t[a * labels + b] += k.cost(a, b) * kij;
      }
    }
  }

  std::vector<std::size_t> x(n, 0);
  auto energy_of = [&]() {
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      e += unary(i, x[i]);
      for (std::size_t j = i + 1; j < n; ++j) e += pair_cost[(i * n + j) * ll + x[i] * labels + x[j]];
    }
    return e;
  };
  auto advance = [&]() {
    for (std::size_t p = n; p-- > 0;) {
      if (++x[p] < labels) return;
      x[p] = 0;
    }
  };

  std::vector<double> energies(total);
  double lowest = std::numeric_limits<double>::infinity();
  std::uint64_t argmin = 0;
  for (std::uint64_t s = 0; s < total; ++s, advance()) {
    energies[s] = energy_of();
    if (energies[s] < lowest) {
      lowest = energies[s];
      argmin = s;
    }
  }

  double z = 0.0;
  for (double e : energies) z += std::exp(-(e - lowest));
  const double log_z = -lowest + std::log(z);

  std::vector<double> marg(n * labels, 0.0);
  std::fill(x.begin(), x.end(), 0);
  for (std::uint64_t s = 0; s < total; ++s, advance()) {
    const double p = std::exp(-(energies[s] - lowest)) / z;
    for (std::size_t i = 0; i < n; ++i) marg[i * labels + x[i]] += p;
  }
  // Renormalize against summation rounding.
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t l = 0; l < labels; ++l) s += marg[i * labels + l];
    for (std::size_t l = 0; l < labels; ++l) marg[i * labels + l] /= s;
  }

  std::vector<std::int32_t> map(n);
  std::uint64_t code = argmin;
  for (std::size_t p = n; p-- > 0;) {
    map[p] = static_cast<std::int32_t>(code % labels);
    code /= labels;
  }
  LabelMap map_labeling(img.width(), img.height(), std::move(map));
  const double map_energy = gibbs_energy(map_labeling, unary, img, cfg);
  return ExactResult{log_z, MarginalField(img.width(), img.height(), labels, std::move(marg)),
                     std::move(map_labeling), map_energy};
}

}  // namespace spcrf
