#pragma once

// Exhaustive grid search over scalar hyperparameters, scored by MeanIOU over
// a validation set. Points are visited row-major over the declared axes
// (last axis fastest); ties go to the earliest point.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "spcrf/config.hpp"
#include "spcrf/error.hpp"
#include "spcrf/imaging.hpp"
#include "spcrf/meanfield.hpp"
#include "spcrf/metrics.hpp"
#include "spcrf/parallel.hpp"
#include "spcrf/potentials.hpp"

namespace spcrf {

struct GridAxis {
  std::string name;
  std::vector<double> values;
};

// Axis names are the config keys (theta_alpha_s, r, theta_alpha, ...) plus
// `levels`, the number of superpixel levels kept per sample (0 disables
// the superpixel terms).
struct GridSpec {
  std::vector<GridAxis> axes;
  std::size_t cap = 10000;

  std::size_t size() const {
    std::size_t n = 1;
    for (const auto& a : axes) n *= a.values.size();
    return n;
  }

  // Coordinates of the point with row-major index `index`.
  std::vector<double> point(std::size_t index) const {
    std::vector<double> p(axes.size());
    for (std::size_t a = axes.size(); a-- > 0;) {
      p[a] = axes[a].values[index % axes[a].values.size()];
      index /= axes[a].values.size();
    }
    return p;
  }

  void validate() const {
    if (axes.empty()) throw UsageError("grid: no axes");
    for (const auto& a : axes) {
      if (a.values.empty()) throw UsageError("grid: axis '" + a.name + "' has no values");
    }
    if (size() > cap) {
      throw UsageError("grid: " + std::to_string(size()) + " points exceeds cap " + std::to_string(cap));
    }
  }

  // "name=v1,v2,...;name2=..." as used on the command line.
  static GridSpec parse(const std::string& text) {
    GridSpec spec;
    std::istringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ';')) {
      part = detail::trim(part);
      if (part.empty()) continue;
      const auto eq = part.find('=');
      if (eq == std::string::npos) throw UsageError("grid: axis '" + part + "' lacks '='");
      GridAxis axis{detail::trim(part.substr(0, eq)), {}};
      std::istringstream vs(part.substr(eq + 1));
      std::string v;
      while (std::getline(vs, v, ',')) {
        try {
          axis.values.push_back(detail::parse_real(detail::trim(v), axis.name));
        } catch (const FormatError& e) {
          throw UsageError(std::string("grid: ") + e.what());
        }
      }
      spec.axes.push_back(std::move(axis));
    }
    return spec;
  }
};

struct TuneSample {
  Image image;
  UnaryField unary;
  std::vector<FilteredImage> levels;
  LabelMap ground_truth;
};

struct GridRow {
  std::vector<double> point;
  std::optional<MetricReport> metrics;  // empty when the point failed
  std::string error;
};

struct TuneResult {
  std::size_t best_index = 0;
  std::vector<double> best_point;
  double best_score = 0.0;
  CrfConfig best_config;  // sp_levels left empty; they come per sample
  std::vector<GridRow> table;
};

struct TuneOptions {
  InferOptions infer;  // infer.threads is ignored; points run in parallel instead
  std::optional<std::int32_t> ignore_label = 255;
  unsigned threads = 1;
};

namespace detail {

// base_cfg with the point applied; returns the number of levels to keep.
inline std::size_t apply_point(CrfConfig& cfg, const GridSpec& spec, const std::vector<double>& point,
                               std::size_t max_levels) {
  std::size_t levels = max_levels;
  for (std::size_t a = 0; a < spec.axes.size(); ++a) {
    const auto& name = spec.axes[a].name;
    if (name == "levels") {
      const double v = point[a];
      if (v < 0 || v != std::floor(v) || v > double(max_levels)) {
        throw UsageError("grid: levels=" + std::to_string(v) + " not an integer in [0, " +
                         std::to_string(max_levels) + "]");
      }
      levels = static_cast<std::size_t>(v);
    } else if (!set_parameter(cfg, name, point[a])) {
      throw UsageError("grid: unknown axis '" + name + "'");
    }
  }
  return levels;
}

// MeanIOU-bearing report of one configuration over the whole dataset.
inline MetricReport score_config(const CrfConfig& cfg, std::size_t levels, const std::vector<TuneSample>& dataset,
                                 const TuneOptions& options) {
  ConfusionMatrix cm(cfg.labels, options.ignore_label);
  InferOptions io = options.infer;
  io.threads = 1;
  for (const auto& sample : dataset) {
    CrfConfig local = cfg;
    local.sp_levels.assign(sample.levels.begin(), sample.levels.begin() + static_cast<std::ptrdiff_t>(levels));
    const auto result = infer(sample.unary, sample.image, local, io);
    accumulate(cm, result.labels, sample.ground_truth);
  }
  return report(cm);
}

}  // namespace detail

inline TuneResult grid_search(const GridSpec& spec, const std::vector<TuneSample>& dataset, const CrfConfig& base_cfg,
                              const TuneOptions& options = {}) {
  spec.validate();
  if (dataset.empty()) throw UsageError("grid_search: empty dataset");
  for (const auto& a : spec.axes) {
    CrfConfig probe = base_cfg;
    if (a.name != "levels" && !set_parameter(probe, a.name, a.values.front())) {
      throw UsageError("grid: unknown axis '" + a.name + "'");
    }
  }
  std::size_t max_levels = dataset.front().levels.size();
  for (const auto& s : dataset) max_levels = std::min(max_levels, s.levels.size());

  TuneResult result;
  result.table.resize(spec.size());
  parallel_for(spec.size(), options.threads, [&](std::size_t idx) {
    GridRow& row = result.table[idx];
    row.point = spec.point(idx);
    try {
      CrfConfig cfg = base_cfg;
      cfg.sp_levels.clear();
      const std::size_t levels = detail::apply_point(cfg, spec, row.point, max_levels);
      row.metrics = detail::score_config(cfg, levels, dataset, options);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  });

  std::optional<std::size_t> best;
  for (std::size_t idx = 0; idx < result.table.size(); ++idx) {
    const auto& m = result.table[idx].metrics;
    if (m && (!best || m->mean_iou > result.table[*best].metrics->mean_iou)) best = idx;
  }
  if (!best) {
    throw Error("grid_search: every grid point failed (first error: " + result.table.front().error + ")");
  }
  result.best_index = *best;
  result.best_point = result.table[*best].point;
  result.best_score = result.table[*best].metrics->mean_iou;
  result.best_config = base_cfg;
  result.best_config.sp_levels.clear();
  detail::apply_point(result.best_config, spec, result.best_point, max_levels);
  return result;
}

inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// CSV: one column per axis, then global, average, meaniou, status.
inline void write_table_csv(std::ostream& out, const GridSpec& spec, const TuneResult& result) {
  for (const auto& a : spec.axes) out << a.name << ',';
  out << "global,average,meaniou,status\n";
  for (const auto& row : result.table) {
    for (double v : row.point) out << format_real(v) << ',';
    if (row.metrics) {
      out << format_real(row.metrics->global) << ',' << format_real(row.metrics->average) << ','
          << format_real(row.metrics->mean_iou) << ",ok\n";
    } else {
      std::string msg = row.error;
      for (char& c : msg)
        if (c == ',' || c == '\n' || c == '"') c = ' ';
      out << ",,,failed: " << msg << '\n';
    }
  }
}

}  // namespace spcrf
