#pragma once

// Command-line front end. Subcommands: superpixels, segfilter, infer, energy,
// eval, tune, oracle. Exit codes: 0 success, 1 usage error, 2 data error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "spcrf/config.hpp"
#include "spcrf/error.hpp"
#include "spcrf/imaging.hpp"
#include "spcrf/meanfield.hpp"
#include "spcrf/metrics.hpp"
#include "spcrf/oracle.hpp"
#include "spcrf/potentials.hpp"
#include "spcrf/superpixel.hpp"
#include "spcrf/tuner.hpp"

namespace spcrf::cli {

// Model variants: plain DenseCRF, pairwise term on the filtered image only,
// and D plus one or two superpixel levels.
enum class Preset { none, densecrf, sp_crf, denseho, denseho2 };

inline Preset parse_preset(const std::string& s) {
  if (s.empty()) return Preset::none;
  if (s == "densecrf") return Preset::densecrf;
  if (s == "sp-crf") return Preset::sp_crf;
  if (s == "denseho") return Preset::denseho;
  if (s == "denseho2") return Preset::denseho2;
  throw UsageError("unknown preset '" + s + "' (densecrf, sp-crf, denseho, denseho2)");
}

struct Model {
  Image image;  // observation of the pixel-level term
  CrfConfig config;
};

// Loads levels from --seg (filtered here) and --filtered (taken as is),
// then applies the preset's level-count rule.
inline Model build_model(const Image& image, std::size_t labels, const std::vector<std::string>& seg_paths,
                         const std::vector<std::string>& filtered_paths, Preset preset,
                         const std::string& config_path) {
  Model model{image, CrfConfig::potts(labels)};
  if (!config_path.empty()) apply_config(model.config, config_path);

  const std::size_t count = seg_paths.size() + filtered_paths.size();
  auto require = [&](std::size_t n, const char* name) {
    if (count != n) {
      throw UsageError(std::string("preset ") + name + " needs exactly " + std::to_string(n) +
                       " superpixel level(s), got " + std::to_string(count));
    }
  };
  switch (preset) {
    case Preset::densecrf: require(0, "densecrf"); break;
    case Preset::sp_crf: require(1, "sp-crf"); break;
    case Preset::denseho: require(1, "denseho"); break;
    case Preset::denseho2: require(2, "denseho2"); break;
    case Preset::none: break;
  }

  std::vector<FilteredImage> levels;
  for (const auto& p : seg_paths) {
    levels.push_back(segment_filter(image, std::make_shared<const SegmentMap>(read_segment_map(p))));
  }
  for (const auto& p : filtered_paths) levels.push_back(FilteredImage{read_image(p), nullptr});

  if (preset == Preset::sp_crf) {
    model.image = levels.front().image;
  } else {
    model.config.sp_levels = std::move(levels);
  }
  model.config.validate(model.image);
  return model;
}

inline void write_q(const MarginalField& q, const std::string& path) { write_unary(q.as_field(), path); }

namespace detail {

struct Common {
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

inline void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Seed for any randomized step (default 0)");
  cmd->add_option("--threads", c.threads, "Worker threads, 0 = auto (default 1)");
}

struct ModelFlags {
  std::string image, unary, preset, config;
  std::vector<std::string> segs, filtered;
};

inline void add_model_flags(CLI::App* cmd, ModelFlags& f) {
  cmd->add_option("--image", f.image, "Input image (PPM P6)")->required();
  cmd->add_option("--unary", f.unary, "Unary potentials (SPUNR1)")->required();
  cmd->add_option("--seg", f.segs, "Segment map (SPSEG1 or CSV); repeat for more levels");
  cmd->add_option("--filtered", f.filtered, "Pre-filtered image (PPM); repeat for more levels");
  cmd->add_option("--preset", f.preset, "densecrf | sp-crf | denseho | denseho2");
  cmd->add_option("--config", f.config, "Hyperparameter file (key = value)");
}

struct Loaded {
  UnaryField unary;
  Model model;
};

inline Loaded load_model(const ModelFlags& f) {
  const Preset preset = parse_preset(f.preset);
  const auto image = read_image(f.image);
  auto unary = read_unary(f.unary);
  auto model = build_model(image, unary.labels(), f.segs, f.filtered, preset, f.config);
  return {std::move(unary), std::move(model)};
}

}  // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Superpixel-enhanced dense CRF inference toolkit", "spcrf"};
  app.require_subcommand(1);
  app.fallthrough(false);

  detail::Common common;

  // superpixels
  auto* sp_cmd = app.add_subcommand("superpixels", "SLIC-style superpixel segmentation");
  std::string sp_in, sp_out;
  SlicParams slic;
  sp_cmd->add_option("--in", sp_in, "Input image (PPM P6)")->required();
  sp_cmd->add_option("--k", slic.target_segments, "Target number of segments")->required();
  sp_cmd->add_option("--compactness", slic.compactness, "Spatial weight m (default 10)");
  sp_cmd->add_option("--iters", slic.max_iterations, "k-means iterations (default 10)");
  sp_cmd->add_option("--out", sp_out, "Output segment map (SPSEG1)")->required();
  detail::add_common(sp_cmd, common);

  // segfilter
  auto* sf_cmd = app.add_subcommand("segfilter", "Replace each pixel by its segment's mean color");
  std::string sf_in, sf_seg, sf_out;
  sf_cmd->add_option("--in", sf_in, "Input image (PPM P6)")->required();
  sf_cmd->add_option("--seg", sf_seg, "Segment map (SPSEG1 or CSV)")->required();
  sf_cmd->add_option("--out", sf_out, "Output image (PPM P6)")->required();
  detail::add_common(sf_cmd, common);

  // infer
  auto* inf_cmd = app.add_subcommand("infer", "Mean-field inference");
  detail::ModelFlags inf_flags;
  std::string inf_backend = "lattice", inf_out, inf_out_q;
  std::optional<std::size_t> inf_iters;
  bool inf_track = false, inf_early = false;
  detail::add_model_flags(inf_cmd, inf_flags);
  inf_cmd->add_option("--backend", inf_backend, "naive | lattice (default lattice)");
  inf_cmd->add_option("--iters", inf_iters, "Mean-field iterations (default 10 or config)");
  inf_cmd->add_flag("--track-energy", inf_track, "Report free energy per iteration");
  inf_cmd->add_flag("--early-stop", inf_early, "Stop when max |dQ| < 1e-4");
  inf_cmd->add_option("--out", inf_out, "Output label map (PGM)")->required();
  inf_cmd->add_option("--out-q", inf_out_q, "Output marginals (SPUNR1)");
  detail::add_common(inf_cmd, common);

  // energy
  auto* en_cmd = app.add_subcommand("energy", "Decomposed Gibbs energy of a labeling");
  detail::ModelFlags en_flags;
  std::string en_labels;
  detail::add_model_flags(en_cmd, en_flags);
  en_cmd->add_option("--labels", en_labels, "Labeling (PGM)")->required();
  detail::add_common(en_cmd, common);

  // eval
  auto* ev_cmd = app.add_subcommand("eval", "Global / Average / MeanIOU over a directory pair");
  std::string ev_pred, ev_gt;
  std::size_t ev_classes = 0;
  int ev_ignore = 255;
  ev_cmd->add_option("--pred", ev_pred, "Directory of predicted label maps")->required();
  ev_cmd->add_option("--gt", ev_gt, "Directory of ground-truth label maps")->required();
  ev_cmd->add_option("--classes", ev_classes, "Number of classes L")->required();
  ev_cmd->add_option("--ignore", ev_ignore, "Ground-truth label to skip (default 255, -1 for none)");
  detail::add_common(ev_cmd, common);

  // tune
  auto* tu_cmd = app.add_subcommand("tune", "Grid search maximizing MeanIOU");
  std::string tu_list, tu_grid, tu_out, tu_config, tu_backend = "lattice";
  std::optional<std::size_t> tu_iters;
  int tu_ignore = 255;
  tu_cmd->add_option("--list", tu_list, "Lines of image;unary;seg1[,seg2];gt")->required();
  tu_cmd->add_option("--grid", tu_grid, "Axes, e.g. \"theta_alpha_s=10,20,30;r=0.25,0.5\"")->required();
  tu_cmd->add_option("--out", tu_out, "Score table (CSV)")->required();
  tu_cmd->add_option("--config", tu_config, "Base hyperparameter file");
  tu_cmd->add_option("--backend", tu_backend, "naive | lattice (default lattice)");
  tu_cmd->add_option("--iters", tu_iters, "Mean-field iterations");
  tu_cmd->add_option("--ignore", tu_ignore, "Ground-truth label to skip (default 255, -1 for none)");
  detail::add_common(tu_cmd, common);

  // oracle (debugging aid, hidden from help)
  auto* or_cmd = app.add_subcommand("oracle", "Exact enumeration on tiny instances");
  or_cmd->group("");
  detail::ModelFlags or_flags;
  std::string or_out, or_out_q;
  detail::add_model_flags(or_cmd, or_flags);
  or_cmd->add_option("--out", or_out, "MAP labeling (PGM)")->required();
  or_cmd->add_option("--out-q", or_out_q, "Exact marginals (SPUNR1)");
  detail::add_common(or_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 1;
  }

  try {
    if (*sp_cmd) {
      write_segment_map(slic_segment(read_image(sp_in), slic), sp_out);
      return 0;
    }
    if (*sf_cmd) {
      const auto img = read_image(sf_in);
      write_image(segment_filter(img, read_segment_map(sf_seg)).image, sf_out);
      return 0;
    }
    if (*inf_cmd) {
      InferOptions opts;
      opts.backend = parse_backend(inf_backend);
      opts.iterations = inf_iters;
      opts.track_energy = inf_track;
      opts.early_stop = inf_early;
      opts.threads = common.threads;
      const auto loaded = detail::load_model(inf_flags);
      const auto result = infer(loaded.unary, loaded.model.image, loaded.model.config, opts);
      for (std::size_t k = 0; k < result.report.iterations; ++k) {
        out << "iter=" << (k + 1) << " dq=" << format_real(result.report.max_change[k]);
        if (inf_track) out << " F=" << format_real(result.report.free_energy[k]);
        out << '\n';
      }
      write_label_map(result.labels, inf_out, loaded.model.config.labels);
      if (!inf_out_q.empty()) write_q(result.marginals, inf_out_q);
      return 0;
    }
    if (*en_cmd) {
      const auto loaded = detail::load_model(en_flags);
      const auto labeling = read_label_map(en_labels, loaded.model.config.labels);
      const auto parts =
          energy_decomposed(labeling, loaded.unary, loaded.model.image, loaded.model.config, common.threads);
      out << "unary=" << format_real(parts.unary) << '\n';
      out << "pairwise=" << format_real(parts.pairwise) << '\n';
      for (std::size_t h = 0; h < parts.sp.size(); ++h) {
        out << "sp[" << h << "].intra=" << format_real(parts.sp[h].intra) << '\n';
        out << "sp[" << h << "].extra=" << format_real(parts.sp[h].extra) << '\n';
      }
      out << "total=" << format_real(parts.total()) << '\n';
      return 0;
    }
    if (*ev_cmd) {
      std::optional<std::int32_t> ignore;
      if (ev_ignore >= 0) ignore = ev_ignore;
      const auto r = evaluate_dirs(ev_pred, ev_gt, ev_classes, ignore);
      out << "global=" << format_real(r.global) << " average=" << format_real(r.average)
          << " meaniou=" << format_real(r.mean_iou) << '\n';
      out << "class,accuracy,iou\n";
      for (std::size_t c = 0; c < ev_classes; ++c) {
        out << c << ',' << (r.per_class_acc[c] ? format_real(*r.per_class_acc[c]) : "-") << ','
            << (r.per_class_iou[c] ? format_real(*r.per_class_iou[c]) : "-") << '\n';
      }
      return 0;
    }
    if (*tu_cmd) {
      const auto spec = GridSpec::parse(tu_grid);
      spec.validate();
      std::ifstream list(tu_list);
      if (!list) throw IoError("cannot open list '" + tu_list + "'");
      std::vector<TuneSample> dataset;
      std::string line;
      std::size_t labels = 0;
      while (std::getline(list, line)) {
        line = spcrf::detail::trim(line);
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string f;
        while (std::getline(ls, f, ';')) fields.push_back(spcrf::detail::trim(f));
        if (fields.size() != 4) throw FormatError("tune list: expected image;unary;segs;gt in '" + line + "'");
        TuneSample s{read_image(fields[0]), read_unary(fields[1]), {}, read_label_map(fields[3])};
        std::istringstream segs(fields[2]);
        while (std::getline(segs, f, ',')) {
          f = spcrf::detail::trim(f);
          if (!f.empty()) s.levels.push_back(segment_filter(s.image, read_segment_map(f)));
        }
        if (labels == 0) labels = s.unary.labels();
        if (s.unary.labels() != labels) throw DimensionError("tune list: unaries disagree on L");
        dataset.push_back(std::move(s));
      }
      if (dataset.empty()) throw UsageError("tune: list '" + tu_list + "' has no entries");
      CrfConfig base = CrfConfig::potts(labels);
      if (!tu_config.empty()) apply_config(base, tu_config);
      TuneOptions opts;
      opts.infer.backend = parse_backend(tu_backend);
      opts.infer.iterations = tu_iters;
      opts.threads = common.threads;
      if (tu_ignore >= 0) opts.ignore_label = tu_ignore; else opts.ignore_label.reset();
      const auto result = grid_search(spec, dataset, base, opts);
      std::ofstream csv(tu_out, std::ios::binary);
      if (!csv) throw IoError("cannot open '" + tu_out + "' for writing");
      write_table_csv(csv, spec, result);
      out << "best:";
      for (std::size_t a = 0; a < spec.axes.size(); ++a) {
        out << ' ' << spec.axes[a].name << '=' << format_real(result.best_point[a]);
      }
      out << " meaniou=" << format_real(result.best_score) << '\n';
      return 0;
    }
    if (*or_cmd) {
      const auto loaded = detail::load_model(or_flags);
      const auto exact = exact_inference(loaded.unary, loaded.model.image, loaded.model.config);
      out << "log_partition=" << format_real(exact.log_partition) << '\n';
      out << "map_energy=" << format_real(exact.map_energy) << '\n';
      write_label_map(exact.map_labeling, or_out, loaded.model.config.labels);
      if (!or_out_q.empty()) write_q(exact.marginals, or_out_q);
      return 0;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace spcrf::cli
