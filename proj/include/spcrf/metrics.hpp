#pragma once

// Segmentation scores from a confusion matrix n_ij (pixels of class i
// predicted as j), with t_i = sum_j n_ij and t = sum_i t_i:
//   global   = sum_i n_ii / t
//   average  = 1/n_cl sum_i n_ii / t_i
//   mean_iou = 1/n_cl sum_i n_ii / (t_i + sum_j n_ji - n_ii)
// n_cl counts classes present in the ground truth (t_i > 0).

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "spcrf/error.hpp"
#include "spcrf/imaging.hpp"

namespace spcrf {

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes, std::optional<std::int32_t> ignore_label = 255)
      : classes_(classes), ignore_(ignore_label), counts_(classes * classes, 0) {
    if (classes == 0) throw RangeError("ConfusionMatrix: need at least one class");
  }

  std::size_t classes() const { return classes_; }
  std::optional<std::int32_t> ignore_label() const { return ignore_; }

  std::uint64_t operator()(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * classes_ + predicted];
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  void add(std::size_t truth, std::size_t predicted, std::uint64_t count = 1) {
    if (truth >= classes_ || predicted >= classes_) throw RangeError("ConfusionMatrix: class out of range");
    counts_[truth * classes_ + predicted] += count;
  }

  void merge(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw DimensionError("ConfusionMatrix: class counts differ");
    for (std::size_t e = 0; e < counts_.size(); ++e) counts_[e] += other.counts_[e];
  }

 private:
  std::size_t classes_;
  std::optional<std::int32_t> ignore_;
  std::vector<std::uint64_t> counts_;
};

struct MetricReport {
  double global = 0.0;
  double average = 0.0;
  double mean_iou = 0.0;
  std::vector<std::optional<double>> per_class_acc;  // nullopt for classes absent from gt
  std::vector<std::optional<double>> per_class_iou;
};

// Adds one prediction / ground-truth pair; gt pixels equal to the ignore
// label are skipped.
inline void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt) {
  if (pred.width() != gt.width() || pred.height() != gt.height()) {
    throw DimensionError("accumulate: prediction " + std::to_string(pred.width()) + "x" +
                         std::to_string(pred.height()) + " vs ground truth " + std::to_string(gt.width()) + "x" +
                         std::to_string(gt.height()));
  }
  ConfusionMatrix local(cm.classes(), cm.ignore_label());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (cm.ignore_label() && gt[i] == *cm.ignore_label()) continue;
    const auto t = static_cast<std::size_t>(gt[i]);
    const auto p = static_cast<std::size_t>(pred[i]);
    if (t >= cm.classes()) throw RangeError("accumulate: ground-truth label " + std::to_string(t) + " out of range");
    if (p >= cm.classes()) throw RangeError("accumulate: predicted label " + std::to_string(p) + " out of range");
    local.add(t, p);
  }
  cm.merge(local);
}

inline MetricReport report(const ConfusionMatrix& cm) {
  const std::size_t k = cm.classes();
  std::uint64_t t = 0, diag = 0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) t += cm(i, j);
    diag += cm(i, i);
  }
  if (t == 0) throw RangeError("report: confusion matrix is empty");

  MetricReport r;
  r.per_class_acc.assign(k, std::nullopt);
  r.per_class_iou.assign(k, std::nullopt);
  r.global = double(diag) / double(t);
  std::size_t present = 0;
  for (std::size_t i = 0; i < k; ++i) {
    std::uint64_t ti = 0, predicted_i = 0;
    for (std::size_t j = 0; j < k; ++j) {
      ti += cm(i, j);
      predicted_i += cm(j, i);
    }
    if (ti == 0) continue;
    ++present;
    const double nii = double(cm(i, i));
    r.per_class_acc[i] = nii / double(ti);
    r.per_class_iou[i] = nii / double(ti + predicted_i - cm(i, i));
    r.average += *r.per_class_acc[i];
    r.mean_iou += *r.per_class_iou[i];
  }
  r.average /= double(present);
  r.mean_iou /= double(present);
  return r;
}

// Scores every *.pgm in pred_dir against the same-named file in gt_dir.
// Files are visited in sorted name order.
inline MetricReport evaluate_dirs(const std::string& pred_dir, const std::string& gt_dir, std::size_t classes,
                                  std::optional<std::int32_t> ignore_label = 255) {
  namespace fs = std::filesystem;
  auto list = [](const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("evaluate_dirs: '" + dir + "' is not a directory");
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".pgm") names.push_back(e.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    return names;
  };
  const auto pred_names = list(pred_dir);
  const auto gt_names = list(gt_dir);
  if (pred_names.empty()) throw IoError("evaluate_dirs: no .pgm files in '" + pred_dir + "'");
  for (const auto& name : pred_names) {
    if (!std::binary_search(gt_names.begin(), gt_names.end(), name)) {
      throw IoError("evaluate_dirs: '" + name + "' has no ground-truth counterpart in '" + gt_dir + "'");
    }
  }
  for (const auto& name : gt_names) {
    if (!std::binary_search(pred_names.begin(), pred_names.end(), name)) {
      throw IoError("evaluate_dirs: '" + name + "' has no prediction counterpart in '" + pred_dir + "'");
    }
  }

  ConfusionMatrix cm(classes, ignore_label);
  for (const auto& name : pred_names) {
    const auto pred = read_label_map((fs::path(pred_dir) / name).string(), classes);
    const auto gt = read_label_map((fs::path(gt_dir) / name).string());
    try {
      accumulate(cm, pred, gt);
    } catch (const DimensionError& e) {
      throw DimensionError(name + ": " + e.what());
    } catch (const RangeError& e) {
      throw RangeError(name + ": " + e.what());
    }
  }
  return report(cm);
}

}  // namespace spcrf
