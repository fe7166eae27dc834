#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

using namespace spcrf;
using namespace spcrf::test;

namespace {

std::vector<TuneSample> disk_dataset(std::size_t count) {
  std::vector<TuneSample> data;
  NoisyDiskParams p;
  p.size = 32;
  p.salt_blobs = 10;
  for (std::size_t s = 0; s < count; ++s) {
    auto d = noisy_disk(100 + s, p);
    data.push_back({d.image, d.unary, {segment_filter(d.image, d.segments)}, d.truth});
  }
  return data;
}

TuneOptions fast_options() {
  TuneOptions o;
  o.infer.backend = Backend::lattice;
  o.infer.iterations = 5;
  return o;
}

double standalone_miou(const std::vector<TuneSample>& data, const CrfConfig& base, std::size_t levels,
                       const TuneOptions& o) {
  ConfusionMatrix cm(base.labels);
  for (const auto& s : data) {
    auto cfg = base;
    cfg.sp_levels.assign(s.levels.begin(), s.levels.begin() + std::ptrdiff_t(levels));
    accumulate(cm, infer(s.unary, s.image, cfg, o.infer).labels, s.ground_truth);
  }
  return report(cm).mean_iou;
}

}  // namespace

TEST(GridSpec, ParseAndOrder) {
  const auto g = GridSpec::parse("theta_alpha_s=10,20,30;r=0.25,0.5");
  ASSERT_EQ(g.axes.size(), 2u);
  EXPECT_EQ(g.axes[0].name, "theta_alpha_s");
  EXPECT_EQ(g.size(), 6u);
  EXPECT_EQ(g.point(0), (std::vector<double>{10, 0.25}));
  EXPECT_EQ(g.point(1), (std::vector<double>{10, 0.5}));
  EXPECT_EQ(g.point(5), (std::vector<double>{30, 0.5}));
}

TEST(GridSpec, Validation) {
  EXPECT_THROW(GridSpec::parse("r").validate(), UsageError);
  EXPECT_THROW(GridSpec::parse("r=a,b"), UsageError);
  EXPECT_THROW(GridSpec::parse("").validate(), UsageError);
  auto g = GridSpec::parse("r=0.1,0.2;theta_alpha_s=1,2,3");
  g.cap = 5;
  EXPECT_THROW(g.validate(), UsageError);
}

TEST(GridSearch, SinglePoint) {
  const auto data = disk_dataset(1);
  const auto spec = GridSpec::parse("r=0.5");
  const auto o = fast_options();
  const auto r = grid_search(spec, data, CrfConfig::potts(2), o);
  EXPECT_EQ(r.best_index, 0u);
  EXPECT_EQ(r.best_point, (std::vector<double>{0.5}));
  ASSERT_EQ(r.table.size(), 1u);
  EXPECT_EQ(r.best_score, r.table[0].metrics->mean_iou);
  EXPECT_DOUBLE_EQ(r.best_score, standalone_miou(data, CrfConfig::potts(2), 1, o));
}

TEST(GridSearch, SuperpixelOffIsNotSelectedWhenItHurts) {
  const auto data = disk_dataset(3);
  const auto o = fast_options();
  const auto base = CrfConfig::potts(2);
  const double off = standalone_miou(data, base, 0, o);
  const double on = standalone_miou(data, base, 1, o);
  ASSERT_GT(on, off) << "dataset must favour the superpixel term";

  const auto by_levels = grid_search(GridSpec::parse("levels=0,1"), data, base, o);
  EXPECT_EQ(by_levels.best_point, (std::vector<double>{1}));
  EXPECT_DOUBLE_EQ(by_levels.table[0].metrics->mean_iou, off);
  EXPECT_DOUBLE_EQ(by_levels.table[1].metrics->mean_iou, on);

  // r = 0 zeroes the superpixel weight, which is outside (0, 1]: that point fails and is skipped.
  const auto by_r = grid_search(GridSpec::parse("r=0,0.5"), data, base, o);
  EXPECT_FALSE(by_r.table[0].metrics.has_value());
  EXPECT_FALSE(by_r.table[0].error.empty());
  EXPECT_EQ(by_r.best_point, (std::vector<double>{0.5}));
}

TEST(GridSearch, TiesGoToEarliestPoint) {
  const auto data = disk_dataset(1);
  // Without superpixel levels theta_alpha_s has no effect, so every point ties.
  const auto r = grid_search(GridSpec::parse("levels=0;theta_alpha_s=40,10,20"), data, CrfConfig::potts(2),
                             fast_options());
  EXPECT_EQ(r.best_index, 0u);
  EXPECT_EQ(r.best_point, (std::vector<double>{0, 40}));
}

TEST(GridSearch, DeterministicAcrossThreads) {
  const auto data = disk_dataset(2);
  const auto spec = GridSpec::parse("theta_alpha_s=10,30;r=0.25,1");
  auto o = fast_options();
  const auto a = grid_search(spec, data, CrfConfig::potts(2), o);
  o.threads = 3;
  const auto b = grid_search(spec, data, CrfConfig::potts(2), o);
  std::ostringstream ta, tb;
  write_table_csv(ta, spec, a);
  write_table_csv(tb, spec, b);
  EXPECT_EQ(ta.str(), tb.str());
  EXPECT_EQ(a.best_index, b.best_index);
  double best = 0;
  for (const auto& row : a.table) best = std::max(best, row.metrics->mean_iou);
  EXPECT_EQ(a.best_score, best);
  EXPECT_EQ(a.best_config.sp.theta_alpha_s, a.best_point[0]);
  EXPECT_EQ(a.best_config.sp.r, a.best_point[1]);
}

TEST(GridSearch, UnknownAxisAndAllFailed) {
  const auto data = disk_dataset(1);
  EXPECT_THROW(grid_search(GridSpec::parse("gamma=1"), data, CrfConfig::potts(2), fast_options()), UsageError);
  EXPECT_THROW(grid_search(GridSpec::parse("r=0,2"), data, CrfConfig::potts(2), fast_options()), Error);
  EXPECT_THROW(grid_search(GridSpec::parse("r=0.5"), {}, CrfConfig::potts(2), fast_options()), UsageError);
}

TEST(GridSearch, CsvLayout) {
  const auto data = disk_dataset(1);
  const auto spec = GridSpec::parse("r=0,1");
  const auto r = grid_search(spec, data, CrfConfig::potts(2), fast_options());
  std::ostringstream out;
  write_table_csv(out, spec, r);
  std::istringstream in(out.str());
  std::string header, first, second;
  std::getline(in, header);
  std::getline(in, first);
  std::getline(in, second);
  EXPECT_EQ(header, "r,global,average,meaniou,status");
  EXPECT_EQ(first.rfind("0,,,,failed: ", 0), 0u) << first;
  EXPECT_EQ(second.substr(second.size() - 3), ",ok");
}
