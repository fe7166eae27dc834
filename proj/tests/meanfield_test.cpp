#include <gtest/gtest.h>

#include "support.hpp"

using namespace spcrf;
using namespace spcrf::test;

namespace {

CrfConfig zero_pairwise(std::size_t labels) {
  auto cfg = CrfConfig::potts(labels);
  cfg.pairwise.w1 = 0.0;
  cfg.pairwise.w2 = 0.0;
  return cfg;
}

CrfConfig small_config(Rng& rng, std::size_t labels) {
  auto cfg = CrfConfig::potts(labels);
  cfg.pairwise.theta_alpha = uniform(rng, 1.0, 6.0);
  cfg.pairwise.theta_beta = uniform(rng, 10.0, 80.0);
  cfg.pairwise.theta_gamma = uniform(rng, 0.5, 3.0);
  cfg.pairwise.w1 = uniform(rng, 0.0, 2.0);
  cfg.pairwise.w2 = uniform(rng, 0.0, 2.0);
  cfg.sp.theta_alpha_s = uniform(rng, 1.0, 6.0);
  cfg.sp.r = uniform(rng, 0.1, 1.0);
  return cfg;
}

// E_Q[E] - H(Q) by direct expectation over every unordered pair and label pair.
double free_energy_oracle(const MarginalField& q, const UnaryField& u, const Image& img, const CrfConfig& cfg) {
  const std::size_t n = img.size(), labels = cfg.labels;
  double f = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < labels; ++l) {
      f += q(i, l) * u(i, l);
      if (q(i, l) > 0) f += q(i, l) * std::log(q(i, l));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double k = pairwise_kernel(img, i, j, cfg.pairwise);
      for (const auto& lvl : cfg.sp_levels) k += sp_kernel(lvl, i, j, cfg.sp, cfg.pairwise);
      for (std::size_t a = 0; a < labels; ++a)
        for (std::size_t b = 0; b < labels; ++b) f += q(i, a) * q(j, b) * cfg.compatibility(a, b) * k;
    }
  }
  return f;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t e = 0; e < a.size(); ++e) m = std::max(m, std::abs(a[e] - b[e]));
  return m;
}

}  // namespace

TEST(InitMarginals, Examples) {
  const auto uniform_q = init_marginals(UnaryField(2, 1, 4, std::vector<double>(8, 1.3)));
  for (double v : uniform_q.values()) EXPECT_DOUBLE_EQ(v, 0.25);

  const auto saturated = init_marginals(UnaryField(1, 1, 2, {0.0, 1e6}));
  EXPECT_DOUBLE_EQ(saturated(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(saturated(0, 1), 0.0);

  const auto q = init_marginals(UnaryField(1, 1, 2, {-std::log(0.7), -std::log(0.3)}));
  EXPECT_NEAR(q(0, 0), 0.7, 1e-15);
  EXPECT_NEAR(q(0, 1), 0.3, 1e-15);
}

TEST(MarginalFieldType, RejectsUnnormalized) {
  EXPECT_THROW(MarginalField(1, 1, 2, {0.5, 0.6}), RangeError);
  EXPECT_THROW(MarginalField(1, 1, 2, {1.5, -0.5}), RangeError);
  EXPECT_NO_THROW(MarginalField(1, 1, 2, {0.5, 0.5 + 1e-7}));
}

TEST(NaiveMessages, ZeroWeightsGiveZero) {
  Rng rng(1);
  const auto img = random_image(rng, 4, 4);
  const auto q = random_marginals(rng, 4, 4, 3);
  for (double v : message_pass_naive(q, img, zero_pairwise(3)).values) EXPECT_EQ(v, 0.0);
  for (double v : message_pass_lattice(q, img, zero_pairwise(3)).values) EXPECT_EQ(v, 0.0);
}

TEST(NaiveMessages, SinglePixelGivesZero) {
  const Image img(1, 1, Color{4, 5, 6});
  const MarginalField q(1, 1, 2, {0.2, 0.8});
  for (double v : message_pass_naive(q, img, CrfConfig::potts(2)).values) EXPECT_EQ(v, 0.0);
}

TEST(NaiveMessages, TwoPixelHandExpansion) {
  const Image img(2, 1, std::vector<Color>{{10, 20, 30}, {14, 20, 27}});
  auto cfg = CrfConfig::potts(3);
  cfg.pairwise = {2.0, 5.0, 1.5, 1.25, 0.5};
  // |dP|^2 = 1, |dI|^2 = 16 + 9 = 25.
  const double k = 1.25 * std::exp(-1.0 / 8.0 - 25.0 / 50.0) + 0.5 * std::exp(-1.0 / (2 * 2.25));
  const MarginalField q(2, 1, 3, {0.1, 0.3, 0.6, 0.5, 0.2, 0.3});
  const auto m = message_pass_naive(q, img, cfg);
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_NEAR(m(0, l), k * (1.0 - q(1, l)), 1e-14);
    EXPECT_NEAR(m(1, l), k * (1.0 - q(0, l)), 1e-14);
  }
}

TEST(Lattice, SelfWeightsMatchImpulseResponse) {
  Rng rng(21);
  for (std::size_t dims : {1u, 2u, 5u}) {
    const std::size_t n = 40;
    std::vector<double> f(n * dims);
    for (auto& x : f) x = uniform(rng, 0.0, 3.0);
    const PermutohedralLattice lattice(f, dims);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> impulse(n, 0.0);
      impulse[i] = 1.0;
      EXPECT_NEAR(lattice.self_weights()[i], lattice.filter(impulse, 1)[i], 1e-12) << "dims " << dims;
    }
  }
}

TEST(LatticeMessages, UniformQStaysUniformUnderSmoothness) {
  Rng rng(2);
  const auto img = random_image(rng, 12, 10);
  auto cfg = CrfConfig::potts(3);
  cfg.pairwise.w1 = 0.0;
  cfg.pairwise.w2 = 1.0;
  const MarginalField q(12, 10, 3, std::vector<double>(360, 1.0 / 3.0));
  const auto m = message_pass_lattice(q, img, cfg);
  for (std::size_t i = 0; i < 120; ++i) {
    EXPECT_GT(m(i, 0), 0.0);
    EXPECT_NEAR(m(i, 1), m(i, 0), 1e-12);
    EXPECT_NEAR(m(i, 2), m(i, 0), 1e-12);
  }
  const auto next = update_from_messages(UnaryField(12, 10, 3, std::vector<double>(360, 0.0)), m);
  for (double v : next.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
}

TEST(LatticeMessages, NormalizedSumsTrackNaive) {
  Rng rng(3);
  for (int t = 0; t < 3; ++t) {
    const auto img = patchy_image(rng, 20, 16);
    auto cfg = CrfConfig::potts(3);
    cfg.sp_levels.push_back(segment_filter(img, slic_segment(img, {12, 10.0, 10})));
    const auto q = random_marginals(rng, 20, 16, 3);
    const MessagePasser naive(img, cfg, Backend::naive);
    const MessagePasser lattice(img, cfg, Backend::lattice);
    ASSERT_EQ(naive.kernels().size(), 3u);
    for (std::size_t k = 0; k < naive.kernels().size(); ++k) {
      EXPECT_LE(max_abs_diff(naive.normalized_sums(k, q), lattice.normalized_sums(k, q)), 0.05) << "kernel " << k;
    }
  }
}

TEST(SynchronousStep, ZeroPairwiseReachesInitInOneStep) {
  Rng rng(4);
  const auto img = random_image(rng, 5, 4);
  const auto u = random_unary(rng, 5, 4, 3);
  const auto q0 = random_marginals(rng, 5, 4, 3);
  const auto q1 = mf_step_synchronous(q0, u, img, zero_pairwise(3), Backend::naive);
  EXPECT_LE(max_abs_diff(q1.values(), init_marginals(u).values()), 1e-15);
}

TEST(SynchronousStep, SymmetricInstanceStaysUniform) {
  const Image img(4, 4, Color{80, 80, 80});
  const UnaryField u(4, 4, 3, std::vector<double>(48, 0.7));
  auto q = init_marginals(u);
  for (auto backend : {Backend::naive, Backend::lattice}) {
    const auto next = mf_step_synchronous(q, u, img, CrfConfig::potts(3), backend);
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t l = 0; l < 3; ++l) EXPECT_NEAR(next(i, l), next(i, 0), 1e-12);
  }
}

TEST(SynchronousStep, TwoPixelHandIteration) {
  const Image img(2, 1, Color{50, 50, 50});
  auto cfg = CrfConfig::potts(2);
  cfg.pairwise = {3.0, 3.0, 3.0, 4.0, 4.0};
  const double k = 8.0 * std::exp(-1.0 / 18.0);
  const UnaryField u(2, 1, 2, {0.4, 0.6, 0.45, 0.55});

  double a0 = 1.0 / (1.0 + std::exp(-0.2)), b0 = 1.0 / (1.0 + std::exp(-0.1));
  auto q = init_marginals(u);
  EXPECT_NEAR(q(0, 0), a0, 1e-15);
  for (int it = 0; it < 6; ++it) {
    // Label-0 message is k Q_other(1), label-1 message is k Q_other(0).
    const double e0a = 0.4 + k * (1 - b0), e1a = 0.6 + k * b0;
    const double e0b = 0.45 + k * (1 - a0), e1b = 0.55 + k * a0;
    const double na = 1.0 / (1.0 + std::exp(e0a - e1a)), nb = 1.0 / (1.0 + std::exp(e0b - e1b));
    a0 = na, b0 = nb;
    q = mf_step_synchronous(q, u, img, cfg, Backend::naive);
    EXPECT_NEAR(q(0, 0), a0, 1e-12);
    EXPECT_NEAR(q(1, 0), b0, 1e-12);
  }
  EXPECT_GT(q(0, 0), 0.99);
  EXPECT_GT(q(1, 0), 0.99);
}

TEST(SynchronousStep, ThreadCountDoesNotChangeResult) {
  Rng rng(5);
  const auto img = patchy_image(rng, 24, 20);
  const auto u = random_unary(rng, 24, 20, 4);
  auto cfg = CrfConfig::potts(4);
  cfg.sp_levels.push_back(segment_filter(img, slic_segment(img, {20, 10.0, 5})));
  const auto q = init_marginals(u);
  for (auto backend : {Backend::naive, Backend::lattice}) {
    EXPECT_EQ(mf_step_synchronous(q, u, img, cfg, backend, 1), mf_step_synchronous(q, u, img, cfg, backend, 4));
  }
}

TEST(SequentialStep, ZeroPairwiseMatchesSynchronous) {
  Rng rng(6);
  const auto img = random_image(rng, 4, 3);
  const auto u = random_unary(rng, 4, 3, 3);
  const auto q = random_marginals(rng, 4, 3, 3);
  const auto cfg = zero_pairwise(3);
  EXPECT_LE(max_abs_diff(mf_step_sequential(q, u, img, cfg).values(),
                         mf_step_synchronous(q, u, img, cfg, Backend::naive).values()),
            1e-15);
}

TEST(SequentialStep, SinglePixelConvergesInOneSweep) {
  const Image img(1, 1, Color{1, 2, 3});
  const UnaryField u(1, 1, 3, {0.3, 1.1, 2.0});
  const auto cfg = CrfConfig::potts(3);
  const auto q1 = mf_step_sequential(MarginalField(1, 1, 3, {1.0, 0.0, 0.0}), u, img, cfg);
  const auto q2 = mf_step_sequential(q1, u, img, cfg);
  EXPECT_EQ(q1, q2);
  EXPECT_LE(max_abs_diff(q1.values(), init_marginals(u).values()), 1e-15);
}

TEST(SequentialStep, FreeEnergyNeverIncreases) {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    const std::size_t w = uniform_index(rng, 1, 6), h = uniform_index(rng, 1, 6), labels = uniform_index(rng, 2, 4);
    const auto img = random_image(rng, w, h);
    const auto u = random_unary(rng, w, h, labels);
    auto cfg = small_config(rng, labels);
    for (std::size_t lvl = 0; lvl < std::size_t(t % 3); ++lvl) {
      cfg.sp_levels.push_back(segment_filter(img, random_segments(rng, w, h, uniform_index(rng, 1, 3))));
    }
    auto q = random_marginals(rng, w, h, labels);
    double f = free_energy(q, u, img, cfg);
    for (int sweep = 0; sweep < 5; ++sweep) {
      q = mf_step_sequential(q, u, img, cfg);
      const double next = free_energy(q, u, img, cfg);
      EXPECT_LE(next, f + 1e-9);
      f = next;
    }
  }
}

TEST(SequentialStep, LargeInstanceRejected) {
  const Image img(65, 64, Color{0, 0, 0});
  const UnaryField u(65, 64, 2, std::vector<double>(65 * 64 * 2, 0.0));
  EXPECT_THROW(mf_step_sequential(init_marginals(u), u, img, CrfConfig::potts(2)), TooLargeError);
}

TEST(FreeEnergy, OneHotEqualsGibbsEnergy) {
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    const auto img = random_image(rng, 3, 3);
    const auto u = random_unary(rng, 3, 3, 3);
    auto cfg = small_config(rng, 3);
    cfg.sp_levels.push_back(segment_filter(img, random_segments(rng, 3, 3, 3)));
    const auto x = random_labels(rng, 3, 3, 3);
    std::vector<double> q(27, 0.0);
    for (std::size_t i = 0; i < 9; ++i) q[i * 3 + std::size_t(x[i])] = 1.0;
    EXPECT_NEAR(free_energy(MarginalField(3, 3, 3, q), u, img, cfg), gibbs_energy(x, u, img, cfg), 1e-12);
  }
}

TEST(FreeEnergy, UniformZeroEnergyIsNegativeEntropy) {
  const Image img(3, 2, Color{7, 7, 7});
  const UnaryField u(3, 2, 4, std::vector<double>(24, 0.0));
  const MarginalField q(3, 2, 4, std::vector<double>(24, 0.25));
  EXPECT_NEAR(free_energy(q, u, img, zero_pairwise(4)), -6.0 * std::log(4.0), 1e-12);
}

TEST(FreeEnergy, MatchesDirectExpectation) {
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    const auto img = random_image(rng, 3, 2);
    const auto u = random_unary(rng, 3, 2, 3);
    auto cfg = small_config(rng, 3);
    cfg.sp_levels.push_back(segment_filter(img, random_segments(rng, 3, 2, 2)));
    const auto q = random_marginals(rng, 3, 2, 3);
    EXPECT_NEAR(free_energy(q, u, img, cfg), free_energy_oracle(q, u, img, cfg), 1e-12);
    const auto m = message_pass_naive(q, img, cfg);
    EXPECT_NEAR(free_energy_from_messages(q, u, m), free_energy(q, u, img, cfg), 1e-12);
  }
}

TEST(Infer, ZeroPairwiseIsUnaryArgmin) {
  Rng rng(10);
  const auto img = random_image(rng, 6, 5);
  const auto u = random_unary(rng, 6, 5, 4);
  const auto r = infer(u, img, zero_pairwise(4));
  for (std::size_t i = 0; i < 30; ++i) {
    const auto p = u.pixel(i);
    EXPECT_EQ(r.labels[i], std::int32_t(std::min_element(p.begin(), p.end()) - p.begin()));
  }
}

TEST(Infer, ArgmaxTiesGoToLowestLabel) {
  const MarginalField q(2, 1, 3, {0.4, 0.4, 0.2, 0.2, 0.4, 0.4});
  EXPECT_EQ(argmax_labels(q), LabelMap(2, 1, {0, 1}));
}

TEST(Infer, ReportAndNormalization) {
  Rng rng(11);
  const auto img = patchy_image(rng, 10, 8);
  const auto u = random_unary(rng, 10, 8, 3);
  InferOptions opts;
  opts.backend = Backend::naive;
  opts.iterations = 7;
  opts.track_energy = true;
  const auto r = infer(u, img, CrfConfig::potts(3), opts);
  EXPECT_EQ(r.report.iterations, 7u);
  EXPECT_EQ(r.report.max_change.size(), 7u);
  EXPECT_EQ(r.report.free_energy.size(), 7u);
  EXPECT_EQ(r.report.backend, Backend::naive);
  EXPECT_NEAR(r.report.free_energy.back(), free_energy(r.marginals, u, img, CrfConfig::potts(3)), 1e-9);
  for (std::size_t i = 0; i < 80; ++i) {
    double s = 0;
    for (double v : r.marginals.pixel(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  EXPECT_EQ(r.labels, argmax_labels(r.marginals));
}

TEST(Infer, EarlyStopEndsOnceChangeIsSmall) {
  Rng rng(12);
  const auto img = random_image(rng, 5, 5);
  const auto u = random_unary(rng, 5, 5, 2);
  InferOptions opts;
  opts.early_stop = true;
  opts.iterations = 50;
  const auto r = infer(u, img, zero_pairwise(2), opts);
  EXPECT_EQ(r.report.iterations, 1u);
  EXPECT_LT(r.report.max_change.back(), 1e-4);
}

TEST(Infer, NoLevelsMatchesPlainDenseCrf) {
  Rng rng(13);
  const auto img = patchy_image(rng, 8, 8);
  const auto u = random_unary(rng, 8, 8, 3);
  auto with_sp = CrfConfig::potts(3);
  with_sp.sp_levels.push_back(segment_filter(img, slic_segment(img, {4, 10.0, 10})));
  const auto plain = CrfConfig::potts(3);
  InferOptions opts;
  opts.backend = Backend::naive;
  const auto a = infer(u, img, plain, opts);
  auto truncated = with_sp;
  truncated.sp_levels.clear();
  EXPECT_EQ(infer(u, img, truncated, opts).marginals, a.marginals);
  EXPECT_NE(infer(u, img, with_sp, opts).marginals, a.marginals);
}

TEST(Infer, ThreadCountDoesNotChangeOutput) {
  Rng rng(14);
  const auto img = patchy_image(rng, 30, 22);
  const auto u = random_unary(rng, 30, 22, 3);
  auto cfg = CrfConfig::potts(3);
  cfg.sp_levels.push_back(segment_filter(img, slic_segment(img, {30, 10.0, 10})));
  InferOptions one, many;
  many.threads = 5;
  const auto a = infer(u, img, cfg, one);
  const auto b = infer(u, img, cfg, many);
  EXPECT_EQ(a.marginals, b.marginals);
  EXPECT_EQ(a.labels, b.labels);
}

TEST(Infer, DimensionMismatch) {
  Rng rng(15);
  EXPECT_THROW(infer(random_unary(rng, 3, 3, 2), random_image(rng, 3, 4), CrfConfig::potts(2)), DimensionError);
  EXPECT_THROW(infer(random_unary(rng, 3, 3, 3), random_image(rng, 3, 3), CrfConfig::potts(2)), DimensionError);
}

TEST(Backend, Parsing) {
  EXPECT_EQ(parse_backend("naive"), Backend::naive);
  EXPECT_EQ(parse_backend("lattice"), Backend::lattice);
  EXPECT_THROW(parse_backend("fast"), UsageError);
  EXPECT_STREQ(to_string(Backend::lattice), "lattice");
}
