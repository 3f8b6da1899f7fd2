#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "reid/metrics.hpp"
#include "reid/synthgen.hpp"
#include "test_support.hpp"

namespace reid {
namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

std::vector<ScoredPair> fixed_pairs(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::vector<ScoredPair> out;
  for (double s : pos) out.push_back(testing::scored(out.size(), s, true));
  for (double s : neg) out.push_back(testing::scored(out.size(), s, false));
  return out;
}

TEST(ClusterMetrics, FiveTrackletsByHand) {
  const std::vector<LabeledPartition> p{{Partition({{0, 1, 2}, {3, 4}}), {"A", "A", "B", "B", "B"}}};
  const auto s = pairwise_cluster_metrics(p);
  EXPECT_EQ(s.confusion, (PairConfusion{2, 2, 4, 2}));
  EXPECT_EQ(s.confusion, oracle::pair_counts(p));
  EXPECT_DOUBLE_EQ(s.precision, 0.5);
  EXPECT_DOUBLE_EQ(s.recall, 0.5);
  EXPECT_DOUBLE_EQ(s.f_score, 0.5);
}

TEST(ClusterMetrics, PerfectAndDegeneratePartitions) {
  const std::vector<std::string> ids{"A", "B", "A", "C", "B", "A"};
  const std::vector<LabeledPartition> perfect{{Partition({{0, 2, 5}, {1, 4}, {3}}), ids}};
  const auto s = pairwise_cluster_metrics(perfect);
  EXPECT_EQ(s.precision, 1.0);
  EXPECT_EQ(s.recall, 1.0);
  EXPECT_EQ(s.f_score, 1.0);

  // One cluster per patient: every same-nodule pair found, precision is the
  // fraction of same-nodule pairs (4 of 15).
  const std::vector<LabeledPartition> merged{{Partition({{0, 1, 2, 3, 4, 5}}), ids}};
  const auto m = pairwise_cluster_metrics(merged);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_DOUBLE_EQ(m.precision, 4.0 / 15.0);

  // All singletons: nothing predicted together.
  const std::vector<LabeledPartition> split{{Partition::singletons(6), ids}};
  const auto a = pairwise_cluster_metrics(split);
  EXPECT_EQ(a.precision, 1.0);
  EXPECT_EQ(a.recall, 0.0);
  EXPECT_EQ(a.f_score, 0.0);
}

TEST(ClusterMetrics, ConventionsWithNoPairs) {
  const auto s = scores_from_confusion({});
  EXPECT_EQ(s.precision, 1.0);
  EXPECT_EQ(s.recall, 1.0);
  EXPECT_EQ(s.f_score, 1.0);
  const auto z = scores_from_confusion({0, 3, 0, 2});
  EXPECT_EQ(z.precision, 0.0);
  EXPECT_EQ(z.recall, 0.0);
  EXPECT_EQ(z.f_score, 0.0);
}

TEST(ClusterMetrics, CountsPooledAcrossPatients) {
  std::mt19937_64 rng(71);
  std::uniform_int_distribution<std::size_t> small(1, 9), label(0, 3);
  for (int t = 0; t < 100; ++t) {
    std::vector<LabeledPartition> patients;
    for (int p = 0; p < 5; ++p) {
      const std::size_t n = small(rng);
      std::vector<std::size_t> cluster(n);
      std::vector<std::string> ids(n);
      for (std::size_t i = 0; i < n; ++i) {
        cluster[i] = label(rng);
        ids[i] = std::string(1, static_cast<char>('a' + label(rng)));
      }
      patients.push_back({Partition::from_labels(cluster), ids});
    }
    const auto s = pairwise_cluster_metrics(patients);
    const auto c = oracle::pair_counts(patients);
    EXPECT_EQ(s.confusion, c);
    if (c.tp + c.fp > 0) EXPECT_DOUBLE_EQ(s.precision, double(c.tp) / double(c.tp + c.fp));
  }
}

TEST(ClusterMetrics, MergingRaisesRecallAndSplittingRaisesPrecision) {
  const std::vector<std::string> ids{"A", "A", "B", "B", "A", "C"};
  const Partition middle({{0, 1}, {2, 3, 4}, {5}});
  const Partition merged({{0, 1, 2, 3, 4}, {5}});
  const Partition split({{0}, {1}, {2, 3}, {4}, {5}});
  auto score = [&](const Partition& p) {
    const std::vector<LabeledPartition> one{{p, ids}};
    return pairwise_cluster_metrics(one);
  };
  EXPECT_GE(score(merged).recall, score(middle).recall);
  EXPECT_GE(score(split).precision, score(middle).precision);
}

TEST(ClusterMetrics, MismatchedShapesRejected) {
  const std::vector<LabeledPartition> bad{{Partition({{0, 1}}), {"A", "A", "B"}}};
  EXPECT_THROW(pairwise_cluster_metrics(bad), Error);
}

TEST(Roc, SeparatedScoresGiveAucOne) {
  const auto pairs = fixed_pairs({0.9, 0.8, 0.7}, {0.3, 0.2});
  const auto roc = roc_curve(pairs);
  EXPECT_EQ(roc.auc, 1.0);
  EXPECT_EQ(roc.points.front().fpr, 0.0);
  EXPECT_EQ(roc.points.front().tpr, 0.0);
  EXPECT_TRUE(std::isinf(roc.points.front().threshold));
  EXPECT_EQ(roc.points.back().fpr, 1.0);
  EXPECT_EQ(roc.points.back().tpr, 1.0);
  EXPECT_EQ(roc_curve(fixed_pairs({0.1, 0.2}, {0.8, 0.9})).auc, 0.0);
}

TEST(Roc, AllTiedGivesHalf) {
  const auto roc = roc_curve(fixed_pairs({0.5, 0.5, 0.5}, {0.5, 0.5}));
  EXPECT_EQ(roc.auc, 0.5);
  EXPECT_EQ(roc.points.size(), 2u);
}

TEST(Roc, TenPairsByHand) {
  // Positives 0.9 0.8 0.6 0.6 0.3, negatives 0.7 0.6 0.4 0.2 0.1.
  // Concordant: 0.9:5, 0.8:5, 0.6:3.5 twice, 0.3:2 -> 19 / 25.
  const auto pairs = fixed_pairs({0.9, 0.8, 0.6, 0.6, 0.3}, {0.7, 0.6, 0.4, 0.2, 0.1});
  EXPECT_DOUBLE_EQ(roc_curve(pairs).auc, 19.0 / 25.0);
  EXPECT_DOUBLE_EQ(oracle::concordance_auc(pairs), 19.0 / 25.0);
}

TEST(Roc, MatchesConcordanceWithTies) {
  std::mt19937_64 rng(72);
  for (int t = 0; t < 100; ++t) {
    const auto pairs = testing::random_scored_pairs(60, rng, 0.8, true);
    EXPECT_NEAR(roc_curve(pairs).auc, oracle::concordance_auc(pairs), 1e-12);
  }
}

TEST(Roc, MonotoneTransformLeavesAucUnchanged) {
  std::mt19937_64 rng(73);
  auto pairs = testing::random_scored_pairs(80, rng, 1.0, false);
  const double auc = roc_curve(pairs).auc;
  for (auto& p : pairs) p.score = std::exp(2.0 * p.score) + 3.0;
  EXPECT_EQ(roc_curve(pairs).auc, auc);
}

TEST(Roc, RequiresBothClasses) {
  EXPECT_THROW(roc_curve(fixed_pairs({0.9, 0.8}, {})), Error);
  auto pairs = fixed_pairs({0.9}, {0.1});
  pairs[0].score = std::nan("");
  EXPECT_THROW(roc_curve(pairs), Error);
}

TEST(Wilson, PublishedAndReferenceValues) {
  struct Case {
    std::uint64_t s, n;
    double lo, hi;
  };
  // Newcombe (1998) examples plus statsmodels proportion_confint(method="wilson").
  const Case cases[] = {{81, 263, 0.25528851987827422, 0.36620957698280004},
                        {15, 148, 0.062386399530736283, 0.16048724172330803},
                        {7, 10, 0.39677814746114537, 0.89220873259369893},
                        {13, 20, 0.43285427668523624, 0.81880817589891797},
                        {6, 10, 0.31267376973365824, 0.8318196702937638},
                        {0, 20, 0.0, 0.16112515805281941}};
  for (const auto& c : cases) {
    const auto w = wilson_interval(c.s, c.n);
    EXPECT_NEAR(w.lower, c.lo, 1e-12) << c.s << "/" << c.n;
    EXPECT_NEAR(w.upper, c.hi, 1e-12) << c.s << "/" << c.n;
  }
  EXPECT_NEAR(wilson_interval(81, 263).lower, 0.2553, 5e-5);
  EXPECT_NEAR(wilson_interval(81, 263).upper, 0.3662, 5e-5);
}

TEST(Wilson, BoundsAndErrors) {
  for (std::uint64_t n : {1u, 2u, 7u, 50u}) {
    for (std::uint64_t s = 0; s <= n; ++s) {
      const auto w = wilson_interval(s, n);
      EXPECT_LE(0.0, w.lower);
      EXPECT_LE(w.lower, w.value);
      EXPECT_LE(w.value, w.upper);
      EXPECT_LE(w.upper, 1.0);
    }
  }
  EXPECT_EQ(wilson_interval(5, 5).upper, 1.0);
  EXPECT_THROW(wilson_interval(0, 0), Error);
  EXPECT_THROW(wilson_interval(3, 2), Error);
  EXPECT_THROW(wilson_interval(1, 2, 1.0), Error);
}

TEST(OperatingPoint, TwentyPairs) {
  const auto pairs = fixed_pairs({0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.2, 0.2, 0.2},
                                 {0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.8, 0.8, 0.8, 0.8});
  const auto op = operating_point(pairs, 0.5);
  EXPECT_EQ(op.confusion, (PairConfusion{7, 4, 6, 3}));
  EXPECT_NEAR(op.sensitivity.lower, 0.39677814746114537, 1e-12);
  EXPECT_NEAR(op.sensitivity.upper, 0.89220873259369893, 1e-12);
  EXPECT_NEAR(op.specificity.lower, 0.31267376973365824, 1e-12);
  EXPECT_NEAR(op.specificity.upper, 0.8318196702937638, 1e-12);
  EXPECT_NEAR(op.accuracy.lower, 0.43285427668523624, 1e-12);
  EXPECT_NEAR(op.accuracy.upper, 0.81880817589891797, 1e-12);

  const auto high = operating_point(pairs, 2.0);
  EXPECT_EQ(high.sensitivity.value, 0.0);
  EXPECT_EQ(high.specificity.value, 1.0);
  // A score equal to the threshold counts as a positive call.
  EXPECT_EQ(operating_point(pairs, 0.9).confusion.tp, 7u);
}

TEST(Placements, MatchBruteForce) {
  const auto eight = fixed_pairs({0.9, 0.5, 0.5, 0.2}, {0.5, 0.3, 0.2, 0.1});
  const auto v = placement_values(eight);
  const auto b = oracle::placements_brute(eight);
  EXPECT_EQ(v.positive, b.positive);
  EXPECT_EQ(v.negative, b.negative);

  std::mt19937_64 rng(74);
  for (int t = 0; t < 50; ++t) {
    const auto pairs = testing::random_scored_pairs(70, rng, 0.5, true);
    const auto x = placement_values(pairs);
    const auto y = oracle::placements_brute(pairs);
    ASSERT_EQ(x.positive.size(), y.positive.size());
    for (std::size_t i = 0; i < x.positive.size(); ++i) EXPECT_NEAR(x.positive[i], y.positive[i], 1e-15);
    for (std::size_t i = 0; i < x.negative.size(); ++i) EXPECT_NEAR(x.negative[i], y.negative[i], 1e-15);
  }
}

TEST(AucInterval, PerfectSeparation) {
  const auto ci = auc_confidence_interval(fixed_pairs({0.9, 0.8, 0.7}, {0.3, 0.2, 0.1}));
  EXPECT_EQ(ci.auc, 1.0);
  EXPECT_EQ(ci.variance, 0.0);
  EXPECT_EQ(ci.lower, 1.0);
  EXPECT_EQ(ci.upper, 1.0);
  EXPECT_THROW(auc_confidence_interval(fixed_pairs({0.9}, {0.3, 0.2})), Error);
}

TEST(AucInterval, CoverageNearNominal) {
  std::mt19937_64 rng(75);
  std::normal_distribution<double> g(0.0, 1.0);
  const double truth = normal_cdf(1.0 / std::sqrt(2.0));
  int covered = 0;
  const int trials = 400;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> pos(100), neg(100);
    for (auto& x : pos) x = g(rng) + 1.0;
    for (auto& x : neg) x = g(rng);
    const auto ci = auc_confidence_interval(fixed_pairs(pos, neg));
    covered += ci.lower <= truth && truth <= ci.upper;
  }
  // 95% nominal; binomial sd over 400 trials is about 1.1%.
  EXPECT_GE(covered, static_cast<int>(0.91 * trials));
  EXPECT_LE(covered, static_cast<int>(0.99 * trials));
}

TEST(AucInterval, CoversHalfWhenClassesMatch) {
  std::mt19937_64 rng(80);
  std::normal_distribution<double> g(0.0, 1.0);
  int covered = 0;
  const int trials = 400;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> pos(150), neg(150);
    for (auto& x : pos) x = g(rng);
    for (auto& x : neg) x = g(rng);
    const auto ci = auc_confidence_interval(fixed_pairs(pos, neg));
    covered += ci.lower <= 0.5 && 0.5 <= ci.upper;
  }
  EXPECT_GE(covered, static_cast<int>(0.91 * trials));
  EXPECT_LE(covered, static_cast<int>(0.99 * trials));
}

TEST(Delong, IdenticalModels) {
  std::mt19937_64 rng(76);
  const auto pairs = testing::random_scored_pairs(50, rng, 1.0, false);
  const auto r = delong_test(pairs, pairs);
  EXPECT_EQ(r.z, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
  EXPECT_FALSE(r.degenerate);
}

TEST(Delong, CovarianceMatchesBruteForce) {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g(0.0, 0.5);
  for (int t = 0; t < 30; ++t) {
    const auto a = testing::random_scored_pairs(40, rng, 1.0, t % 2 == 0);
    auto b = a;
    for (auto& p : b) p.score += g(rng);
    const auto cov = delong_covariance(a, b);
    const auto pa = oracle::placements_brute(a);
    const auto pb = oracle::placements_brute(b);
    const double m = static_cast<double>(pa.positive.size());
    const double n = static_cast<double>(pa.negative.size());
    const double s10_ab = oracle::covariance_brute(pa.positive, pb.positive);
    const double s01_ab = oracle::covariance_brute(pa.negative, pb.negative);
    EXPECT_NEAR(cov.positive[0][1], s10_ab, 1e-14);
    EXPECT_NEAR(cov.negative[0][1], s01_ab, 1e-14);
    EXPECT_NEAR(cov.total[0][0],
                oracle::covariance_brute(pa.positive, pa.positive) / m +
                    oracle::covariance_brute(pa.negative, pa.negative) / n,
                1e-14);
    EXPECT_NEAR(cov.auc[0], oracle::concordance_auc(a), 1e-14);
    EXPECT_NEAR(cov.auc[1], oracle::concordance_auc(b), 1e-14);

    const double var = cov.total[0][0] + cov.total[1][1] - 2 * cov.total[0][1];
    const auto r = delong_test(a, b);
    EXPECT_NEAR(r.variance, var, 1e-14);
    const double z = (cov.auc[0] - cov.auc[1]) / std::sqrt(var);
    EXPECT_NEAR(r.z, z, 1e-9);
    EXPECT_NEAR(r.p_value, std::erfc(std::abs(z) / std::sqrt(2.0)), 1e-9);
  }
}

TEST(Delong, Antisymmetric) {
  std::mt19937_64 rng(78);
  const auto a = testing::random_scored_pairs(60, rng, 1.0, false);
  auto b = testing::random_scored_pairs(60, rng, 0.3, false);
  for (std::size_t i = 0; i < b.size(); ++i) {
    b[i].label = a[i].label;
    b[i].pair_id = a[i].pair_id;
  }
  const auto ab = delong_test(a, b);
  const auto ba = delong_test(b, a);
  EXPECT_NEAR(ab.z, -ba.z, 1e-12);
  EXPECT_NEAR(ab.p_value, ba.p_value, 1e-12);
}

TEST(Delong, MisalignedInputsRejected) {
  std::mt19937_64 rng(79);
  const auto a = testing::random_scored_pairs(20, rng, 1.0, false);
  auto b = a;
  std::swap(b[3], b[4]);
  EXPECT_THROW(delong_test(a, b), Error);
  auto shorter = a;
  shorter.pop_back();
  EXPECT_THROW(delong_test(a, shorter), Error);
  auto relabelled = a;
  relabelled[2].label = !relabelled[2].label;
  EXPECT_THROW(delong_test(a, relabelled), Error);
}

SynthConfig small_config(std::uint64_t seed) {
  SynthConfig c;
  c.n_patients = 30;
  c.dim = 32;
  c.seed = seed;
  return c;
}

double threshold_f_for_test(const Gallery& g, double tau) {
  ClusterConfig c;
  c.tau = tau;
  return pairwise_cluster_metrics(
             g, cluster_gallery(g, [&](std::span<const FeatureVector> f) { return cluster_threshold(f, c); }))
      .f_score;
}

TEST(Benchmark, RowsMatchDirectEvaluation) {
  const auto g = generate_gallery(small_config(5)).gallery;
  ClusterConfig cfg;
  cfg.tau = 0.6;
  const std::vector<BenchAlgorithm> algos{
      {"threshold", [cfg](std::span<const FeatureVector> f) { return cluster_threshold(f, cfg); }},
      {"dbscan",
       [](std::span<const FeatureVector> f) { return cluster_dbscan(f, 0.6, 1, Metric::kCosineDistance).partition; }}};
  const auto rows = timing_benchmark(g, algos, 3);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].algorithm, "threshold");
  EXPECT_EQ(rows[1].algorithm, "dbscan");
  const auto direct = pairwise_cluster_metrics(g, cluster_gallery(g, algos[0].cluster));
  EXPECT_EQ(rows[0].scores.confusion, direct.confusion);
  EXPECT_EQ(rows[0].scores.confusion, rows[1].scores.confusion);
  for (const auto& r : rows) {
    EXPECT_GE(r.median_seconds, 0.0);
    EXPECT_NEAR(r.median_seconds_per_patient, r.median_seconds / 30.0, 1e-15);
  }
  EXPECT_THROW(timing_benchmark(g, algos, 2), Error);
}

TEST(Benchmark, ThresholdBeatsTunedBaselines) {
  const auto g = generate_gallery(small_config(7)).gallery;
  auto best_f = [&](const std::vector<ClusterFn>& candidates) {
    double best = 0.0;
    for (const auto& fn : candidates) best = std::max(best, pairwise_cluster_metrics(g, cluster_gallery(g, fn)).f_score);
    return best;
  };
  std::vector<ClusterFn> ours, dbscan, meanshift, affinity;
  for (int i = 1; i <= 20; ++i) {
    const double x = 0.1 * i;
    ClusterConfig c;
    c.tau = x;
    ours.push_back([c](std::span<const FeatureVector> f) { return cluster_threshold(f, c); });
    for (std::size_t min_pts : {1u, 2u, 3u}) {
      dbscan.push_back([x, min_pts](std::span<const FeatureVector> f) {
        return cluster_dbscan(f, x, min_pts, Metric::kCosineDistance).partition;
      });
    }
    meanshift.push_back([x](std::span<const FeatureVector> f) {
      return cluster_mean_shift(f, {.bandwidth = x}, Metric::kEuclidean).partition;
    });
  }
  for (double pref : {-4.0, -2.0, -1.0, -0.5}) {
    affinity.push_back([pref](std::span<const FeatureVector> f) {
      return cluster_affinity_propagation(f, {.preference = pref}, Metric::kCosineDistance).partition;
    });
  }
  affinity.push_back([](std::span<const FeatureVector> f) {
    return cluster_affinity_propagation(f, {}, Metric::kCosineDistance).partition;
  });
  const double f_ours = best_f(ours);
  EXPECT_GE(f_ours, best_f(dbscan));
  EXPECT_GE(f_ours, best_f(meanshift));
  EXPECT_GE(f_ours, best_f(affinity));
}

TEST(TuneTau, TakesMiddleOfBestRun) {
  // One patient on a line: A at 0 and 1, B at 5. F is 1 for tau in (1, 4].
  const auto g = build_gallery({testing::record("a1", "P", "A", {0.0}), testing::record("a2", "P", "A", {1.0}),
                                testing::record("b1", "P", "B", {5.0})});
  ClusterConfig base;
  base.metric = Metric::kEuclidean;
  const std::vector<double> grid{0.5, 1.5, 2.5, 3.5, 4.5};
  const auto t = tune_tau(g, base, grid);
  EXPECT_EQ(t.f_scores, (std::vector<double>{0.0, 1.0, 1.0, 1.0, 0.5}));
  EXPECT_EQ(t.tau, 2.5);
  EXPECT_EQ(t.scores.f_score, 1.0);
  const std::vector<double> even{0.5, 1.5, 2.5, 4.5};
  EXPECT_EQ(tune_tau(g, base, even).tau, 1.5);
  EXPECT_THROW(tune_tau(g, base, std::vector<double>{}), Error);
  EXPECT_THROW(tune_tau(g, base, std::vector<double>{2.0, 1.0}), Error);
}

TEST(TuneTau, SyntheticGalleryReachesPerfectF) {
  const auto g = generate_gallery(small_config(6)).gallery;
  std::vector<double> grid;
  for (int i = 1; i <= 40; ++i) grid.push_back(i * 0.025);
  const auto t = tune_tau(g, ClusterConfig{}, grid);
  ASSERT_EQ(t.f_scores.size(), grid.size());
  EXPECT_EQ(t.scores.f_score, 1.0);
  EXPECT_EQ(*std::max_element(t.f_scores.begin(), t.f_scores.end()), 1.0);
  EXPECT_EQ(threshold_f_for_test(g, t.tau), 1.0);
}

}  // namespace
}  // namespace reid
