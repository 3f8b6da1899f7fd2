#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "reid/clustering.hpp"
#include "reid/synthgen.hpp"
#include "test_support.hpp"

namespace reid {
namespace {

ClusterConfig euclid(double tau, ClusterMode mode = ClusterMode::kFixpoint,
                     SeedOrder order = SeedOrder::kInputOrder) {
  ClusterConfig c;
  c.tau = tau;
  c.metric = Metric::kEuclidean;
  c.mode = mode;
  c.order = order;
  return c;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

TEST(ThresholdClustering, ExtremeThresholds) {
  std::mt19937_64 rng(1);
  const auto f = testing::random_vectors(30, 8, rng);
  for (auto mode : {ClusterMode::kFixpoint, ClusterMode::kLiteral}) {
    EXPECT_EQ(cluster_threshold(f, euclid(1e6, mode)).size(), 1u);
    EXPECT_EQ(cluster_threshold(f, euclid(1e-9, mode)), Partition::singletons(30));
  }
}

TEST(ThresholdClustering, EmptyInputAndBadTau) {
  EXPECT_TRUE(cluster_threshold({}, euclid(1.0)).empty());
  const std::vector<FeatureVector> f{{1.0}};
  EXPECT_THROW(cluster_threshold(f, euclid(0.0)), Error);
  EXPECT_THROW(cluster_threshold(f, euclid(std::nan(""))), Error);
}

TEST(ThresholdClustering, ChainOnALine) {
  const std::vector<FeatureVector> f{{0, 0}, {1, 0}, {2.2, 0}};
  // Union-find over the explicit graph: edges (0,1) at 1.0 and (1,2) at 1.2.
  EXPECT_EQ(cluster_threshold(f, euclid(1.3)), Partition({{0, 1, 2}}));
  EXPECT_EQ(cluster_threshold(f, euclid(1.1)), Partition({{0, 1}, {2}}));
  EXPECT_EQ(oracle::threshold_components(f, 1.3, Metric::kEuclidean), Partition({{0, 1, 2}}));
  EXPECT_EQ(oracle::threshold_components(f, 1.1, Metric::kEuclidean), Partition({{0, 1}, {2}}));
}

TEST(ThresholdClustering, LiteralModeExaminesInPassOrder) {
  // A = 0, C = 1.0, B = 0.5 listed as (A, C, B): seed A, pass visits C before B.
  const std::vector<FeatureVector> f{{0.0}, {1.0}, {0.5}};
  const auto literal = cluster_threshold(f, euclid(0.6, ClusterMode::kLiteral));
  EXPECT_EQ(literal, Partition({{0, 2}, {1}}));
  EXPECT_EQ(cluster_threshold(f, euclid(0.6, ClusterMode::kFixpoint)), Partition({{0, 1, 2}}));

  const std::vector<std::vector<double>> d{{0, 1.0, 0.5}, {1.0, 0, 0.5}, {0.5, 0.5, 0}};
  EXPECT_EQ(oracle::literal_steps(d, 0.6, {0, 1, 2}), literal);
  // Visiting B first lets it bridge to C.
  EXPECT_EQ(oracle::literal_steps(d, 0.6, {0, 2, 1}), Partition({{0, 1, 2}}));
}

TEST(ThresholdClustering, LiteralMatchesStepSimulator) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 100; ++t) {
    const auto f = testing::clustered_vectors(40, 3, 4, 0.6, rng);
    const auto m = pairwise_distance_matrix(f, Metric::kEuclidean);
    std::vector<std::vector<double>> d(f.size(), std::vector<double>(f.size()));
    for (std::size_t i = 0; i < f.size(); ++i) {
      for (std::size_t j = 0; j < f.size(); ++j) d[i][j] = m(i, j);
    }
    EXPECT_EQ(cluster_threshold(f, euclid(0.8, ClusterMode::kLiteral)), oracle::literal_steps(d, 0.8, iota(f.size())));
  }
}

TEST(ThresholdClustering, FixpointEqualsGraphComponents) {
  std::mt19937_64 rng(22);
  for (int t = 0; t < 60; ++t) {
    const std::size_t dim = t % 3 == 0 ? 2 : (t % 3 == 1 ? 16 : 64);
    const auto f = testing::clustered_vectors(80, dim, 5, 0.3, rng);
    for (Metric metric : {Metric::kEuclidean, Metric::kCosineDistance}) {
      const auto d = pairwise_distance_matrix(f, metric);
      std::vector<double> all;
      for (std::size_t i = 0; i < f.size(); ++i) {
        for (std::size_t j = i + 1; j < f.size(); ++j) all.push_back(d(i, j));
      }
      std::sort(all.begin(), all.end());
      const double tau = all[all.size() / 20];
      ClusterConfig c;
      c.tau = tau;
      c.metric = metric;
      c.seed = static_cast<std::uint64_t>(t);
      EXPECT_EQ(cluster_threshold(f, c), oracle::threshold_components(f, tau, metric));
    }
  }
}

TEST(ThresholdClustering, LiteralPropertiesAndDeterminism) {
  std::mt19937_64 rng(23);
  for (int t = 0; t < 50; ++t) {
    const auto f = testing::clustered_vectors(60, 4, 6, 0.5, rng);
    ClusterConfig c = euclid(0.7, ClusterMode::kLiteral, SeedOrder::kSeededRandom);
    c.seed = 1000 + static_cast<std::uint64_t>(t);
    const auto p = cluster_threshold(f, c);
    p.validate(f.size());
    EXPECT_EQ(cluster_threshold(f, c), p);
    // Each literal cluster lies inside one graph component.
    c.mode = ClusterMode::kFixpoint;
    EXPECT_TRUE(p.refines(cluster_threshold(f, c), f.size()));
    for (const auto& cluster : p.clusters()) {
      if (cluster.size() < 2) continue;
      for (std::size_t a : cluster) {
        const bool linked = std::any_of(cluster.begin(), cluster.end(), [&](std::size_t b) {
          return a != b && distance(Metric::kEuclidean, f[a], f[b]) < 0.7;
        });
        EXPECT_TRUE(linked);
      }
    }
  }
}

TEST(ThresholdClustering, RefinementMonotoneInTau) {
  std::mt19937_64 rng(24);
  const auto f = testing::clustered_vectors(100, 6, 8, 0.5, rng);
  Partition previous = cluster_threshold(f, euclid(0.05));
  for (double tau = 0.1; tau < 4.0; tau += 0.1) {
    const auto current = cluster_threshold(f, euclid(tau));
    EXPECT_TRUE(previous.refines(current, f.size()));
    EXPECT_LE(current.size(), previous.size());
    previous = current;
  }
}

TEST(Dbscan, Basics) {
  const std::vector<FeatureVector> same(5, FeatureVector{1.0, 2.0});
  EXPECT_EQ(cluster_dbscan(same, 0.1, 1, Metric::kEuclidean).partition.size(), 1u);

  const std::vector<FeatureVector> spread{{0.0}, {1.0}, {2.0}, {3.0}};
  const auto noisy = cluster_dbscan(spread, 0.5, 2, Metric::kEuclidean);
  EXPECT_EQ(noisy.partition, Partition::singletons(4));
  EXPECT_EQ(noisy.noise.size(), 4u);

  EXPECT_THROW(cluster_dbscan(spread, 0.0, 1, Metric::kEuclidean), Error);
  EXPECT_THROW(cluster_dbscan(spread, 1.0, 0, Metric::kEuclidean), Error);
}

TEST(Dbscan, BorderPointsJoinAndNoiseStaysAlone) {
  // Core points 0..2 (spacing 0.4), border point 3 at 0.45 from point 2, outlier 4.
  const std::vector<FeatureVector> f{{0.0}, {0.4}, {0.8}, {1.25}, {5.0}};
  const auto r = cluster_dbscan(f, 0.5, 3, Metric::kEuclidean);
  EXPECT_EQ(r.partition, Partition({{0, 1, 2, 3}, {4}}));
  EXPECT_EQ(r.noise, (std::vector<std::size_t>{4}));
}

TEST(Dbscan, TwoBlobsMatchNearestCentre) {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> g(0.0, 0.3);
  const FeatureVector c0{0.0, 0.0}, c1{10.0, 10.0};
  std::vector<FeatureVector> f;
  for (int i = 0; i < 40; ++i) {
    const auto& c = i % 2 ? c1 : c0;
    f.push_back({c[0] + g(rng), c[1] + g(rng)});
  }
  std::vector<std::size_t> nearest;
  for (const auto& x : f) {
    nearest.push_back(oracle::naive_distance(Metric::kEuclidean, x, c0) <
                              oracle::naive_distance(Metric::kEuclidean, x, c1)
                          ? 0
                          : 1);
  }
  const auto r = cluster_dbscan(f, 1.5, 3, Metric::kEuclidean);
  EXPECT_EQ(r.partition.size(), 2u);
  EXPECT_EQ(r.partition, Partition::from_labels(nearest));
}

TEST(Dbscan, MinPtsOneIsThresholdGraph) {
  std::mt19937_64 rng(32);
  for (int t = 0; t < 30; ++t) {
    const auto f = testing::clustered_vectors(70, 5, 6, 0.4, rng);
    EXPECT_EQ(cluster_dbscan(f, 0.9, 1, Metric::kEuclidean).partition, cluster_threshold(f, euclid(0.9)));
  }
}

TEST(MeanShift, SinglePointAndWideBandwidth) {
  const std::vector<FeatureVector> one{{3.0, 4.0}};
  const auto r1 = cluster_mean_shift(one, {.bandwidth = 1.0}, Metric::kEuclidean);
  EXPECT_EQ(r1.partition.size(), 1u);

  std::mt19937_64 rng(41);
  const auto f = testing::random_vectors(25, 3, rng);
  const auto r = cluster_mean_shift(f, {.bandwidth = 100.0}, Metric::kEuclidean);
  EXPECT_EQ(r.partition.size(), 1u);
}

TEST(MeanShift, RejectsCosine) {
  const std::vector<FeatureVector> one{{3.0, 4.0}};
  EXPECT_THROW(cluster_mean_shift(one, {.bandwidth = 1.0}, Metric::kCosineDistance), Error);
  EXPECT_THROW(cluster_mean_shift(one, {.bandwidth = 0.0}, Metric::kEuclidean), Error);
}

TEST(MeanShift, TwoBlobsFindTheirMeans) {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> g(0.0, 0.1);
  const double bandwidth = 1.0;
  std::vector<FeatureVector> f;
  std::vector<std::size_t> blob;
  for (int i = 0; i < 30; ++i) {
    const double cx = i % 2 ? 10.0 * bandwidth : 0.0;
    f.push_back({cx + g(rng), g(rng)});
    blob.push_back(i % 2);
  }
  const auto r = cluster_mean_shift(f, {.bandwidth = bandwidth}, Metric::kEuclidean);
  ASSERT_EQ(r.partition.size(), 2u);
  EXPECT_EQ(r.partition, Partition::from_labels(blob));

  // Shift iteration oracle: flat window from the blob's first point.
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<double> x{f[b][0], f[b][1]};
    for (int it = 0; it < 1000; ++it) {
      double sx = 0, sy = 0, count = 0;
      for (const auto& p : f) {
        if (std::hypot(p[0] - x[0], p[1] - x[1]) <= bandwidth) {
          sx += p[0];
          sy += p[1];
          count += 1;
        }
      }
      x = {sx / count, sy / count};
    }
    double mx = 0, my = 0, count = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (blob[i] == b) {
        mx += f[i][0];
        my += f[i][1];
        count += 1;
      }
    }
    EXPECT_LT(std::hypot(x[0] - mx / count, x[1] - my / count), bandwidth / 10);
    const auto& mode = r.modes[r.partition.labels(f.size())[b]];
    EXPECT_LT(std::hypot(mode[0] - mx / count, mode[1] - my / count), bandwidth / 10);
  }
}

TEST(AffinityPropagation, TrivialInputs) {
  const std::vector<FeatureVector> one{{1.0, 1.0}};
  const auto r1 = cluster_affinity_propagation(one, {}, Metric::kEuclidean);
  EXPECT_EQ(r1.partition.size(), 1u);
  EXPECT_EQ(r1.exemplars, (std::vector<std::size_t>{0}));

  const std::vector<FeatureVector> copies(6, FeatureVector{2.0, -1.0});
  EXPECT_EQ(cluster_affinity_propagation(copies, {}, Metric::kEuclidean).partition.size(), 1u);
}

TEST(AffinityPropagation, Validation) {
  const std::vector<FeatureVector> f{{0.0}, {1.0}};
  EXPECT_THROW(cluster_affinity_propagation(f, {.damping = 0.4}, Metric::kEuclidean), Error);
  EXPECT_THROW(cluster_affinity_propagation(f, {.damping = 1.0}, Metric::kEuclidean), Error);
  EXPECT_THROW(cluster_affinity_propagation(f, {.max_iter = 0}, Metric::kEuclidean), Error);
}

TEST(AffinityPropagation, ThreeTriplesMatchExhaustiveExemplarSearch) {
  const std::vector<FeatureVector> f{{0.0, 0.0}, {0.2, 0.1},  {-0.1, 0.2}, {5.0, 5.0},  {5.2, 4.9},
                                     {4.9, 5.1}, {10.0, 0.0}, {10.1, 0.2}, {9.8, -0.1}};
  const auto r = cluster_affinity_propagation(f, {}, Metric::kEuclidean);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.partition, Partition({{0, 1, 2}, {3, 4, 5}, {6, 7, 8}}));
  ASSERT_EQ(r.exemplars.size(), 3u);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto& members = r.partition.clusters()[c];
    EXPECT_NE(std::find(members.begin(), members.end(), r.exemplars[c]), members.end());
  }

  std::vector<double> sims;
  for (std::size_t i = 0; i < f.size(); ++i) {
    for (std::size_t k = 0; k < f.size(); ++k) {
      if (i == k) continue;
      const double d = oracle::naive_distance(Metric::kEuclidean, f[i], f[k]);
      sims.push_back(-d * d);
    }
  }
  std::sort(sims.begin(), sims.end());
  const double median = 0.5 * (sims[sims.size() / 2 - 1] + sims[sims.size() / 2]);
  EXPECT_EQ(oracle::best_exemplar_partition(f, median), r.partition);
}

TEST(AffinityPropagation, NonConvergenceIsFlaggedNotThrown) {
  std::mt19937_64 rng(51);
  const auto f = testing::random_vectors(20, 4, rng);
  const auto r = cluster_affinity_propagation(f, {.max_iter = 3}, Metric::kEuclidean);
  EXPECT_FALSE(r.converged);
  EXPECT_NO_THROW(r.partition.validate(f.size()));
}

TEST(CountNodules, PerPatientCounts) {
  SynthConfig cfg;
  cfg.n_patients = 1;
  cfg.dim = 64;
  cfg.nodules_per_patient = {3, {1.0}};
  cfg.tracklets_per_nodule = {4, {1.0}};
  cfg.intra_noise = 0.01;  // angular noise ~0.08 rad, centres >= pi/4 apart
  cfg.seed = 9;
  const auto g = generate_gallery(cfg).gallery;
  ClusterConfig c;
  c.tau = 0.05;
  const auto counts = count_nodules(g, c);
  ASSERT_EQ(counts.size(), 1u);
  EXPECT_EQ(counts[0].count, 3u);

  auto single = build_gallery({testing::record("t", "P", "n", {1, 2})});
  EXPECT_EQ(count_nodules(single, c)[0].count, 1u);
  auto same = build_gallery({testing::record("t1", "P", "n", {1, 2}), testing::record("t2", "P", "n", {1, 2}),
                             testing::record("t3", "P", "n", {1, 2})});
  EXPECT_EQ(count_nodules(same, c)[0].count, 1u);
}

TEST(ClusterGallery, EveryOutputIsAValidPartition) {
  SynthConfig cfg;
  cfg.n_patients = 20;
  cfg.dim = 16;
  cfg.seed = 77;
  const auto g = generate_gallery(cfg).gallery;
  const std::vector<ClusterFn> fns{
      [](std::span<const FeatureVector> f) { return cluster_threshold(f, ClusterConfig{}); },
      [](std::span<const FeatureVector> f) { return cluster_dbscan(f, 0.5, 2, Metric::kCosineDistance).partition; },
      [](std::span<const FeatureVector> f) {
        return cluster_mean_shift(f, {.bandwidth = 0.8}, Metric::kEuclidean).partition;
      },
      [](std::span<const FeatureVector> f) {
        return cluster_affinity_propagation(f, {}, Metric::kCosineDistance).partition;
      }};
  for (const auto& fn : fns) {
    for (const auto& p : cluster_gallery(g, fn)) EXPECT_NO_THROW(p.partition.validate(p.record_indices.size()));
  }
}

}  // namespace
}  // namespace reid
