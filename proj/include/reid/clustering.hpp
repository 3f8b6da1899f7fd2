#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reid/core_types.hpp"
#include "reid/similarity.hpp"

namespace reid {

enum class ClusterMode {
  kLiteral,   // one absorption pass per cluster, as the pseudocode reads
  kFixpoint,  // repeat passes until nothing is absorbed (threshold-graph components)
};

enum class SeedOrder {
  kSeededRandom,  // visit features in a permutation drawn from `seed`
  kInputOrder,
};

struct ClusterConfig {
  double tau = 0.5;
  Metric metric = Metric::kCosineDistance;
  ClusterMode mode = ClusterMode::kFixpoint;
  std::uint64_t seed = 0;
  SeedOrder order = SeedOrder::kSeededRandom;

  void validate() const;
};

ClusterMode parse_cluster_mode(std::string_view name);
std::string_view to_string(ClusterMode mode);

/// Threshold clustering: a cluster grows by absorbing any remaining feature
/// closer than tau (strictly) to any of its members.
///
/// Literal mode pops the first remaining feature of the visiting order as the
/// seed, makes exactly one pass over the remaining features in that order,
/// then starts the next cluster from what is left. The result depends on the
/// order. Fixpoint mode keeps passing until no feature is absorbed, which makes
/// the clusters the connected components of the graph {(i, j) : d(i, j) < tau}.
Partition cluster_threshold(std::span<const FeatureVector> features, const ClusterConfig& config);

struct DbscanResult {
  Partition partition;  // noise points appear as singleton clusters
  std::vector<std::size_t> noise;
};

/// Density-based clustering. A point's neighbourhood is {q : d(p, q) < eps},
/// itself included, and p is a core point when that set has >= min_pts members.
DbscanResult cluster_dbscan(std::span<const FeatureVector> features, double eps,
                            std::size_t min_pts, Metric metric);

struct MeanShiftOptions {
  double bandwidth = 1.0;
  double convergence_scale = 1e-5;  // stop when a shift moves less than scale * bandwidth
  std::size_t max_iter = 300;
};

struct MeanShiftResult {
  Partition partition;
  std::vector<FeatureVector> modes;  // one per cluster, in partition order
};

/// Flat-kernel mean shift in euclidean space. Every point is a seed; converged
/// seeds are merged greedily by window population and each point joins its
/// nearest surviving mode.
MeanShiftResult cluster_mean_shift(std::span<const FeatureVector> features,
                                   const MeanShiftOptions& options, Metric metric);

struct AffinityOptions {
  double damping = 0.9;
  std::size_t max_iter = 200;
  std::size_t convergence_iter = 15;
  std::optional<double> preference;  // median similarity when unset
};

struct AffinityResult {
  Partition partition;
  std::vector<std::size_t> exemplars;
  bool converged = false;
  std::size_t iterations = 0;
};

/// Affinity propagation on s(i, k) = -d(i, k)^2.
AffinityResult cluster_affinity_propagation(std::span<const FeatureVector> features,
                                            const AffinityOptions& options, Metric metric);

using ClusterFn = std::function<Partition(std::span<const FeatureVector>)>;

/// Clustering of one patient; partition indices are local, record_indices maps
/// them back into the gallery.
struct PatientPartition {
  std::string patient_id;
  std::vector<std::size_t> record_indices;
  Partition partition;
};

std::vector<PatientPartition> cluster_gallery(const Gallery& gallery, const ClusterFn& cluster);

struct NoduleCount {
  std::string patient_id;
  std::size_t count = 0;
};

std::vector<NoduleCount> count_nodules(const Gallery& gallery, const ClusterConfig& config);

}  // namespace reid
