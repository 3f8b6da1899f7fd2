#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "reid/clustering.hpp"
#include "reid/core_types.hpp"

namespace reid {

struct PairConfusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const noexcept { return tp + fp + tn + fn; }
  PairConfusion& operator+=(const PairConfusion& o) noexcept;
  friend bool operator==(const PairConfusion&, const PairConfusion&) = default;
};

struct ClusterScores {
  double precision = 1.0;
  double recall = 1.0;
  double f_score = 0.0;
  PairConfusion confusion;
};

/// Precision = TP/(TP+FP) (1 when nothing is predicted together), recall =
/// TP/(TP+FN) (1 when nothing belongs together), F = harmonic mean (0 when
/// both are 0).
ClusterScores scores_from_confusion(const PairConfusion& confusion);

/// One patient's predicted clusters with ground-truth nodule ids of its members.
struct LabeledPartition {
  Partition partition;
  std::vector<std::string> nodule_ids;
};

/// Pair counts over within-patient pairs, accumulated over all patients
/// before the ratios are taken.
ClusterScores pairwise_cluster_metrics(std::span<const LabeledPartition> patients);
ClusterScores pairwise_cluster_metrics(const Gallery& gallery,
                                       std::span<const PatientPartition> partitions);

struct ScoredPair {
  std::string pair_id;
  std::string id_a;
  std::string id_b;
  double score = 0.0;
  bool label = false;  // same nodule

  friend bool operator==(const ScoredPair&, const ScoredPair&) = default;
};

/// Cosine similarity of every within-patient pair of a labelled gallery.
std::vector<ScoredPair> score_patient_pairs(const Gallery& gallery);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // positive iff score >= threshold; +inf for the origin
};

struct RocCurve {
  std::vector<RocPoint> points;  // threshold descending, (0,0) to (1,1)
  double auc = 0.0;
};

/// Equal scores form a single step. AUC by the trapezoid rule.
RocCurve roc_curve(std::span<const ScoredPair> pairs);

struct Proportion {
  double value = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::uint64_t successes = 0;
  std::uint64_t trials = 0;
};

/// Wilson score interval for a binomial proportion.
Proportion wilson_interval(std::uint64_t successes, std::uint64_t trials, double level = 0.95);

struct OperatingPoint {
  double threshold = 0.0;
  PairConfusion confusion;
  Proportion accuracy;
  Proportion sensitivity;
  Proportion specificity;
};

OperatingPoint operating_point(std::span<const ScoredPair> pairs, double threshold,
                               double level = 0.95);

/// DeLong structural components. positive[i] is the fraction of negatives
/// scored below positive i (ties count one half); negative[j] is the fraction
/// of positives scored above negative j. Both follow the order of the pairs.
struct PlacementValues {
  std::vector<double> positive;
  std::vector<double> negative;
};

PlacementValues placement_values(std::span<const ScoredPair> pairs);

struct AucInterval {
  double auc = 0.0;
  double variance = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
};

/// DeLong variance and a normal interval clipped to [0, 1].
AucInterval auc_confidence_interval(std::span<const ScoredPair> pairs, double level = 0.95);

using Matrix2 = std::array<std::array<double, 2>, 2>;

struct DelongCovariance {
  std::array<double, 2> auc{};
  Matrix2 positive{};  // sample covariance of positive placements across the two models
  Matrix2 negative{};
  Matrix2 total{};     // positive / m + negative / n
};

/// Requires both lists to score the same pairs in the same order.
DelongCovariance delong_covariance(std::span<const ScoredPair> model_a,
                                   std::span<const ScoredPair> model_b);

struct DelongResult {
  double auc_a = 0.0;
  double auc_b = 0.0;
  double variance = 0.0;  // of auc_a - auc_b
  double z = 0.0;
  double p_value = 1.0;   // two-sided
  bool degenerate = false;  // zero variance with a nonzero AUC difference
};

DelongResult delong_test(std::span<const ScoredPair> model_a, std::span<const ScoredPair> model_b);

struct BenchAlgorithm {
  std::string name;
  ClusterFn cluster;
};

struct BenchRow {
  std::string algorithm;
  ClusterScores scores;
  double median_seconds = 0.0;              // whole gallery, clustering calls only
  double median_seconds_per_patient = 0.0;
};

/// Every algorithm clusters each patient `repetitions` times; accuracy comes
/// from the first repetition, timing is the median over repetitions.
std::vector<BenchRow> timing_benchmark(const Gallery& gallery,
                                       std::span<const BenchAlgorithm> algorithms,
                                       std::size_t repetitions);

struct TauTuning {
  double tau = 0.0;
  ClusterScores scores;
  std::vector<double> f_scores;  // one per grid value
};

/// Grid search for the threshold maximising pairwise F. The grid must be
/// increasing; when several neighbouring values tie for the best F, the middle
/// of the first such run is taken so tau sits away from both edges.
TauTuning tune_tau(const Gallery& gallery, ClusterConfig base, std::span<const double> grid);

}  // namespace reid
