#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "reid/core_types.hpp"
#include "reid/similarity.hpp"

namespace reid {

/// P classes x K samples. Labels are class indices 0..P-1, each used K times.
struct PKBatch {
  std::size_t p = 0;
  std::size_t k = 0;
  std::vector<FeatureVector> embeddings;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> source_indices;  // gallery rows, when sampled from one

  /// Throws reid::Error unless the P x K label structure holds.
  void validate() const;
};

/// Builds a batch from arbitrary integer labels, inferring P and K.
PKBatch make_pk_batch(std::vector<FeatureVector> embeddings, std::span<const std::int64_t> labels);

struct LabeledPair {
  FeatureVector first;
  FeatureVector second;
  bool same = false;
  std::optional<std::vector<double>> logits;  // (different, same) scores
};

using LabeledPairBatch = std::vector<LabeledPair>;

/// Row-major matrix of per-sample scores.
struct ScoreMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values).subspan(r * cols, cols);
  }
};

/// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> scores);

struct TriHardOptions {
  double margin = 0.3;
  Metric metric = Metric::kEuclidean;
  bool normalize = false;  // divide by P*K instead of returning the plain sum
};

/// Batch-hard triplet loss: for every anchor, hinge on margin plus its
/// farthest same-class sample minus its nearest other-class sample. The
/// same-class maximum includes the anchor itself.
double trihard_loss(const PKBatch& batch, const TriHardOptions& options = {});

/// Mean cross-entropy of softmax(logits) against one-hot rows.
double classification_loss(const ScoreMatrix& logits, const ScoreMatrix& one_hot);

/// One-hot rows for class indices.
ScoreMatrix one_hot(std::span<const std::size_t> classes, std::size_t num_classes);

struct ObjectiveBreakdown {
  double total = 0.0;
  double first = 0.0;   // classification or cross-entropy term
  double second = 0.0;  // triplet or contrastive term
};

ObjectiveBreakdown combined_classification_objective(const PKBatch& batch,
                                                     const ScoreMatrix& logits,
                                                     const ScoreMatrix& one_hot_labels,
                                                     const TriHardOptions& options = {});

/// (1/2N) sum[y d^2 + (1-y) max(0, m - d)] over euclidean pair distances d.
/// The dissimilar-pair hinge is left unsquared.
double contrastive_loss(const LabeledPairBatch& batch, double margin = 1.0);

/// -(1/N) sum[y log p_same + (1-y) log p_diff] over the two-way softmax of
/// each pair's logits.
double verification_cross_entropy(const LabeledPairBatch& batch);

ObjectiveBreakdown combined_verification_objective(const LabeledPairBatch& batch,
                                                   double margin = 1.0);

/// Draws P nodules without replacement, then K tracklets per nodule; a nodule
/// with fewer than K tracklets is sampled with replacement.
PKBatch sample_pk_batch(const Gallery& gallery, std::size_t p, std::size_t k, std::uint64_t seed);

}  // namespace reid
