#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "reid/core_types.hpp"

namespace reid {

enum class Metric {
  kCosineDistance,  // 1 - cosine similarity, range [0, 2]
  kEuclidean,
};

std::string_view to_string(Metric metric);
Metric parse_metric(std::string_view name);

/// (a.b) / (|a| |b|), clamped to [-1, 1]. Zero-norm input is an error.
double cosine_similarity(const FeatureVector& a, const FeatureVector& b);

double distance(Metric metric, const FeatureVector& a, const FeatureVector& b);

/// Dense symmetric n x n distance matrix, row-major.
class DistanceMatrix {
 public:
  explicit DistanceMatrix(std::size_t n) : n_(n), data_(n * n, 0.0) {}

  std::size_t size() const noexcept { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * n_ + j]; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data_).subspan(i * n_, n_);
  }

 private:
  std::size_t n_;
  std::vector<double> data_;
};

DistanceMatrix pairwise_distance_matrix(std::span<const FeatureVector> features, Metric metric);
DistanceMatrix pairwise_distance_matrix(const Gallery& gallery, Metric metric);

/// Caches per-vector norms so repeated lookups cost one dot product.
/// Results are bit-identical to distance().
class DistanceKernel {
 public:
  DistanceKernel(std::span<const FeatureVector> features, Metric metric);

  double operator()(std::size_t i, std::size_t j) const;
  std::size_t size() const noexcept { return features_.size(); }
  Metric metric() const noexcept { return metric_; }

 private:
  std::span<const FeatureVector> features_;
  Metric metric_;
  std::vector<double> norms_;
};

struct Verification {
  bool same_nodule = false;
  double score = 0.0;
};

/// Positive iff cosine similarity >= threshold.
Verification verify_pair(const FeatureVector& a, const FeatureVector& b, double threshold);

}  // namespace reid
