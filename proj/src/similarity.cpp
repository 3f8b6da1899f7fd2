#include "reid/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace reid {
namespace {

void check_dims(const FeatureVector& a, const FeatureVector& b) {
  if (a.dim() != b.dim()) {
    throw Error("dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                std::to_string(b.dim()));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

bool same_values(std::span<const double> a, std::span<const double> b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end());
}

double checked_norm(const FeatureVector& v) {
  const double n = norm(v.values());
  if (n == 0.0) throw Error("cosine: zero-norm embedding");
  return n;
}

double cosine_from(double dot_ab, double norm_a, double norm_b) {
  return std::clamp(dot_ab / (norm_a * norm_b), -1.0, 1.0);
}

double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

std::string_view to_string(Metric metric) {
  switch (metric) {
    case Metric::kCosineDistance: return "cosine";
    case Metric::kEuclidean: return "euclidean";
  }
  return "unknown";
}

Metric parse_metric(std::string_view name) {
  if (name == "cosine" || name == "cosine_distance") return Metric::kCosineDistance;
  if (name == "euclidean") return Metric::kEuclidean;
  throw Error("unknown metric '" + std::string(name) + "'");
}

double cosine_similarity(const FeatureVector& a, const FeatureVector& b) {
  check_dims(a, b);
  const double na = checked_norm(a);
  const double nb = checked_norm(b);
  // sqrt(x)^2 need not round back to x; identical inputs are exactly parallel.
  if (same_values(a.values(), b.values())) return 1.0;
  return cosine_from(dot(a.values(), b.values()), na, nb);
}

double distance(Metric metric, const FeatureVector& a, const FeatureVector& b) {
  switch (metric) {
    case Metric::kCosineDistance:
      return 1.0 - cosine_similarity(a, b);
    case Metric::kEuclidean:
      check_dims(a, b);
      return euclidean(a.values(), b.values());
  }
  throw Error("distance: unknown metric");
}

DistanceKernel::DistanceKernel(std::span<const FeatureVector> features, Metric metric)
    : features_(features), metric_(metric) {
  for (std::size_t i = 1; i < features.size(); ++i) check_dims(features[0], features[i]);
  if (metric == Metric::kCosineDistance) {
    norms_.reserve(features.size());
    for (const auto& f : features) norms_.push_back(checked_norm(f));
  }
}

double DistanceKernel::operator()(std::size_t i, std::size_t j) const {
  const auto a = features_[i].values();
  const auto b = features_[j].values();
  if (metric_ == Metric::kEuclidean) return euclidean(a, b);
  if (same_values(a, b)) return 0.0;
  return 1.0 - cosine_from(dot(a, b), norms_[i], norms_[j]);
}

DistanceMatrix pairwise_distance_matrix(std::span<const FeatureVector> features, Metric metric) {
  const DistanceKernel kernel(features, metric);
  DistanceMatrix m(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    for (std::size_t j = i + 1; j < features.size(); ++j) {
      const double d = kernel(i, j);
      m(i, j) = d;
      m(j, i) = d;
    }
  }
  return m;
}

DistanceMatrix pairwise_distance_matrix(const Gallery& gallery, Metric metric) {
  std::vector<FeatureVector> features;
  features.reserve(gallery.size());
  for (const auto& r : gallery.records()) features.push_back(r.embedding);
  return pairwise_distance_matrix(features, metric);
}

Verification verify_pair(const FeatureVector& a, const FeatureVector& b, double threshold) {
  const double score = cosine_similarity(a, b);
  return {score >= threshold, score};
}

}  // namespace reid
