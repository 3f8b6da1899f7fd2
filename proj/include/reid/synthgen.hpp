#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "reid/core_types.hpp"
#include "reid/metrics.hpp"

namespace reid {

/// Discrete distribution over min..min+weights.size()-1.
struct CountDistribution {
  std::size_t min = 1;
  std::vector<double> weights{1.0};

  std::size_t max() const noexcept { return min + weights.size() - 1; }
  double mean() const;
  void validate(const char* what) const;
};

struct SynthConfig {
  std::size_t n_patients = 100;
  // About 1.125 nodules per patient and 3.85 tracklets per nodule.
  CountDistribution nodules_per_patient{1, {0.9, 0.075, 0.025}};
  CountDistribution tracklets_per_nodule{1, {0.14, 0.15, 0.18, 0.18, 0.13, 0.09, 0.08, 0.05}};
  std::size_t dim = 512;
  double intra_noise = 0.05;
  double min_center_angle = 0.7853981633974483;  // pi / 4
  double length_log_mean = 4.0;
  double length_log_sigma = 1.2;
  std::int64_t min_length = 1;
  std::int64_t max_length = 2122;
  std::size_t max_center_attempts = 10000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Cosine-distance summary of the generated gallery.
struct SeparationReport {
  std::size_t within_pairs = 0;
  std::size_t between_pairs = 0;  // different nodules of the same patient
  double mean_within = 0.0;
  double max_within = 0.0;
  double mean_between = 0.0;
  double min_between = 0.0;
  bool separable = true;  // max_within < min_between
};

struct SynthGallery {
  Gallery gallery;
  SeparationReport report;
};

/// Nodule centres are uniform on the unit sphere, redrawn until every pair in
/// a patient is at least min_center_angle apart. Each tracklet embedding is
/// normalize(centre + intra_noise * N(0, I)).
SynthGallery generate_gallery(const SynthConfig& config);

/// Adds N(0, noise_sigma^2) to every score; labels and ids are kept.
std::vector<ScoredPair> perturb_scores(std::span<const ScoredPair> pairs, double noise_sigma,
                                       std::uint64_t seed);

}  // namespace reid
