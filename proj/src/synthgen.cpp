#include "reid/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "reid/similarity.hpp"

namespace reid {
namespace {

std::vector<double> unit_gaussian(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(dim);
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (auto& x : v) {
      x = gauss(rng);
      n2 += x * x;
    }
  } while (n2 == 0.0);
  const double inv = 1.0 / std::sqrt(n2);
  for (auto& x : v) x *= inv;
  return v;
}

void normalize(std::vector<double>& v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  const double inv = 1.0 / std::sqrt(n2);
  for (auto& x : v) x *= inv;
}

double angle(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d += a[k] * b[k];
  return std::acos(std::clamp(d, -1.0, 1.0));
}

std::string padded(const char* prefix, std::size_t value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, value);
  return buf;
}

}  // namespace

double CountDistribution::mean() const {
  double total = 0.0, weighted = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    total += weights[i];
    weighted += weights[i] * static_cast<double>(min + i);
  }
  return weighted / total;
}

void CountDistribution::validate(const char* what) const {
  if (min < 1) throw Error(std::string(what) + ": counts must be >= 1");
  if (weights.empty()) throw Error(std::string(what) + ": no weights");
  double total = 0.0;
  for (double w : weights) {
    if (!(std::isfinite(w) && w >= 0.0)) throw Error(std::string(what) + ": weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw Error(std::string(what) + ": weights sum to zero");
}

void SynthConfig::validate() const {
  if (n_patients < 1) throw Error("synth: n_patients must be >= 1");
  nodules_per_patient.validate("synth nodules_per_patient");
  tracklets_per_nodule.validate("synth tracklets_per_nodule");
  if (dim < 2) throw Error("synth: dim must be >= 2");
  if (!(std::isfinite(intra_noise) && intra_noise >= 0.0)) throw Error("synth: intra_noise must be >= 0");
  if (!(min_center_angle > 0.0 && min_center_angle <= std::numbers::pi)) {
    throw Error("synth: min_center_angle must lie in (0, pi]");
  }
  if (!(std::isfinite(length_log_mean) && std::isfinite(length_log_sigma) && length_log_sigma >= 0.0)) {
    throw Error("synth: invalid length model");
  }
  if (min_length < 1 || max_length < min_length) throw Error("synth: invalid length bounds");
  if (max_center_attempts < 1) throw Error("synth: max_center_attempts must be >= 1");
}

SynthGallery generate_gallery(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::discrete_distribution<std::size_t> nodule_count(config.nodules_per_patient.weights.begin(),
                                                       config.nodules_per_patient.weights.end());
  std::discrete_distribution<std::size_t> tracklet_count(config.tracklets_per_nodule.weights.begin(),
                                                         config.tracklets_per_nodule.weights.end());
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::lognormal_distribution<double> length(config.length_log_mean, config.length_log_sigma);

  const int patient_width = std::max<int>(4, static_cast<int>(std::to_string(config.n_patients).size()));
  std::vector<TrackletRecord> records;

  for (std::size_t p = 0; p < config.n_patients; ++p) {
    const std::string patient_id = padded("P", p + 1, patient_width);
    const std::size_t nodules = config.nodules_per_patient.min + nodule_count(rng);

    std::vector<std::vector<double>> centres;
    while (centres.size() < nodules) {
      std::size_t attempt = 0;
      for (;; ++attempt) {
        if (attempt == config.max_center_attempts) {
          throw Error("synth: could not place " + std::to_string(nodules) + " nodule centres at angle >= " +
                      std::to_string(config.min_center_angle) + " in dimension " +
                      std::to_string(config.dim) + " after " + std::to_string(attempt) + " attempts");
        }
        auto candidate = unit_gaussian(config.dim, rng);
        const bool ok = std::all_of(centres.begin(), centres.end(), [&](const std::vector<double>& c) {
          return angle(c, candidate) >= config.min_center_angle;
        });
        if (ok) {
          centres.push_back(std::move(candidate));
          break;
        }
      }
    }

    for (std::size_t n = 0; n < nodules; ++n) {
      const std::string nodule_id = patient_id + "-" + padded("N", n + 1, 1);
      const std::size_t tracklets = config.tracklets_per_nodule.min + tracklet_count(rng);
      for (std::size_t t = 0; t < tracklets; ++t) {
        std::vector<double> e = centres[n];
        if (config.intra_noise > 0.0) {
          for (auto& x : e) x += config.intra_noise * gauss(rng);
          normalize(e);
        }
        // Truncation by redraw; clamped if the tail keeps missing.
        std::int64_t frames = 0;
        for (int tries = 0; tries < 100; ++tries) {
          frames = static_cast<std::int64_t>(std::llround(length(rng)));
          if (frames >= config.min_length && frames <= config.max_length) break;
        }
        frames = std::clamp(frames, config.min_length, config.max_length);
        records.push_back({nodule_id + "-" + padded("T", t + 1, 1), patient_id, nodule_id, frames,
                           FeatureVector(std::move(e))});
      }
    }
  }

  SynthGallery out{build_gallery(std::move(records)), {}};
  auto& rep = out.report;
  rep.min_between = std::numeric_limits<double>::infinity();
  double sum_within = 0.0, sum_between = 0.0;
  for (const auto& pair : patient_pairs(out.gallery)) {
    const double d = distance(Metric::kCosineDistance, out.gallery[pair.a].embedding,
                              out.gallery[pair.b].embedding);
    if (pair.same_nodule) {
      ++rep.within_pairs;
      sum_within += d;
      rep.max_within = std::max(rep.max_within, d);
    } else {
      ++rep.between_pairs;
      sum_between += d;
      rep.min_between = std::min(rep.min_between, d);
    }
  }
  if (rep.within_pairs) rep.mean_within = sum_within / static_cast<double>(rep.within_pairs);
  if (rep.between_pairs) {
    rep.mean_between = sum_between / static_cast<double>(rep.between_pairs);
  } else {
    rep.min_between = 0.0;
  }
  rep.separable = rep.between_pairs == 0 || rep.max_within < rep.min_between;
  return out;
}

std::vector<ScoredPair> perturb_scores(std::span<const ScoredPair> pairs, double noise_sigma,
                                       std::uint64_t seed) {
  if (!(std::isfinite(noise_sigma) && noise_sigma >= 0.0)) throw Error("perturb: noise_sigma must be >= 0");
  std::vector<ScoredPair> out(pairs.begin(), pairs.end());
  if (noise_sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, noise_sigma);
  for (auto& p : out) p.score += gauss(rng);
  return out;
}

}  // namespace reid
