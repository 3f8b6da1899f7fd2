#include "reid/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <random>

namespace reid {
namespace {

std::vector<std::size_t> visiting_order(std::size_t n, const ClusterConfig& config) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (config.order == SeedOrder::kSeededRandom) {
    std::mt19937_64 rng(config.seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  return order;
}

Partition threshold_literal(const DistanceKernel& dist, double tau,
                            std::vector<std::size_t> remaining) {
  std::vector<Partition::Cluster> clusters;
  std::vector<std::size_t> residue;
  while (!remaining.empty()) {
    Partition::Cluster cluster{remaining.front()};
    residue.clear();
    for (std::size_t r = 1; r < remaining.size(); ++r) {
      const std::size_t f = remaining[r];
      const bool close = std::any_of(cluster.begin(), cluster.end(),
                                     [&](std::size_t m) { return dist(m, f) < tau; });
      if (close) {
        cluster.push_back(f);
      } else {
        residue.push_back(f);
      }
    }
    clusters.push_back(std::move(cluster));
    remaining.swap(residue);
  }
  return Partition(std::move(clusters));
}

Partition threshold_fixpoint(const DistanceKernel& dist, double tau,
                             std::vector<std::size_t> remaining) {
  std::vector<Partition::Cluster> clusters;
  std::vector<std::size_t> kept;
  while (!remaining.empty()) {
    Partition::Cluster cluster{remaining.front()};
    remaining.erase(remaining.begin());
    // Members are compared against the residue once each; a member absorbed
    // late still gets its own comparison, so nothing reachable is missed.
    for (std::size_t next = 0; next < cluster.size() && !remaining.empty(); ++next) {
      const std::size_t m = cluster[next];
      kept.clear();
      for (std::size_t f : remaining) {
        if (dist(m, f) < tau) {
          cluster.push_back(f);
        } else {
          kept.push_back(f);
        }
      }
      remaining.swap(kept);
    }
    clusters.push_back(std::move(cluster));
  }
  return Partition(std::move(clusters));
}

double squared_norm_diff(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

double median(std::vector<double> values) {
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lower + upper);
}

}  // namespace

void ClusterConfig::validate() const {
  if (!(std::isfinite(tau) && tau > 0.0)) throw Error("cluster: tau must be finite and > 0");
}

ClusterMode parse_cluster_mode(std::string_view name) {
  if (name == "literal") return ClusterMode::kLiteral;
  if (name == "fixpoint") return ClusterMode::kFixpoint;
  throw Error("unknown cluster mode '" + std::string(name) + "'");
}

std::string_view to_string(ClusterMode mode) {
  return mode == ClusterMode::kLiteral ? "literal" : "fixpoint";
}

Partition cluster_threshold(std::span<const FeatureVector> features, const ClusterConfig& config) {
  config.validate();
  if (features.empty()) return {};
  const DistanceKernel dist(features, config.metric);
  auto order = visiting_order(features.size(), config);
  if (config.mode == ClusterMode::kLiteral) return threshold_literal(dist, config.tau, std::move(order));
  return threshold_fixpoint(dist, config.tau, std::move(order));
}

DbscanResult cluster_dbscan(std::span<const FeatureVector> features, double eps,
                            std::size_t min_pts, Metric metric) {
  if (!(std::isfinite(eps) && eps > 0.0)) throw Error("dbscan: eps must be finite and > 0");
  if (min_pts < 1) throw Error("dbscan: min_pts must be >= 1");
  const std::size_t n = features.size();
  const DistanceKernel dist(features, metric);

  auto region = [&](std::size_t p) {
    std::vector<std::size_t> out;
    for (std::size_t q = 0; q < n; ++q) {
      if (q == p || dist(p, q) < eps) out.push_back(q);
    }
    return out;
  };

  constexpr std::size_t kUnvisited = std::numeric_limits<std::size_t>::max();
  constexpr std::size_t kNoise = kUnvisited - 1;
  std::vector<std::size_t> label(n, kUnvisited);
  std::size_t next_cluster = 0;

  for (std::size_t p = 0; p < n; ++p) {
    if (label[p] != kUnvisited) continue;
    auto neighbours = region(p);
    if (neighbours.size() < min_pts) {
      label[p] = kNoise;
      continue;
    }
    const std::size_t c = next_cluster++;
    label[p] = c;
    std::deque<std::size_t> seeds(neighbours.begin(), neighbours.end());
    while (!seeds.empty()) {
      const std::size_t q = seeds.front();
      seeds.pop_front();
      if (label[q] == kNoise) label[q] = c;  // border point
      if (label[q] != kUnvisited) continue;
      label[q] = c;
      auto reach = region(q);
      if (reach.size() >= min_pts) seeds.insert(seeds.end(), reach.begin(), reach.end());
    }
  }

  DbscanResult result;
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] == kNoise) {
      result.noise.push_back(i);
      labels[i] = next_cluster++;
    } else {
      labels[i] = label[i];
    }
  }
  result.partition = Partition::from_labels(labels);
  return result;
}

MeanShiftResult cluster_mean_shift(std::span<const FeatureVector> features,
                                   const MeanShiftOptions& options, Metric metric) {
  if (metric != Metric::kEuclidean) throw Error("mean shift: requires the euclidean metric");
  if (!(std::isfinite(options.bandwidth) && options.bandwidth > 0.0)) {
    throw Error("mean shift: bandwidth must be finite and > 0");
  }
  const std::size_t n = features.size();
  if (n == 0) return {};
  const std::size_t dim = features[0].dim();
  for (const auto& f : features) {
    if (f.dim() != dim) throw Error("mean shift: dimension mismatch");
  }
  const double radius2 = options.bandwidth * options.bandwidth;
  const double stop = options.convergence_scale * options.bandwidth;

  struct Mode {
    std::vector<double> centre;
    std::size_t population = 0;
    std::size_t seed = 0;
  };
  std::vector<Mode> converged(n);
  std::vector<double> mean(dim);

  for (std::size_t s = 0; s < n; ++s) {
    auto& mode = converged[s];
    mode.seed = s;
    mode.centre.assign(features[s].values().begin(), features[s].values().end());
    for (std::size_t it = 0; it < options.max_iter; ++it) {
      std::fill(mean.begin(), mean.end(), 0.0);
      std::size_t inside = 0;
      for (const auto& f : features) {
        if (squared_norm_diff(f.values(), mode.centre) <= radius2) {
          const auto v = f.values();
          for (std::size_t k = 0; k < dim; ++k) mean[k] += v[k];
          ++inside;
        }
      }
      if (inside == 0) break;
      for (auto& m : mean) m /= static_cast<double>(inside);
      const double shift = std::sqrt(squared_norm_diff(mean, mode.centre));
      mode.centre = mean;
      mode.population = inside;
      if (shift < stop) break;
    }
  }

  std::vector<std::size_t> by_population(n);
  std::iota(by_population.begin(), by_population.end(), 0);
  std::stable_sort(by_population.begin(), by_population.end(), [&](std::size_t a, std::size_t b) {
    return converged[a].population > converged[b].population;
  });
  std::vector<std::vector<double>> kept;
  for (std::size_t idx : by_population) {
    const auto& c = converged[idx].centre;
    const bool near = std::any_of(kept.begin(), kept.end(), [&](const std::vector<double>& k) {
      return squared_norm_diff(k, c) <= radius2;
    });
    if (!near) kept.push_back(c);
  }

  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < kept.size(); ++k) {
      const double d = squared_norm_diff(features[i].values(), kept[k]);
      if (d < best) {
        best = d;
        labels[i] = k;
      }
    }
  }

  MeanShiftResult result;
  result.partition = Partition::from_labels(labels);
  for (const auto& cluster : result.partition.clusters()) {
    result.modes.emplace_back(kept[labels[cluster.front()]]);
  }
  return result;
}

AffinityResult cluster_affinity_propagation(std::span<const FeatureVector> features,
                                            const AffinityOptions& options, Metric metric) {
  if (!(options.damping >= 0.5 && options.damping < 1.0)) {
    throw Error("affinity propagation: damping must lie in [0.5, 1)");
  }
  if (options.max_iter < 1) throw Error("affinity propagation: max_iter must be >= 1");
  if (options.convergence_iter < 1) throw Error("affinity propagation: convergence_iter must be >= 1");
  const std::size_t n = features.size();
  AffinityResult result;
  if (n == 0) {
    result.converged = true;
    return result;
  }

  const DistanceKernel dist(features, metric);
  std::vector<double> s(n * n, 0.0);
  std::vector<double> off_diagonal;
  off_diagonal.reserve(n * (n - 1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      if (i == k) continue;
      const double d = dist(i, k);
      s[i * n + k] = -d * d;
      off_diagonal.push_back(s[i * n + k]);
    }
  }
  const double preference =
      options.preference ? *options.preference : (n > 1 ? median(off_diagonal) : 0.0);
  if (!std::isfinite(preference)) throw Error("affinity propagation: preference must be finite");
  for (std::size_t i = 0; i < n; ++i) s[i * n + i] = preference;

  // Mutually equal similarities admit no meaningful exemplar choice.
  const bool all_equal =
      std::all_of(off_diagonal.begin(), off_diagonal.end(),
                  [&](double v) { return v == off_diagonal.front(); });
  if (n == 1 || all_equal) {
    result.converged = true;
    if (n > 1 && preference > off_diagonal.front()) {
      result.partition = Partition::singletons(n);
      result.exemplars.resize(n);
      std::iota(result.exemplars.begin(), result.exemplars.end(), 0);
    } else {
      result.partition = Partition({[n] {
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), 0);
        return all;
      }()});
      result.exemplars = {0};
    }
    return result;
  }

  // Tiny deterministic jitter breaks exact ties between candidate exemplars.
  {
    std::mt19937_64 rng(0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    constexpr double kEps = std::numeric_limits<double>::epsilon();
    constexpr double kTiny = std::numeric_limits<double>::min();
    for (auto& v : s) v += (kEps * v + kTiny * 100.0) * gauss(rng);
  }

  const double damping = options.damping;
  std::vector<double> r(n * n, 0.0), a(n * n, 0.0), tmp(n * n);
  std::vector<std::vector<char>> history(options.convergence_iter, std::vector<char>(n, 0));
  std::vector<char> is_exemplar(n, 0);
  result.converged = false;

  for (std::size_t it = 0; it < options.max_iter; ++it) {
    // Responsibilities.
    for (std::size_t i = 0; i < n; ++i) {
      double first = -std::numeric_limits<double>::infinity();
      double second = first;
      std::size_t arg = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const double v = a[i * n + k] + s[i * n + k];
        if (v > first) {
          second = first;
          first = v;
          arg = k;
        } else if (v > second) {
          second = v;
        }
      }
      for (std::size_t k = 0; k < n; ++k) {
        const double competitor = (k == arg) ? second : first;
        tmp[i * n + k] = s[i * n + k] - competitor;
      }
    }
    for (std::size_t x = 0; x < n * n; ++x) r[x] = damping * r[x] + (1.0 - damping) * tmp[x];

    // Availabilities.
    for (std::size_t k = 0; k < n; ++k) {
      double column = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        column += (i == k) ? r[k * n + k] : std::max(0.0, r[i * n + k]);
      }
      for (std::size_t i = 0; i < n; ++i) {
        const double own = (i == k) ? r[k * n + k] : std::max(0.0, r[i * n + k]);
        const double v = column - own;
        tmp[i * n + k] = (i == k) ? v : std::min(0.0, v);
      }
    }
    for (std::size_t x = 0; x < n * n; ++x) a[x] = damping * a[x] + (1.0 - damping) * tmp[x];

    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      is_exemplar[i] = (a[i * n + i] + r[i * n + i]) > 0.0;
      count += is_exemplar[i];
    }
    history[it % options.convergence_iter] = is_exemplar;
    result.iterations = it + 1;

    if (it >= options.convergence_iter) {
      bool stable = true;
      for (std::size_t i = 0; i < n && stable; ++i) {
        std::size_t votes = 0;
        for (const auto& h : history) votes += h[i];
        stable = (votes == 0 || votes == options.convergence_iter);
      }
      if (stable && count > 0) {
        result.converged = true;
        break;
      }
    }
  }

  std::vector<std::size_t> exemplars;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_exemplar[i]) exemplars.push_back(i);
  }
  if (exemplars.empty()) {
    result.converged = false;
    result.partition = Partition::singletons(n);
    return result;
  }

  auto assign = [&](const std::vector<std::size_t>& ex) {
    std::vector<std::size_t> c(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t e = 1; e < ex.size(); ++e) {
        if (s[i * n + ex[e]] > s[i * n + ex[best]]) best = e;
      }
      c[i] = best;
    }
    for (std::size_t e = 0; e < ex.size(); ++e) c[ex[e]] = e;
    return c;
  };

  // Re-centre each exemplar on the member with the largest summed similarity.
  auto owner = assign(exemplars);
  for (std::size_t e = 0; e < exemplars.size(); ++e) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i) {
      if (owner[i] == e) members.push_back(i);
    }
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j : members) {
      double total = 0.0;
      for (std::size_t i : members) total += s[i * n + j];
      if (total > best) {
        best = total;
        exemplars[e] = j;
      }
    }
  }
  owner = assign(exemplars);

  result.partition = Partition::from_labels(owner);
  for (const auto& cluster : result.partition.clusters()) {
    result.exemplars.push_back(exemplars[owner[cluster.front()]]);
  }
  return result;
}

std::vector<PatientPartition> cluster_gallery(const Gallery& gallery, const ClusterFn& cluster) {
  std::vector<PatientPartition> out;
  out.reserve(gallery.patients().size());
  for (const auto& patient : gallery.patients()) {
    const auto features = gallery.embeddings(patient.indices);
    out.push_back({patient.patient_id, patient.indices, cluster(features)});
  }
  return out;
}

std::vector<NoduleCount> count_nodules(const Gallery& gallery, const ClusterConfig& config) {
  const auto parts = cluster_gallery(gallery, [&](std::span<const FeatureVector> f) {
    return cluster_threshold(f, config);
  });
  std::vector<NoduleCount> counts;
  counts.reserve(parts.size());
  for (const auto& p : parts) counts.push_back({p.patient_id, p.partition.size()});
  return counts;
}

}  // namespace reid
