#include "reid/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "reid/similarity.hpp"

namespace reid {
namespace {

std::uint64_t choose2(std::uint64_t n) { return n < 2 ? 0 : n * (n - 1) / 2; }

double two_sided_z(double level) {
  if (!(level > 0.0 && level < 1.0)) throw Error("confidence level must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal(), 1.0 - (1.0 - level) / 2.0);
}

void require_both_classes(std::span<const ScoredPair> pairs, const char* what) {
  const bool pos = std::any_of(pairs.begin(), pairs.end(), [](const ScoredPair& p) { return p.label; });
  const bool neg = std::any_of(pairs.begin(), pairs.end(), [](const ScoredPair& p) { return !p.label; });
  if (!pos || !neg) throw Error(std::string(what) + ": needs both positive and negative pairs");
  for (const auto& p : pairs) {
    if (!std::isfinite(p.score)) throw Error(std::string(what) + ": non-finite score in pair '" + p.pair_id + "'");
  }
}

// 1-based midranks of `values`, ties sharing the mean of their ranks.
std::vector<double> midranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = r;
    i = j + 1;
  }
  return rank;
}

double sample_covariance(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += (x[i] - mx) * (y[i] - my);
  return s / static_cast<double>(n - 1);
}

double mean(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

void require_aligned(std::span<const ScoredPair> a, std::span<const ScoredPair> b) {
  if (a.size() != b.size()) throw Error("delong: the two models score different numbers of pairs");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].pair_id != b[i].pair_id || a[i].label != b[i].label) {
      throw Error("delong: pair lists are misaligned at position " + std::to_string(i) + " ('" +
                  a[i].pair_id + "' vs '" + b[i].pair_id + "')");
    }
  }
}

}  // namespace

PairConfusion& PairConfusion::operator+=(const PairConfusion& o) noexcept {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

ClusterScores scores_from_confusion(const PairConfusion& c) {
  ClusterScores s;
  s.confusion = c;
  s.precision = (c.tp + c.fp == 0) ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  s.recall = (c.tp + c.fn == 0) ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  s.f_score = (s.precision + s.recall == 0.0)
                  ? 0.0
                  : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

ClusterScores pairwise_cluster_metrics(std::span<const LabeledPartition> patients) {
  PairConfusion total;
  for (std::size_t p = 0; p < patients.size(); ++p) {
    const auto& patient = patients[p];
    const std::size_t n = patient.nodule_ids.size();
    try {
      patient.partition.validate(n);
    } catch (const Error& e) {
      throw Error("cluster metrics: patient " + std::to_string(p) +
                  ": partition does not match its records (" + e.what() + ")");
    }
    // Contingency counts: same-cluster and same-nodule pair totals.
    std::uint64_t together = 0, both = 0;
    for (const auto& cluster : patient.partition.clusters()) {
      together += choose2(cluster.size());
      std::map<std::string, std::uint64_t> per_nodule;
      for (std::size_t i : cluster) ++per_nodule[patient.nodule_ids[i]];
      for (const auto& [id, count] : per_nodule) both += choose2(count);
    }
    std::map<std::string, std::uint64_t> nodule_sizes;
    for (const auto& id : patient.nodule_ids) ++nodule_sizes[id];
    std::uint64_t same = 0;
    for (const auto& [id, count] : nodule_sizes) same += choose2(count);

    PairConfusion c;
    c.tp = both;
    c.fp = together - both;
    c.fn = same - both;
    c.tn = choose2(n) - c.tp - c.fp - c.fn;
    total += c;
  }
  return scores_from_confusion(total);
}

ClusterScores pairwise_cluster_metrics(const Gallery& gallery,
                                       std::span<const PatientPartition> partitions) {
  if (!gallery.has_ground_truth()) throw Error("cluster metrics: gallery lacks nodule ids");
  std::map<std::string, const PatientGroup*> by_id;
  for (const auto& g : gallery.patients()) by_id[g.patient_id] = &g;
  if (partitions.size() != by_id.size()) {
    throw Error("cluster metrics: " + std::to_string(partitions.size()) + " patients clustered, gallery has " +
                std::to_string(by_id.size()));
  }
  std::vector<LabeledPartition> labeled;
  labeled.reserve(partitions.size());
  for (const auto& part : partitions) {
    auto it = by_id.find(part.patient_id);
    if (it == by_id.end()) throw Error("cluster metrics: unknown patient '" + part.patient_id + "'");
    if (it->second->indices != part.record_indices) {
      throw Error("cluster metrics: records of patient '" + part.patient_id + "' do not match the gallery");
    }
    by_id.erase(it);
    LabeledPartition lp{part.partition, {}};
    for (std::size_t idx : part.record_indices) lp.nodule_ids.push_back(*gallery[idx].nodule_id);
    labeled.push_back(std::move(lp));
  }
  return pairwise_cluster_metrics(labeled);
}

std::vector<ScoredPair> score_patient_pairs(const Gallery& gallery) {
  std::vector<ScoredPair> out;
  for (const auto& pair : patient_pairs(gallery)) {
    const auto& a = gallery[pair.a];
    const auto& b = gallery[pair.b];
    out.push_back({a.tracklet_id + "|" + b.tracklet_id, a.tracklet_id, b.tracklet_id,
                   cosine_similarity(a.embedding, b.embedding), pair.same_nodule});
  }
  return out;
}

RocCurve roc_curve(std::span<const ScoredPair> pairs) {
  require_both_classes(pairs, "roc");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pairs[a].score > pairs[b].score; });
  double positives = 0.0, negatives = 0.0;
  for (const auto& p : pairs) (p.label ? positives : negatives) += 1.0;

  RocCurve roc;
  roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  double tp = 0.0, fp = 0.0, area = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double threshold = pairs[order[i]].score;
    const double tp_before = tp, fp_before = fp;
    while (i < order.size() && pairs[order[i]].score == threshold) {
      (pairs[order[i]].label ? tp : fp) += 1.0;
      ++i;
    }
    area += (fp - fp_before) * (tp + tp_before) / 2.0;
    roc.points.push_back({fp / negatives, tp / positives, threshold});
  }
  roc.auc = area / (positives * negatives);
  return roc;
}

Proportion wilson_interval(std::uint64_t successes, std::uint64_t trials, double level) {
  if (trials == 0) throw Error("wilson interval: no trials");
  if (successes > trials) throw Error("wilson interval: successes exceed trials");
  const double z = two_sided_z(level);
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  Proportion out;
  out.value = p;
  out.lower = std::clamp(centre - half, 0.0, 1.0);
  out.upper = std::clamp(centre + half, 0.0, 1.0);
  // Rounding in centre +/- half must not push an endpoint past the estimate.
  out.lower = std::min(out.lower, p);
  out.upper = std::max(out.upper, p);
  out.successes = successes;
  out.trials = trials;
  return out;
}

OperatingPoint operating_point(std::span<const ScoredPair> pairs, double threshold, double level) {
  require_both_classes(pairs, "operating point");
  OperatingPoint op;
  op.threshold = threshold;
  for (const auto& p : pairs) {
    const bool predicted = p.score >= threshold;
    if (p.label) {
      ++(predicted ? op.confusion.tp : op.confusion.fn);
    } else {
      ++(predicted ? op.confusion.fp : op.confusion.tn);
    }
  }
  const auto& c = op.confusion;
  op.accuracy = wilson_interval(c.tp + c.tn, c.total(), level);
  op.sensitivity = wilson_interval(c.tp, c.tp + c.fn, level);
  op.specificity = wilson_interval(c.tn, c.tn + c.fp, level);
  return op;
}

PlacementValues placement_values(std::span<const ScoredPair> pairs) {
  require_both_classes(pairs, "placement values");
  std::vector<double> all, pos, neg;
  all.reserve(pairs.size());
  for (const auto& p : pairs) {
    all.push_back(p.score);
    (p.label ? pos : neg).push_back(p.score);
  }
  const auto rank_all = midranks(all);
  const auto rank_pos = midranks(pos);
  const auto rank_neg = midranks(neg);
  const double m = static_cast<double>(pos.size());
  const double n = static_cast<double>(neg.size());

  PlacementValues out;
  std::size_t ip = 0, in = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].label) {
      // Negatives below, ties counted one half.
      out.positive.push_back((rank_all[i] - rank_pos[ip++]) / n);
    } else {
      // Positives above = m - (positives below or tied by halves).
      out.negative.push_back((m - (rank_all[i] - rank_neg[in++])) / m);
    }
  }
  return out;
}

AucInterval auc_confidence_interval(std::span<const ScoredPair> pairs, double level) {
  const auto pv = placement_values(pairs);
  if (pv.positive.size() < 2 || pv.negative.size() < 2) {
    throw Error("auc interval: needs at least 2 pairs of each class");
  }
  const double z = two_sided_z(level);
  AucInterval out;
  out.level = level;
  out.auc = mean(pv.positive);
  out.variance = sample_covariance(pv.positive, pv.positive) / static_cast<double>(pv.positive.size()) +
                 sample_covariance(pv.negative, pv.negative) / static_cast<double>(pv.negative.size());
  const double half = z * std::sqrt(std::max(0.0, out.variance));
  out.lower = std::clamp(out.auc - half, 0.0, 1.0);
  out.upper = std::clamp(out.auc + half, 0.0, 1.0);
  return out;
}

DelongCovariance delong_covariance(std::span<const ScoredPair> model_a,
                                   std::span<const ScoredPair> model_b) {
  require_aligned(model_a, model_b);
  const std::array<PlacementValues, 2> pv{placement_values(model_a), placement_values(model_b)};
  const std::size_t m = pv[0].positive.size();
  const std::size_t n = pv[0].negative.size();
  if (m < 2 || n < 2) throw Error("delong: needs at least 2 pairs of each class");

  DelongCovariance out;
  for (std::size_t r = 0; r < 2; ++r) {
    out.auc[r] = mean(pv[r].positive);
    for (std::size_t c = 0; c < 2; ++c) {
      out.positive[r][c] = sample_covariance(pv[r].positive, pv[c].positive);
      out.negative[r][c] = sample_covariance(pv[r].negative, pv[c].negative);
      out.total[r][c] = out.positive[r][c] / static_cast<double>(m) +
                        out.negative[r][c] / static_cast<double>(n);
    }
  }
  return out;
}

DelongResult delong_test(std::span<const ScoredPair> model_a, std::span<const ScoredPair> model_b) {
  const auto cov = delong_covariance(model_a, model_b);
  DelongResult out;
  out.auc_a = cov.auc[0];
  out.auc_b = cov.auc[1];
  out.variance = cov.total[0][0] + cov.total[1][1] - 2.0 * cov.total[0][1];
  const double diff = out.auc_a - out.auc_b;
  if (diff == 0.0) return out;  // z = 0, p = 1
  if (!(out.variance > 0.0)) {
    out.degenerate = true;
    out.z = std::copysign(std::numeric_limits<double>::infinity(), diff);
    out.p_value = 0.0;
    return out;
  }
  out.z = diff / std::sqrt(out.variance);
  out.p_value = std::erfc(std::abs(out.z) / std::sqrt(2.0));
  return out;
}

std::vector<BenchRow> timing_benchmark(const Gallery& gallery,
                                       std::span<const BenchAlgorithm> algorithms,
                                       std::size_t repetitions) {
  if (repetitions < 3) throw Error("benchmark: repetitions must be >= 3");
  if (!gallery.has_ground_truth()) throw Error("benchmark: gallery lacks nodule ids");
  std::vector<std::vector<FeatureVector>> features;
  for (const auto& patient : gallery.patients()) features.push_back(gallery.embeddings(patient.indices));

  using Clock = std::chrono::steady_clock;
  std::vector<BenchRow> rows;
  for (const auto& algo : algorithms) {
    std::vector<double> totals;
    std::vector<PatientPartition> first;
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
      double total = 0.0;
      for (std::size_t p = 0; p < features.size(); ++p) {
        const auto start = Clock::now();
        Partition part = algo.cluster(features[p]);
        total += std::chrono::duration<double>(Clock::now() - start).count();
        if (rep == 0) {
          const auto& g = gallery.patients()[p];
          first.push_back({g.patient_id, g.indices, std::move(part)});
        }
      }
      totals.push_back(total);
    }
    std::sort(totals.begin(), totals.end());
    const std::size_t mid = totals.size() / 2;
    const double median = totals.size() % 2 ? totals[mid] : 0.5 * (totals[mid - 1] + totals[mid]);

    BenchRow row;
    row.algorithm = algo.name;
    row.scores = pairwise_cluster_metrics(gallery, first);
    row.median_seconds = median;
    row.median_seconds_per_patient = median / static_cast<double>(features.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

TauTuning tune_tau(const Gallery& gallery, ClusterConfig base, std::span<const double> grid) {
  if (grid.empty()) throw Error("tau tuning: empty grid");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw Error("tau tuning: grid must be strictly increasing");
  }
  TauTuning out;
  std::vector<ClusterScores> scores;
  for (double tau : grid) {
    base.tau = tau;
    const auto parts = cluster_gallery(gallery, [&](std::span<const FeatureVector> f) {
      return cluster_threshold(f, base);
    });
    scores.push_back(pairwise_cluster_metrics(gallery, parts));
    out.f_scores.push_back(scores.back().f_score);
  }
  const double top = *std::max_element(out.f_scores.begin(), out.f_scores.end());
  std::size_t lo = 0;
  while (out.f_scores[lo] != top) ++lo;
  std::size_t hi = lo;
  while (hi + 1 < grid.size() && out.f_scores[hi + 1] == top) ++hi;
  const std::size_t pick = lo + (hi - lo) / 2;
  out.tau = grid[pick];
  out.scores = scores[pick];
  return out;
}

}  // namespace reid
