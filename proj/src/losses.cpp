#include "reid/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <string>

namespace reid {
namespace {

double log_sum_exp(std::span<const double> x) {
  const double top = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - top);
  return top + std::log(s);
}

void require_finite(std::span<const double> x, const char* what) {
  for (double v : x) {
    if (!std::isfinite(v)) throw Error(std::string(what) + ": non-finite score");
  }
}

}  // namespace

void PKBatch::validate() const {
  if (embeddings.size() != p * k || labels.size() != p * k) {
    throw Error("pk batch: expected " + std::to_string(p * k) + " samples");
  }
  std::vector<std::size_t> per_class(p, 0);
  for (std::size_t label : labels) {
    if (label >= p) throw Error("pk batch: label " + std::to_string(label) + " out of range");
    ++per_class[label];
  }
  for (std::size_t c = 0; c < p; ++c) {
    if (per_class[c] != k) {
      throw Error("pk batch: class " + std::to_string(c) + " has " +
                  std::to_string(per_class[c]) + " samples, expected " + std::to_string(k));
    }
  }
  for (std::size_t i = 1; i < embeddings.size(); ++i) {
    if (embeddings[i].dim() != embeddings[0].dim()) throw Error("pk batch: dimension mismatch");
  }
}

PKBatch make_pk_batch(std::vector<FeatureVector> embeddings, std::span<const std::int64_t> labels) {
  if (embeddings.size() != labels.size()) throw Error("pk batch: label count mismatch");
  std::map<std::int64_t, std::size_t> dense;
  for (auto l : labels) dense.try_emplace(l, 0);
  std::size_t next = 0;
  for (auto& [label, index] : dense) index = next++;

  PKBatch batch;
  batch.p = dense.size();
  batch.k = batch.p == 0 ? 0 : labels.size() / batch.p;
  batch.embeddings = std::move(embeddings);
  for (auto l : labels) batch.labels.push_back(dense[l]);
  batch.validate();
  return batch;
}

std::vector<double> softmax(std::span<const double> scores) {
  if (scores.empty()) throw Error("softmax: empty input");
  require_finite(scores, "softmax");
  const double top = *std::max_element(scores.begin(), scores.end());
  std::vector<double> out(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - top);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

double trihard_loss(const PKBatch& batch, const TriHardOptions& options) {
  batch.validate();
  if (batch.p < 2 || batch.k < 2) throw Error("trihard: needs P >= 2 and K >= 2");
  if (!(options.margin >= 0.0)) throw Error("trihard: margin must be >= 0");

  const auto dist = pairwise_distance_matrix(batch.embeddings, options.metric);
  const std::size_t n = batch.embeddings.size();
  double total = 0.0;
  for (std::size_t anchor = 0; anchor < n; ++anchor) {
    double hardest_positive = -std::numeric_limits<double>::infinity();
    double hardest_negative = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      const double d = dist(anchor, j);
      if (batch.labels[j] == batch.labels[anchor]) {
        hardest_positive = std::max(hardest_positive, d);
      } else {
        hardest_negative = std::min(hardest_negative, d);
      }
    }
    total += std::max(0.0, options.margin + hardest_positive - hardest_negative);
  }
  return options.normalize ? total / static_cast<double>(n) : total;
}

ScoreMatrix one_hot(std::span<const std::size_t> classes, std::size_t num_classes) {
  ScoreMatrix m{classes.size(), num_classes, std::vector<double>(classes.size() * num_classes, 0.0)};
  for (std::size_t r = 0; r < classes.size(); ++r) {
    if (classes[r] >= num_classes) throw Error("one_hot: class index out of range");
    m.values[r * num_classes + classes[r]] = 1.0;
  }
  return m;
}

double classification_loss(const ScoreMatrix& logits, const ScoreMatrix& one_hot_labels) {
  if (logits.cols < 2) throw Error("classification loss: needs at least 2 classes");
  if (logits.rows == 0) throw Error("classification loss: empty batch");
  if (logits.values.size() != logits.rows * logits.cols) throw Error("classification loss: bad logits shape");
  if (one_hot_labels.rows != logits.rows || one_hot_labels.cols != logits.cols ||
      one_hot_labels.values.size() != logits.values.size()) {
    throw Error("classification loss: label shape does not match logits");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const auto x = logits.row(r);
    const auto y = one_hot_labels.row(r);
    require_finite(x, "classification loss");
    std::size_t ones = 0;
    std::size_t target = 0;
    for (std::size_t c = 0; c < y.size(); ++c) {
      if (y[c] == 1.0) {
        ++ones;
        target = c;
      } else if (y[c] != 0.0) {
        ones = 2;
        break;
      }
    }
    if (ones != 1) throw Error("classification loss: row " + std::to_string(r) + " is not one-hot");
    total -= x[target] - log_sum_exp(x);
  }
  return total / static_cast<double>(logits.rows);
}

ObjectiveBreakdown combined_classification_objective(const PKBatch& batch,
                                                     const ScoreMatrix& logits,
                                                     const ScoreMatrix& one_hot_labels,
                                                     const TriHardOptions& options) {
  ObjectiveBreakdown out;
  out.first = classification_loss(logits, one_hot_labels);
  out.second = trihard_loss(batch, options);
  out.total = out.first + out.second;
  return out;
}

double contrastive_loss(const LabeledPairBatch& batch, double margin) {
  if (batch.empty()) throw Error("contrastive loss: empty batch");
  if (!(margin > 0.0)) throw Error("contrastive loss: margin must be > 0");
  double total = 0.0;
  for (const auto& pair : batch) {
    const double d = distance(Metric::kEuclidean, pair.first, pair.second);
    total += pair.same ? d * d : std::max(0.0, margin - d);
  }
  return total / (2.0 * static_cast<double>(batch.size()));
}

double verification_cross_entropy(const LabeledPairBatch& batch) {
  if (batch.empty()) throw Error("verification cross-entropy: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& logits = batch[i].logits;
    if (!logits || logits->size() != 2) {
      throw Error("verification cross-entropy: pair " + std::to_string(i) + " needs two logits");
    }
    require_finite(*logits, "verification cross-entropy");
    const double target = (*logits)[batch[i].same ? 1 : 0];
    total -= target - log_sum_exp(*logits);
  }
  return total / static_cast<double>(batch.size());
}

ObjectiveBreakdown combined_verification_objective(const LabeledPairBatch& batch, double margin) {
  ObjectiveBreakdown out;
  out.first = verification_cross_entropy(batch);
  out.second = contrastive_loss(batch, margin);
  out.total = out.first + out.second;
  return out;
}

PKBatch sample_pk_batch(const Gallery& gallery, std::size_t p, std::size_t k, std::uint64_t seed) {
  if (p < 1 || k < 1) throw Error("pk sampling: P and K must be >= 1");
  if (!gallery.has_ground_truth()) throw Error("pk sampling: gallery lacks nodule ids");

  // Nodules keyed by (patient, nodule), in order of first appearance.
  std::map<std::pair<std::string, std::string>, std::size_t> slot;
  std::vector<std::vector<std::size_t>> nodules;
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    const auto& r = gallery[i];
    auto [it, inserted] = slot.try_emplace({r.patient_id, *r.nodule_id}, nodules.size());
    if (inserted) nodules.emplace_back();
    nodules[it->second].push_back(i);
  }
  if (nodules.size() < p) {
    throw Error("pk sampling: gallery has " + std::to_string(nodules.size()) +
                " nodules, need P = " + std::to_string(p));
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(nodules.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  PKBatch batch;
  batch.p = p;
  batch.k = k;
  for (std::size_t c = 0; c < p; ++c) {
    auto members = nodules[order[c]];
    std::vector<std::size_t> picked;
    if (members.size() >= k) {
      std::shuffle(members.begin(), members.end(), rng);
      picked.assign(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(k));
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      for (std::size_t j = 0; j < k; ++j) picked.push_back(members[pick(rng)]);
    }
    for (std::size_t idx : picked) {
      batch.embeddings.push_back(gallery[idx].embedding);
      batch.labels.push_back(c);
      batch.source_indices.push_back(idx);
    }
  }
  batch.validate();
  return batch;
}

}  // namespace reid
