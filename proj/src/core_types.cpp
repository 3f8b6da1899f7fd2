#include "reid/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace reid {

bool FeatureVector::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

bool Gallery::has_ground_truth() const noexcept {
  return std::all_of(records_.begin(), records_.end(),
                     [](const TrackletRecord& r) { return r.nodule_id.has_value(); });
}

std::vector<FeatureVector> Gallery::embeddings(std::span<const std::size_t> indices) const {
  std::vector<FeatureVector> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(records_.at(i).embedding);
  return out;
}

Gallery build_gallery(std::vector<TrackletRecord> records) {
  if (records.empty()) throw Error("gallery: no records");

  const std::size_t dim = records.front().embedding.dim();
  std::unordered_set<std::string> seen;
  std::unordered_map<std::string, std::size_t> patient_slot;
  Gallery gallery;

  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const std::string where = "record " + std::to_string(i) + " ('" + r.tracklet_id + "')";
    if (r.embedding.dim() == 0) throw Error(where + ": empty embedding");
    if (r.embedding.dim() != dim) {
      throw Error(where + ": embedding dimension " + std::to_string(r.embedding.dim()) +
                  " does not match gallery dimension " + std::to_string(dim));
    }
    if (!r.embedding.all_finite()) throw Error(where + ": non-finite embedding entry");
    if (r.length_frames < 1) throw Error(where + ": length_frames must be >= 1");
    if (!seen.insert(r.tracklet_id).second) throw Error(where + ": duplicate tracklet_id");

    auto [it, inserted] = patient_slot.try_emplace(r.patient_id, gallery.patients_.size());
    if (inserted) gallery.patients_.push_back({r.patient_id, {}});
    gallery.patients_[it->second].indices.push_back(i);
  }

  gallery.dim_ = dim;
  gallery.records_ = std::move(records);
  return gallery;
}

Partition::Partition(std::vector<Cluster> clusters) : clusters_(std::move(clusters)) {
  canonicalize();
}

Partition Partition::from_labels(std::span<const std::size_t> labels) {
  std::unordered_map<std::size_t, std::size_t> slot;
  std::vector<Cluster> clusters;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = slot.try_emplace(labels[i], clusters.size());
    if (inserted) clusters.emplace_back();
    clusters[it->second].push_back(i);
  }
  return Partition(std::move(clusters));
}

Partition Partition::singletons(std::size_t n) {
  std::vector<Cluster> clusters(n);
  for (std::size_t i = 0; i < n; ++i) clusters[i] = {i};
  return Partition(std::move(clusters));
}

void Partition::canonicalize() {
  for (auto& c : clusters_) std::sort(c.begin(), c.end());
  std::sort(clusters_.begin(), clusters_.end(), [](const Cluster& a, const Cluster& b) {
    if (a.empty() || b.empty()) return a.size() < b.size();
    return a.front() < b.front();
  });
}

std::vector<std::size_t> Partition::labels(std::size_t n) const {
  validate(n);
  std::vector<std::size_t> out(n);
  for (std::size_t c = 0; c < clusters_.size(); ++c) {
    for (std::size_t i : clusters_[c]) out[i] = c;
  }
  return out;
}

void Partition::validate(std::size_t n) const {
  std::vector<char> hit(n, 0);
  std::size_t covered = 0;
  for (const auto& c : clusters_) {
    if (c.empty()) throw Error("partition: empty cluster");
    for (std::size_t i : c) {
      if (i >= n) throw Error("partition: index " + std::to_string(i) + " out of range");
      if (hit[i]) throw Error("partition: index " + std::to_string(i) + " in two clusters");
      hit[i] = 1;
      ++covered;
    }
  }
  if (covered != n) {
    throw Error("partition: covers " + std::to_string(covered) + " of " + std::to_string(n) +
                " elements");
  }
}

bool Partition::refines(const Partition& coarser, std::size_t n) const {
  const auto coarse = coarser.labels(n);
  validate(n);
  for (const auto& c : clusters_) {
    for (std::size_t i : c) {
      if (coarse[i] != coarse[c.front()]) return false;
    }
  }
  return true;
}

std::vector<IndexPair> patient_pairs(const Gallery& gallery) {
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    if (!gallery[i].nodule_id) {
      throw Error("patient_pairs: record " + std::to_string(i) + " ('" + gallery[i].tracklet_id +
                  "') has no nodule_id");
    }
  }
  std::vector<IndexPair> pairs;
  for (const auto& patient : gallery.patients()) {
    const auto& idx = patient.indices;
    for (std::size_t x = 0; x < idx.size(); ++x) {
      for (std::size_t y = x + 1; y < idx.size(); ++y) {
        pairs.push_back({idx[x], idx[y], *gallery[idx[x]].nodule_id == *gallery[idx[y]].nodule_id});
      }
    }
  }
  return pairs;
}

}  // namespace reid
