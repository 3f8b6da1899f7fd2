#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace reid {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An E-dimensional tracklet embedding.
class FeatureVector {
 public:
  FeatureVector() = default;
  explicit FeatureVector(std::vector<double> values) : values_(std::move(values)) {}
  FeatureVector(std::initializer_list<double> values) : values_(values) {}

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  bool all_finite() const noexcept;

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;

 private:
  std::vector<double> values_;
};

struct TrackletRecord {
  std::string tracklet_id;
  std::string patient_id;  // one video per patient
  std::optional<std::string> nodule_id;
  std::int64_t length_frames = 1;
  FeatureVector embedding;

  friend bool operator==(const TrackletRecord&, const TrackletRecord&) = default;
};

/// Record indices of one patient, in gallery order.
struct PatientGroup {
  std::string patient_id;
  std::vector<std::size_t> indices;
};

/// Validated, immutable collection of tracklet records.
class Gallery {
 public:
  const std::vector<TrackletRecord>& records() const noexcept { return records_; }
  const TrackletRecord& operator[](std::size_t i) const { return records_[i]; }
  std::size_t size() const noexcept { return records_.size(); }
  std::size_t dim() const noexcept { return dim_; }

  /// Patients in order of first appearance.
  const std::vector<PatientGroup>& patients() const noexcept { return patients_; }

  bool has_ground_truth() const noexcept;

  std::vector<FeatureVector> embeddings(std::span<const std::size_t> indices) const;

 private:
  friend Gallery build_gallery(std::vector<TrackletRecord> records);
  std::vector<TrackletRecord> records_;
  std::vector<PatientGroup> patients_;
  std::size_t dim_ = 0;
};

/// Throws reid::Error naming the offending record on dimension mismatch,
/// duplicate tracklet_id, non-finite entry, empty embedding or bad length.
Gallery build_gallery(std::vector<TrackletRecord> records);

/// Disjoint, covering groups of indices into some feature list.
class Partition {
 public:
  using Cluster = std::vector<std::size_t>;

  Partition() = default;
  explicit Partition(std::vector<Cluster> clusters);

  /// Builds a partition from one cluster label per element.
  static Partition from_labels(std::span<const std::size_t> labels);
  static Partition singletons(std::size_t n);

  const std::vector<Cluster>& clusters() const noexcept { return clusters_; }
  std::size_t size() const noexcept { return clusters_.size(); }
  bool empty() const noexcept { return clusters_.empty(); }

  /// Cluster number of each element; requires the partition to cover 0..n-1.
  std::vector<std::size_t> labels(std::size_t n) const;

  /// Throws reid::Error unless clusters are non-empty, disjoint and cover 0..n-1.
  void validate(std::size_t n) const;

  /// True when every cluster of this partition lies inside one cluster of `coarser`.
  bool refines(const Partition& coarser, std::size_t n) const;

  friend bool operator==(const Partition&, const Partition&) = default;

 private:
  // Canonical form: members ascending, clusters ordered by smallest member.
  void canonicalize();
  std::vector<Cluster> clusters_;
};

struct IndexPair {
  std::size_t a = 0;
  std::size_t b = 0;
  bool same_nodule = false;

  friend bool operator==(const IndexPair&, const IndexPair&) = default;
};

/// Every unordered within-patient pair exactly once (a < b).
/// Requires nodule_id on every record.
std::vector<IndexPair> patient_pairs(const Gallery& gallery);

}  // namespace reid
