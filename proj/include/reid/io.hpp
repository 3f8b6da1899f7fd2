#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "reid/clustering.hpp"
#include "reid/core_types.hpp"
#include "reid/losses.hpp"
#include "reid/metrics.hpp"

namespace reid::io {

/// Malformed input; the message carries source and line number.
class ParseError : public Error {
 public:
  ParseError(std::string_view source, std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Gallery JSONL: one object per line with tracklet_id, patient_id,
// nodule_id (string or null), length_frames, embedding.
Gallery read_gallery(std::istream& in, std::string_view source = "<gallery>");
Gallery read_gallery_file(const std::filesystem::path& path);
std::string format_gallery(const Gallery& gallery);

// Scores JSONL: pair_id, id_a, id_b, score, label (0 or 1).
std::vector<ScoredPair> read_scores(std::istream& in, std::string_view source = "<scores>");
std::vector<ScoredPair> read_scores_file(const std::filesystem::path& path);
std::string format_scores(std::span<const ScoredPair> pairs);

// Clusters JSON: {"patient_id": [["tracklet_id", ...], ...], ...}.
std::string format_clusters(const Gallery& gallery, std::span<const PatientPartition> partitions);
/// Resolves tracklet ids against the gallery; every record must appear once.
std::vector<PatientPartition> parse_clusters(std::string_view text, const Gallery& gallery,
                                             std::string_view source = "<clusters>");

/// PK batch JSONL: label (integer), embedding, and optionally logits (all rows
/// or none). With logits, the classification target of a row is its label,
/// which must then index into the logits.
struct PkBatchFile {
  PKBatch batch;
  std::optional<ScoreMatrix> logits;
  std::optional<ScoreMatrix> targets;  // one-hot, present with logits
};
PkBatchFile read_pk_batch(std::istream& in, std::string_view source = "<batch>");

/// Pair batch JSONL: embedding_a, embedding_b, y (0 or 1), optional logits [different, same].
LabeledPairBatch read_pair_batch(std::istream& in, std::string_view source = "<batch>");

/// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

}  // namespace reid::io
