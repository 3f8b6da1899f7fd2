#include "reid/io.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace reid::io {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

struct LineContext {
  std::string_view source;
  std::size_t line;

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(source, line, what); }
};

bool blank(const std::string& s) {
  return s.find_first_not_of(" \t\r\n") == std::string::npos;
}

// Calls fn(object, context) for each non-blank line.
template <typename Fn>
void for_each_object(std::istream& in, std::string_view source, Fn&& fn) {
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (blank(text)) continue;
    LineContext ctx{source, line};
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::exception& e) {
      ctx.fail(std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) ctx.fail("expected a JSON object");
    fn(obj, ctx);
  }
}

void check_keys(const json& obj, const LineContext& ctx, std::initializer_list<const char*> required,
                std::initializer_list<const char*> optional = {}) {
  for (const char* key : required) {
    if (!obj.contains(key)) ctx.fail(std::string("missing field '") + key + "'");
  }
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* key : required) known = known || item.key() == key;
    for (const char* key : optional) known = known || item.key() == key;
    if (!known) ctx.fail("unknown field '" + item.key() + "'");
  }
}

std::string get_string(const json& obj, const char* key, const LineContext& ctx) {
  const auto& v = obj.at(key);
  if (!v.is_string()) ctx.fail(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

double get_number(const json& v, const std::string& what, const LineContext& ctx) {
  if (!v.is_number()) ctx.fail(what + " must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) ctx.fail(what + " is not finite");
  return x;
}

std::vector<double> get_vector(const json& obj, const char* key, const LineContext& ctx) {
  const auto& v = obj.at(key);
  if (!v.is_array()) ctx.fail(std::string("field '") + key + "' must be an array of numbers");
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(get_number(v[i], std::string(key) + "[" + std::to_string(i) + "]", ctx));
  }
  return out;
}

std::int64_t get_integer(const json& obj, const char* key, const LineContext& ctx) {
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) ctx.fail(std::string("field '") + key + "' must be an integer");
  return v.get<std::int64_t>();
}

bool get_bit(const json& obj, const char* key, const LineContext& ctx) {
  const auto x = get_integer(obj, key, ctx);
  if (x != 0 && x != 1) ctx.fail(std::string("field '") + key + "' must be 0 or 1");
  return x == 1;
}

ordered_json to_json(std::span<const double> values) {
  ordered_json arr = ordered_json::array();
  for (double v : values) arr.push_back(v);
  return arr;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  return in;
}

}  // namespace

ParseError::ParseError(std::string_view source, std::size_t line, const std::string& what)
    : Error(std::string(source) + ":" + std::to_string(line) + ": " + what), line_(line) {}

Gallery read_gallery(std::istream& in, std::string_view source) {
  std::vector<TrackletRecord> records;
  std::vector<std::size_t> lines;
  for_each_object(in, source, [&](const json& obj, const LineContext& ctx) {
    check_keys(obj, ctx, {"tracklet_id", "patient_id", "nodule_id", "length_frames", "embedding"});
    TrackletRecord r;
    r.tracklet_id = get_string(obj, "tracklet_id", ctx);
    r.patient_id = get_string(obj, "patient_id", ctx);
    if (!obj.at("nodule_id").is_null()) r.nodule_id = get_string(obj, "nodule_id", ctx);
    r.length_frames = get_integer(obj, "length_frames", ctx);
    r.embedding = FeatureVector(get_vector(obj, "embedding", ctx));
    records.push_back(std::move(r));
    lines.push_back(ctx.line);
  });
  if (records.empty()) throw ParseError(source, 0, "no records");
  try {
    return build_gallery(std::move(records));
  } catch (const Error& e) {
    // Point at the line of the offending record when the message names one.
    const std::string msg = e.what();
    const std::string tag = "record ";
    if (msg.rfind(tag, 0) == 0) {
      const std::size_t idx = std::stoul(msg.substr(tag.size()));
      if (idx < lines.size()) throw ParseError(source, lines[idx], msg);
    }
    throw ParseError(source, 0, msg);
  }
}

Gallery read_gallery_file(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_gallery(in, path.string());
}

std::string format_gallery(const Gallery& gallery) {
  std::string out;
  for (const auto& r : gallery.records()) {
    ordered_json obj;
    obj["tracklet_id"] = r.tracklet_id;
    obj["patient_id"] = r.patient_id;
    obj["nodule_id"] = r.nodule_id ? ordered_json(*r.nodule_id) : ordered_json(nullptr);
    obj["length_frames"] = r.length_frames;
    obj["embedding"] = to_json(r.embedding.values());
    out += obj.dump();
    out += '\n';
  }
  return out;
}

std::vector<ScoredPair> read_scores(std::istream& in, std::string_view source) {
  std::vector<ScoredPair> pairs;
  std::set<std::string> ids;
  for_each_object(in, source, [&](const json& obj, const LineContext& ctx) {
    check_keys(obj, ctx, {"pair_id", "id_a", "id_b", "score", "label"});
    ScoredPair p;
    p.pair_id = get_string(obj, "pair_id", ctx);
    p.id_a = get_string(obj, "id_a", ctx);
    p.id_b = get_string(obj, "id_b", ctx);
    p.score = get_number(obj.at("score"), "field 'score'", ctx);
    p.label = get_bit(obj, "label", ctx);
    if (!ids.insert(p.pair_id).second) ctx.fail("duplicate pair_id '" + p.pair_id + "'");
    pairs.push_back(std::move(p));
  });
  return pairs;
}

std::vector<ScoredPair> read_scores_file(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_scores(in, path.string());
}

std::string format_scores(std::span<const ScoredPair> pairs) {
  std::string out;
  for (const auto& p : pairs) {
    ordered_json obj;
    obj["pair_id"] = p.pair_id;
    obj["id_a"] = p.id_a;
    obj["id_b"] = p.id_b;
    obj["score"] = p.score;
    obj["label"] = p.label ? 1 : 0;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

std::string format_clusters(const Gallery& gallery, std::span<const PatientPartition> partitions) {
  ordered_json root = ordered_json::object();
  for (const auto& part : partitions) {
    ordered_json clusters = ordered_json::array();
    for (const auto& cluster : part.partition.clusters()) {
      ordered_json ids = ordered_json::array();
      for (std::size_t local : cluster) ids.push_back(gallery[part.record_indices.at(local)].tracklet_id);
      clusters.push_back(std::move(ids));
    }
    root[part.patient_id] = std::move(clusters);
  }
  return root.dump(2) + "\n";
}

std::vector<PatientPartition> parse_clusters(std::string_view text, const Gallery& gallery,
                                             std::string_view source) {
  ordered_json root;
  try {
    root = ordered_json::parse(text);
  } catch (const ordered_json::exception& e) {
    throw ParseError(source, 0, std::string("malformed JSON: ") + e.what());
  }
  if (!root.is_object()) throw ParseError(source, 0, "expected an object keyed by patient_id");

  std::unordered_map<std::string, std::size_t> by_tracklet;
  for (std::size_t i = 0; i < gallery.size(); ++i) by_tracklet[gallery[i].tracklet_id] = i;
  std::map<std::string, const PatientGroup*> patients;
  for (const auto& g : gallery.patients()) patients[g.patient_id] = &g;

  std::vector<PatientPartition> out;
  std::set<std::string> seen_patients;
  for (const auto& [patient_id, clusters] : root.items()) {
    auto pit = patients.find(patient_id);
    if (pit == patients.end()) throw ParseError(source, 0, "patient '" + patient_id + "' is not in the gallery");
    seen_patients.insert(patient_id);
    const auto& indices = pit->second->indices;
    std::unordered_map<std::size_t, std::size_t> local;
    for (std::size_t i = 0; i < indices.size(); ++i) local[indices[i]] = i;

    if (!clusters.is_array()) throw ParseError(source, 0, "patient '" + patient_id + "': expected a list of clusters");
    std::vector<Partition::Cluster> parts;
    for (const auto& cluster : clusters) {
      if (!cluster.is_array()) throw ParseError(source, 0, "patient '" + patient_id + "': cluster must be a list");
      Partition::Cluster c;
      for (const auto& id : cluster) {
        if (!id.is_string()) throw ParseError(source, 0, "patient '" + patient_id + "': tracklet ids must be strings");
        const auto tid = id.get<std::string>();
        auto t = by_tracklet.find(tid);
        if (t == by_tracklet.end() || !local.count(t->second)) {
          throw ParseError(source, 0, "tracklet '" + tid + "' does not belong to patient '" + patient_id + "'");
        }
        c.push_back(local[t->second]);
      }
      parts.push_back(std::move(c));
    }
    Partition partition(std::move(parts));
    try {
      partition.validate(indices.size());
    } catch (const Error& e) {
      throw ParseError(source, 0, "patient '" + patient_id + "': " + e.what());
    }
    out.push_back({patient_id, indices, std::move(partition)});
  }
  for (const auto& g : gallery.patients()) {
    if (!seen_patients.count(g.patient_id)) {
      throw ParseError(source, 0, "patient '" + g.patient_id + "' is missing from the clusters");
    }
  }
  return out;
}

PkBatchFile read_pk_batch(std::istream& in, std::string_view source) {
  std::vector<FeatureVector> embeddings;
  std::vector<std::int64_t> labels;
  std::vector<std::vector<double>> logits;
  std::size_t with_logits = 0;
  for_each_object(in, source, [&](const json& obj, const LineContext& ctx) {
    check_keys(obj, ctx, {"label", "embedding"}, {"logits"});
    labels.push_back(get_integer(obj, "label", ctx));
    embeddings.emplace_back(get_vector(obj, "embedding", ctx));
    if (obj.contains("logits")) {
      logits.push_back(get_vector(obj, "logits", ctx));
      ++with_logits;
      if (logits.back().size() != logits.front().size()) ctx.fail("logits rows differ in length");
      if (labels.back() < 0 || static_cast<std::size_t>(labels.back()) >= logits.back().size()) {
        ctx.fail("label " + std::to_string(labels.back()) + " does not index into the logits");
      }
    } else if (with_logits) {
      ctx.fail("logits must be given on every row or none");
    }
  });
  if (embeddings.empty()) throw ParseError(source, 0, "empty batch");
  if (with_logits && with_logits != labels.size()) throw ParseError(source, 0, "logits must be given on every row or none");

  PkBatchFile out;
  try {
    out.batch = make_pk_batch(embeddings, labels);
  } catch (const Error& e) {
    throw ParseError(source, 0, e.what());
  }
  if (with_logits) {
    const std::size_t cols = logits.front().size();
    ScoreMatrix m{logits.size(), cols, {}};
    for (const auto& row : logits) m.values.insert(m.values.end(), row.begin(), row.end());
    std::vector<std::size_t> classes;
    for (auto l : labels) classes.push_back(static_cast<std::size_t>(l));
    out.targets = one_hot(classes, cols);
    out.logits = std::move(m);
  }
  return out;
}

LabeledPairBatch read_pair_batch(std::istream& in, std::string_view source) {
  LabeledPairBatch batch;
  for_each_object(in, source, [&](const json& obj, const LineContext& ctx) {
    check_keys(obj, ctx, {"embedding_a", "embedding_b", "y"}, {"logits"});
    LabeledPair p;
    p.first = FeatureVector(get_vector(obj, "embedding_a", ctx));
    p.second = FeatureVector(get_vector(obj, "embedding_b", ctx));
    if (p.first.dim() != p.second.dim() || p.first.dim() == 0) ctx.fail("embedding dimensions differ or are empty");
    p.same = get_bit(obj, "y", ctx);
    if (obj.contains("logits")) {
      p.logits = get_vector(obj, "logits", ctx);
      if (p.logits->size() != 2) ctx.fail("pair logits must have exactly 2 entries");
    }
    batch.push_back(std::move(p));
  });
  if (batch.empty()) throw ParseError(source, 0, "empty batch");
  return batch;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
  }
}

std::string read_file(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace reid::io
