#include "commands.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "reid/clustering.hpp"
#include "reid/io.hpp"
#include "reid/losses.hpp"
#include "reid/metrics.hpp"
#include "reid/similarity.hpp"
#include "reid/synthgen.hpp"

namespace reid::cli {
namespace {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr const char* kSeedEnv = "REID_SEED";

std::uint64_t default_seed() {
  if (const char* env = std::getenv(kSeedEnv)) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw Error(std::string(kSeedEnv) + " is not an unsigned integer: '" + env + "'");
    }
  }
  return 0;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

ordered_json machine_info() {
  ordered_json m;
  utsname u{};
  if (uname(&u) == 0) {
    m["sysname"] = u.sysname;
    m["release"] = u.release;
    m["machine"] = u.machine;
  }
  m["hardware_concurrency"] = std::thread::hardware_concurrency();
  return m;
}

fs::path manifest_path(const fs::path& out) {
  fs::path p = out;
  p += ".manifest.json";
  return p;
}

/// Collects what a command did and writes the manifest next to its output.
class RunRecord {
 public:
  RunRecord(std::string command, std::vector<std::string> args)
      : command_(std::move(command)), args_(std::move(args)), started_(utc_now()),
        clock_(std::chrono::steady_clock::now()) {}

  ordered_json config = ordered_json::object();
  ordered_json inputs = ordered_json::object();
  ordered_json outputs = ordered_json::object();
  ordered_json notes = ordered_json::array();

  void write(const fs::path& out) const {
    ordered_json m;
    m["tool"] = "reid";
    m["tool_version"] = kToolVersion;
    m["command"] = command_;
    m["args"] = args_;
    m["config"] = config;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["notes"] = notes;
    m["timing"] = {{"started_at", started_},
                   {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_).count()}};
    m["machine"] = machine_info();
    io::write_file_atomic(manifest_path(out), m.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::vector<std::string> args_;
  std::string started_;
  std::chrono::steady_clock::time_point clock_;
};

std::vector<double> parse_weights(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(std::string(what) + ": '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw Error(std::string(what) + ": no weights given");
  return out;
}

ordered_json weights_json(const CountDistribution& d) {
  return {{"min", d.min}, {"weights", d.weights}};
}

ordered_json proportion_json(const Proportion& p) {
  return {{"value", p.value}, {"lower", p.lower}, {"upper", p.upper},
          {"successes", p.successes}, {"trials", p.trials}};
}

ordered_json scores_json(const ClusterScores& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f_score", s.f_score},
          {"tp", s.confusion.tp}, {"fp", s.confusion.fp}, {"tn", s.confusion.tn}, {"fn", s.confusion.fn}};
}

// Clustering algorithm selection shared by `cluster` and `bench`.
struct AlgoParams {
  double tau = 0.5;
  std::string metric;  // empty: euclidean for meanshift, cosine otherwise
  std::string mode = "fixpoint";
  std::string order = "seeded";
  std::uint64_t seed = 0;
  double eps = 0.5;
  std::size_t min_pts = 1;
  double bandwidth = 1.0;
  double damping = 0.9;
  std::size_t max_iter = 200;
  std::size_t convergence_iter = 15;
  std::optional<double> preference;
  std::string tune_on;
};

void add_algo_options(CLI::App* cmd, AlgoParams& p) {
  cmd->add_option("--tau", p.tau, "Threshold clustering distance threshold")->check(CLI::PositiveNumber);
  cmd->add_option("--metric", p.metric, "cosine or euclidean")->check(CLI::IsMember({"cosine", "euclidean"}));
  cmd->add_option("--mode", p.mode, "Threshold clustering mode")->check(CLI::IsMember({"fixpoint", "literal"}));
  cmd->add_option("--order", p.order, "Visiting order")->check(CLI::IsMember({"seeded", "input"}));
  cmd->add_option("--eps", p.eps, "DBSCAN neighbourhood radius")->check(CLI::PositiveNumber);
  cmd->add_option("--min-pts", p.min_pts, "DBSCAN core-point population")->check(CLI::PositiveNumber);
  cmd->add_option("--bandwidth", p.bandwidth, "Mean-shift window radius")->check(CLI::PositiveNumber);
  cmd->add_option("--damping", p.damping, "Affinity propagation damping")->check(CLI::Range(0.5, 0.999999));
  cmd->add_option("--max-iter", p.max_iter, "Affinity propagation iteration cap")->check(CLI::PositiveNumber);
  cmd->add_option("--convergence-iter", p.convergence_iter, "Affinity propagation stable rounds")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--preference", p.preference, "Affinity propagation preference (default: median similarity)");
  cmd->add_option("--tune-on", p.tune_on, "Validation gallery used to pick tau by maximum pairwise F")
      ->check(CLI::ExistingFile);
}

Metric metric_for(const AlgoParams& p, const std::string& algo) {
  if (!p.metric.empty()) return parse_metric(p.metric);
  return algo == "meanshift" ? Metric::kEuclidean : Metric::kCosineDistance;
}

ClusterConfig threshold_config(const AlgoParams& p) {
  ClusterConfig c;
  c.tau = p.tau;
  c.metric = metric_for(p, "threshold");
  c.mode = parse_cluster_mode(p.mode);
  c.seed = p.seed;
  c.order = p.order == "input" ? SeedOrder::kInputOrder : SeedOrder::kSeededRandom;
  return c;
}

std::vector<double> tau_grid(const Gallery& validation, Metric metric) {
  double widest = 0.0;
  for (const auto& g : validation.patients()) {
    const auto f = validation.embeddings(g.indices);
    const auto d = pairwise_distance_matrix(f, metric);
    for (std::size_t i = 0; i < d.size(); ++i) {
      for (std::size_t j = 0; j < d.size(); ++j) widest = std::max(widest, d(i, j));
    }
  }
  if (widest == 0.0) widest = 1.0;
  std::vector<double> grid;
  constexpr int kSteps = 200;
  for (int s = 1; s <= kSteps; ++s) grid.push_back(widest * s / kSteps);
  return grid;
}

// Resolves --tune-on into p.tau and records the outcome.
void maybe_tune(AlgoParams& p, RunRecord& run) {
  if (p.tune_on.empty()) return;
  const auto validation = io::read_gallery_file(p.tune_on);
  auto config = threshold_config(p);
  const auto grid = tau_grid(validation, config.metric);
  const auto tuned = tune_tau(validation, config, grid);
  p.tau = tuned.tau;
  run.inputs["tune_on"] = p.tune_on;
  run.config["tuned_tau"] = tuned.tau;
  run.config["tuning_f_score"] = tuned.scores.f_score;
}

struct AlgoStats {
  std::size_t dbscan_noise = 0;
  std::size_t affinity_unconverged = 0;
};

ClusterFn make_cluster_fn(const std::string& algo, const AlgoParams& p, std::shared_ptr<AlgoStats> stats) {
  const Metric metric = metric_for(p, algo);
  if (algo == "threshold") {
    const auto config = threshold_config(p);
    config.validate();
    return [config](std::span<const FeatureVector> f) { return cluster_threshold(f, config); };
  }
  if (algo == "dbscan") {
    return [=](std::span<const FeatureVector> f) {
      auto r = cluster_dbscan(f, p.eps, p.min_pts, metric);
      stats->dbscan_noise += r.noise.size();
      return r.partition;
    };
  }
  if (algo == "meanshift") {
    if (metric != Metric::kEuclidean) throw Error("meanshift requires --metric euclidean");
    MeanShiftOptions o;
    o.bandwidth = p.bandwidth;
    return [=](std::span<const FeatureVector> f) { return cluster_mean_shift(f, o, metric).partition; };
  }
  if (algo == "affinity") {
    AffinityOptions o;
    o.damping = p.damping;
    o.max_iter = p.max_iter;
    o.convergence_iter = p.convergence_iter;
    o.preference = p.preference;
    return [=](std::span<const FeatureVector> f) {
      auto r = cluster_affinity_propagation(f, o, metric);
      if (!r.converged) ++stats->affinity_unconverged;
      return r.partition;
    };
  }
  throw Error("unknown algorithm '" + algo + "'");
}

ordered_json algo_config(const std::string& algo, const AlgoParams& p) {
  ordered_json c;
  c["algo"] = algo;
  c["metric"] = to_string(metric_for(p, algo));
  if (algo == "threshold") {
    c["tau"] = p.tau;
    c["mode"] = p.mode;
    c["order"] = p.order;
    c["seed"] = p.seed;
  } else if (algo == "dbscan") {
    c["eps"] = p.eps;
    c["min_pts"] = p.min_pts;
  } else if (algo == "meanshift") {
    c["bandwidth"] = p.bandwidth;
    c["convergence_scale"] = MeanShiftOptions{}.convergence_scale;
  } else if (algo == "affinity") {
    c["damping"] = p.damping;
    c["max_iter"] = p.max_iter;
    c["convergence_iter"] = p.convergence_iter;
    c["preference"] = p.preference ? ordered_json(*p.preference) : ordered_json("median");
  }
  return c;
}

void append_stats(RunRecord& run, const AlgoStats& stats, const std::string& algo) {
  if (algo == "dbscan") {
    run.notes.push_back("dbscan: " + std::to_string(stats.dbscan_noise) +
                        " noise points emitted as singleton clusters");
  }
  if (algo == "affinity" && stats.affinity_unconverged > 0) {
    run.notes.push_back("warning: affinity propagation did not converge for " +
                        std::to_string(stats.affinity_unconverged) + " patient(s)");
  }
}

// Adds --seed to the recorded args when it came from the default or the environment.
std::vector<std::string> with_seed(std::vector<std::string> args, const CLI::Option* opt, std::uint64_t seed) {
  if (opt && opt->count() == 0) {
    args.push_back("--seed");
    args.push_back(std::to_string(seed));
  }
  return args;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Nodule tracklet re-identification: clustering, losses and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::uint64_t seed = 0;
  try {
    seed = default_seed();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  // synth
  SynthConfig synth;
  synth.seed = seed;
  std::string synth_out, nodule_weights, tracklet_weights;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic labelled gallery (JSONL)");
  synth_cmd->add_option("--patients", synth.n_patients, "Number of patients")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--dim", synth.dim, "Embedding dimension")->check(CLI::Range(2, 1 << 20));
  synth_cmd->add_option("--noise", synth.intra_noise, "Per-coordinate Gaussian sigma before renormalisation")
      ->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--min-angle", synth.min_center_angle, "Minimum angle between nodule centres (radians)");
  synth_cmd->add_option("--nodules-min", synth.nodules_per_patient.min, "Smallest nodule count");
  synth_cmd->add_option("--nodule-weights", nodule_weights, "Comma-separated weights for counts min, min+1, ...");
  synth_cmd->add_option("--tracklets-min", synth.tracklets_per_nodule.min, "Smallest tracklet count");
  synth_cmd->add_option("--tracklet-weights", tracklet_weights, "Comma-separated weights for counts min, min+1, ...");
  synth_cmd->add_option("--length-mu", synth.length_log_mean, "Log-normal mean of tracklet lengths");
  synth_cmd->add_option("--length-sigma", synth.length_log_sigma, "Log-normal sigma of tracklet lengths");
  auto* synth_seed = synth_cmd->add_option("--seed", synth.seed, "Random seed");
  synth_cmd->add_option("--out", synth_out, "Output gallery path")->required();

  // pairs
  std::string pairs_gallery, pairs_out;
  double pairs_sigma = 0.0;
  std::uint64_t pairs_seed = seed;
  auto* pairs_cmd = app.add_subcommand("pairs", "Score every within-patient pair by cosine similarity");
  pairs_cmd->add_option("--gallery", pairs_gallery, "Labelled gallery")->required()->check(CLI::ExistingFile);
  pairs_cmd->add_option("--perturb-sigma", pairs_sigma, "Gaussian noise added to every score")
      ->check(CLI::NonNegativeNumber);
  auto* pairs_seed_opt = pairs_cmd->add_option("--seed", pairs_seed, "Seed for the perturbation");
  pairs_cmd->add_option("--out", pairs_out, "Output scores path")->required();

  // cluster
  AlgoParams cluster_params;
  cluster_params.seed = seed;
  std::string cluster_gallery_path, cluster_out, cluster_algo = "threshold";
  auto* cluster_cmd = app.add_subcommand("cluster", "Cluster each patient's tracklets");
  cluster_cmd->add_option("--gallery", cluster_gallery_path, "Gallery")->required()->check(CLI::ExistingFile);
  cluster_cmd->add_option("--algo", cluster_algo, "threshold, dbscan, meanshift or affinity")
      ->check(CLI::IsMember({"threshold", "dbscan", "meanshift", "affinity"}));
  add_algo_options(cluster_cmd, cluster_params);
  auto* cluster_seed = cluster_cmd->add_option("--seed", cluster_params.seed, "Seed for the visiting order");
  cluster_cmd->add_option("--out", cluster_out, "Output clusters path")->required();

  // eval-cluster
  std::string ec_clusters, ec_gallery, ec_out;
  auto* ec_cmd = app.add_subcommand("eval-cluster", "Pairwise precision, recall and F of a clustering");
  ec_cmd->add_option("--clusters", ec_clusters, "Clusters file")->required()->check(CLI::ExistingFile);
  ec_cmd->add_option("--gallery", ec_gallery, "Labelled gallery")->required()->check(CLI::ExistingFile);
  ec_cmd->add_option("--out", ec_out, "Output report path")->required();

  // eval-pairs
  std::string ep_scores, ep_compare, ep_out;
  double ep_threshold = 0.5, ep_level = 0.95;
  auto* ep_cmd = app.add_subcommand("eval-pairs", "ROC, AUC with CI, operating point, optional DeLong test");
  ep_cmd->add_option("--scores", ep_scores, "Scores file")->required()->check(CLI::ExistingFile);
  ep_cmd->add_option("--compare", ep_compare, "Second model's scores on the same pairs")->check(CLI::ExistingFile);
  ep_cmd->add_option("--threshold", ep_threshold, "Operating point: positive iff score >= threshold");
  ep_cmd->add_option("--level", ep_level, "Confidence level")->check(CLI::Range(0.5, 0.9999));
  ep_cmd->add_option("--out", ep_out, "Output report path")->required();

  // bench
  AlgoParams bench_params;
  bench_params.seed = seed;
  std::string bench_gallery, bench_out;
  std::vector<std::string> bench_algos{"threshold", "dbscan", "meanshift", "affinity"};
  std::size_t bench_reps = 5;
  auto* bench_cmd = app.add_subcommand("bench", "Accuracy and timing of clustering algorithms");
  bench_cmd->add_option("--gallery", bench_gallery, "Labelled gallery")->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("--algos", bench_algos, "Algorithms to run")
      ->delimiter(',')
      ->check(CLI::IsMember({"threshold", "dbscan", "meanshift", "affinity"}));
  bench_cmd->add_option("--reps", bench_reps, "Repetitions per algorithm")->check(CLI::Range(3, 1000000));
  add_algo_options(bench_cmd, bench_params);
  auto* bench_seed = bench_cmd->add_option("--seed", bench_params.seed, "Seed for the visiting order");
  bench_cmd->add_option("--out", bench_out, "Output report path")->required();

  // loss
  std::string loss_batch, loss_objective, loss_out, loss_metric = "euclidean";
  double loss_margin = 0.3, loss_contrastive_margin = 1.0;
  bool loss_normalize = false;
  auto* loss_cmd = app.add_subcommand("loss", "Evaluate a training objective on a batch file");
  loss_cmd->add_option("--batch", loss_batch, "Batch JSONL")->required()->check(CLI::ExistingFile);
  loss_cmd->add_option("--objective", loss_objective, "Objective")
      ->required()
      ->check(CLI::IsMember({"trihard", "classification", "combined-class", "contrastive", "verification-ce",
                             "combined-verif"}));
  loss_cmd->add_option("--margin", loss_margin, "Triplet margin")->check(CLI::NonNegativeNumber);
  loss_cmd->add_option("--contrastive-margin", loss_contrastive_margin, "Contrastive margin")
      ->check(CLI::PositiveNumber);
  loss_cmd->add_option("--metric", loss_metric, "Triplet distance")->check(CLI::IsMember({"cosine", "euclidean"}));
  loss_cmd->add_flag("--normalize", loss_normalize, "Average the triplet loss over anchors instead of summing");
  loss_cmd->add_option("--out", loss_out, "Output report path")->required();

  // replay
  std::string replay_manifest;
  auto* replay_cmd = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  replay_cmd->add_option("manifest", replay_manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*synth_cmd) {
      if (!nodule_weights.empty()) synth.nodules_per_patient.weights = parse_weights(nodule_weights, "--nodule-weights");
      if (!tracklet_weights.empty()) {
        synth.tracklets_per_nodule.weights = parse_weights(tracklet_weights, "--tracklet-weights");
      }
      RunRecord run("synth", with_seed(args, synth_seed, synth.seed));
      const auto result = generate_gallery(synth);
      io::write_file_atomic(synth_out, io::format_gallery(result.gallery));

      run.config = {{"n_patients", synth.n_patients},
                    {"nodules_per_patient", weights_json(synth.nodules_per_patient)},
                    {"tracklets_per_nodule", weights_json(synth.tracklets_per_nodule)},
                    {"dim", synth.dim},
                    {"intra_noise", synth.intra_noise},
                    {"min_center_angle", synth.min_center_angle},
                    {"length_model", {{"log_mean", synth.length_log_mean}, {"log_sigma", synth.length_log_sigma},
                                      {"min", synth.min_length}, {"max", synth.max_length}}},
                    {"seed", synth.seed}};
      const auto& r = result.report;
      run.outputs["gallery"] = synth_out;
      run.outputs["records"] = result.gallery.size();
      run.outputs["patients"] = result.gallery.patients().size();
      run.outputs["separation"] = {{"within_pairs", r.within_pairs}, {"between_pairs", r.between_pairs},
                                   {"mean_within", r.mean_within},   {"max_within", r.max_within},
                                   {"mean_between", r.mean_between}, {"min_between", r.min_between},
                                   {"separable", r.separable}};
      run.write(synth_out);
      out << "wrote " << result.gallery.size() << " tracklets for " << result.gallery.patients().size()
          << " patients to " << synth_out << "\n"
          << "cosine distance within nodules: mean " << r.mean_within << ", max " << r.max_within
          << "; between nodules: mean " << r.mean_between << ", min " << r.min_between
          << (r.separable ? " (separable)" : " (overlapping)") << "\n";
      return 0;
    }

    if (*pairs_cmd) {
      RunRecord run("pairs", with_seed(args, pairs_seed_opt, pairs_seed));
      const auto gallery = io::read_gallery_file(pairs_gallery);
      auto scores = score_patient_pairs(gallery);
      if (pairs_sigma > 0.0) scores = perturb_scores(scores, pairs_sigma, pairs_seed);
      io::write_file_atomic(pairs_out, io::format_scores(scores));
      run.config = {{"score", "cosine_similarity"}, {"perturb_sigma", pairs_sigma}, {"seed", pairs_seed}};
      run.inputs["gallery"] = pairs_gallery;
      run.outputs["scores"] = pairs_out;
      run.outputs["pairs"] = scores.size();
      run.write(pairs_out);
      out << "wrote " << scores.size() << " scored pairs to " << pairs_out << "\n";
      return 0;
    }

    if (*cluster_cmd) {
      RunRecord run("cluster", with_seed(args, cluster_seed, cluster_params.seed));
      const auto gallery = io::read_gallery_file(cluster_gallery_path);
      maybe_tune(cluster_params, run);
      auto stats = std::make_shared<AlgoStats>();
      const auto parts = cluster_gallery(gallery, make_cluster_fn(cluster_algo, cluster_params, stats));
      io::write_file_atomic(cluster_out, io::format_clusters(gallery, parts));
      run.config.update(algo_config(cluster_algo, cluster_params));
      append_stats(run, *stats, cluster_algo);
      run.inputs["gallery"] = cluster_gallery_path;
      run.outputs["clusters"] = cluster_out;
      std::size_t total = 0;
      for (const auto& p : parts) total += p.partition.size();
      run.outputs["total_clusters"] = total;
      run.write(cluster_out);
      out << "clustered " << gallery.patients().size() << " patients into " << total << " clusters ("
          << cluster_algo << ")\n";
      for (const auto& note : run.notes) out << note.get<std::string>() << "\n";
      return 0;
    }

    if (*ec_cmd) {
      RunRecord run("eval-cluster", args);
      const auto gallery = io::read_gallery_file(ec_gallery);
      const auto parts = io::parse_clusters(io::read_file(ec_clusters), gallery, ec_clusters);
      const auto scores = pairwise_cluster_metrics(gallery, parts);
      ordered_json report = scores_json(scores);
      io::write_file_atomic(ec_out, report.dump(2) + "\n");
      run.inputs = {{"clusters", ec_clusters}, {"gallery", ec_gallery}};
      run.outputs["report"] = ec_out;
      run.write(ec_out);
      out << "precision " << scores.precision << "  recall " << scores.recall << "  F " << scores.f_score
          << "  (tp " << scores.confusion.tp << ", fp " << scores.confusion.fp << ", tn " << scores.confusion.tn
          << ", fn " << scores.confusion.fn << ")\n";
      return 0;
    }

    if (*ep_cmd) {
      RunRecord run("eval-pairs", args);
      const auto pairs = io::read_scores_file(ep_scores);
      const auto roc = roc_curve(pairs);
      const auto ci = auc_confidence_interval(pairs, ep_level);
      const auto op = operating_point(pairs, ep_threshold, ep_level);

      ordered_json report;
      report["pairs"] = pairs.size();
      report["positives"] = op.confusion.tp + op.confusion.fn;
      report["negatives"] = op.confusion.tn + op.confusion.fp;
      ordered_json points = ordered_json::array();
      for (const auto& p : roc.points) {
        // The origin's threshold is +infinity, which JSON cannot carry.
        points.push_back({p.fpr, p.tpr, std::isfinite(p.threshold) ? ordered_json(p.threshold) : ordered_json(nullptr)});
      }
      report["roc"] = {{"auc", roc.auc}, {"points", points}};
      report["auc_ci"] = {{"auc", ci.auc}, {"variance", ci.variance}, {"lower", ci.lower},
                          {"upper", ci.upper}, {"level", ci.level}, {"method", "delong"}};
      report["operating_point"] = {{"threshold", op.threshold},
                                   {"ci_method", "wilson"},
                                   {"accuracy", proportion_json(op.accuracy)},
                                   {"sensitivity", proportion_json(op.sensitivity)},
                                   {"specificity", proportion_json(op.specificity)}};
      run.inputs["scores"] = ep_scores;
      if (!ep_compare.empty()) {
        const auto other = io::read_scores_file(ep_compare);
        const auto d = delong_test(pairs, other);
        report["comparison"] = {{"auc_a", d.auc_a}, {"auc_b", d.auc_b}, {"variance", d.variance},
                                {"z", std::isfinite(d.z) ? ordered_json(d.z) : ordered_json(d.z > 0 ? "inf" : "-inf")},
                                {"p_value", d.p_value}, {"degenerate", d.degenerate}, {"method", "delong"}};
        run.inputs["compare"] = ep_compare;
        if (d.degenerate) run.notes.push_back("warning: zero variance of the AUC difference");
      }
      io::write_file_atomic(ep_out, report.dump(2) + "\n");
      run.config = {{"threshold", ep_threshold}, {"level", ep_level}};
      run.outputs["report"] = ep_out;
      run.write(ep_out);
      out << "AUC " << roc.auc << " (" << ep_level * 100 << "% CI " << ci.lower << "-" << ci.upper << ")\n"
          << "ACC " << op.accuracy.value << "  SE " << op.sensitivity.value << "  SP " << op.specificity.value
          << " at threshold " << ep_threshold << "\n";
      if (report.contains("comparison")) {
        out << "DeLong z " << report["comparison"]["z"].dump() << "  p " << report["comparison"]["p_value"].get<double>()
            << "\n";
      }
      return 0;
    }

    if (*bench_cmd) {
      RunRecord run("bench", with_seed(args, bench_seed, bench_params.seed));
      const auto gallery = io::read_gallery_file(bench_gallery);
      maybe_tune(bench_params, run);
      std::vector<BenchAlgorithm> algos;
      std::vector<std::shared_ptr<AlgoStats>> stats;
      ordered_json configs = ordered_json::array();
      for (const auto& name : bench_algos) {
        stats.push_back(std::make_shared<AlgoStats>());
        algos.push_back({name, make_cluster_fn(name, bench_params, stats.back())});
        configs.push_back(algo_config(name, bench_params));
      }
      const auto rows = timing_benchmark(gallery, algos, bench_reps);

      ordered_json report;
      report["patients"] = gallery.patients().size();
      report["records"] = gallery.size();
      report["repetitions"] = bench_reps;
      ordered_json table = ordered_json::array();
      for (const auto& row : rows) {
        ordered_json r;
        r["algorithm"] = row.algorithm;
        r.update(scores_json(row.scores));
        r["median_seconds"] = row.median_seconds;
        r["median_seconds_per_patient"] = row.median_seconds_per_patient;
        table.push_back(std::move(r));
      }
      report["rows"] = table;
      report["notes"] = {"dbscan noise points are scored as singleton clusters",
                         "timing covers the clustering calls only"};
      io::write_file_atomic(bench_out, report.dump(2) + "\n");

      run.config = {{"algorithms", configs}, {"repetitions", bench_reps}};
      for (std::size_t i = 0; i < bench_algos.size(); ++i) {
        auto s = *stats[i];
        // Counters accumulate over repetitions; report one repetition's worth.
        s.dbscan_noise /= bench_reps;
        s.affinity_unconverged /= bench_reps;
        append_stats(run, s, bench_algos[i]);
      }
      run.inputs["gallery"] = bench_gallery;
      run.outputs["report"] = bench_out;
      run.write(bench_out);

      out << std::left << std::setw(12) << "method" << std::right << std::setw(11) << "precision" << std::setw(9)
          << "recall" << std::setw(9) << "F" << std::setw(14) << "time(s)" << std::setw(16) << "per patient(s)"
          << "\n";
      out << std::fixed;
      for (const auto& row : rows) {
        out << std::left << std::setw(12) << row.algorithm << std::right << std::setprecision(2) << std::setw(11)
            << row.scores.precision * 100 << std::setw(9) << row.scores.recall * 100 << std::setw(9)
            << row.scores.f_score * 100 << std::setprecision(6) << std::setw(14) << row.median_seconds
            << std::setw(16) << row.median_seconds_per_patient << "\n";
      }
      out << std::defaultfloat;
      return 0;
    }

    if (*loss_cmd) {
      RunRecord run("loss", args);
      std::ifstream in(loss_batch);
      if (!in) throw Error("cannot open '" + loss_batch + "'");
      ordered_json report;
      report["objective"] = loss_objective;
      TriHardOptions trip{loss_margin, parse_metric(loss_metric), loss_normalize};
      const bool pk = loss_objective == "trihard" || loss_objective == "classification" ||
                      loss_objective == "combined-class";
      if (pk) {
        const auto file = io::read_pk_batch(in, loss_batch);
        if (loss_objective != "trihard" && !file.logits) {
          throw Error("objective '" + loss_objective + "' needs logits on every batch row");
        }
        if (loss_objective == "trihard") {
          report["value"] = trihard_loss(file.batch, trip);
        } else if (loss_objective == "classification") {
          report["value"] = classification_loss(*file.logits, *file.targets);
        } else {
          const auto b = combined_classification_objective(file.batch, *file.logits, *file.targets, trip);
          report["value"] = b.total;
          report["components"] = {{"classification", b.first}, {"trihard", b.second}};
        }
        report["p"] = file.batch.p;
        report["k"] = file.batch.k;
      } else {
        const auto batch = io::read_pair_batch(in, loss_batch);
        if (loss_objective == "contrastive") {
          report["value"] = contrastive_loss(batch, loss_contrastive_margin);
        } else if (loss_objective == "verification-ce") {
          report["value"] = verification_cross_entropy(batch);
        } else {
          const auto b = combined_verification_objective(batch, loss_contrastive_margin);
          report["value"] = b.total;
          report["components"] = {{"verification_ce", b.first}, {"contrastive", b.second}};
        }
        report["pairs"] = batch.size();
      }
      io::write_file_atomic(loss_out, report.dump(2) + "\n");
      run.config = {{"objective", loss_objective},
                    {"margin", loss_margin},
                    {"contrastive_margin", loss_contrastive_margin},
                    {"metric", loss_metric},
                    {"normalize", loss_normalize}};
      run.inputs["batch"] = loss_batch;
      run.outputs["report"] = loss_out;
      run.write(loss_out);
      out << loss_objective << " = " << std::setprecision(17) << report["value"].get<double>() << "\n";
      if (report.contains("components")) out << report["components"].dump() << "\n";
      return 0;
    }

    if (*replay_cmd) {
      const auto manifest = nlohmann::json::parse(io::read_file(replay_manifest));
      const auto replay_args = manifest.at("args").get<std::vector<std::string>>();
      if (!replay_args.empty() && replay_args.front() == "replay") throw Error("manifest records a replay");
      return run(replay_args, out, err);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace reid::cli
