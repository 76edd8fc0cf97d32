#ifndef WEAKHAR_PIPELINE_HPP
#define WEAKHAR_PIPELINE_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "weakhar/annotate.hpp"
#include "weakhar/error.hpp"
#include "weakhar/eval.hpp"
#include "weakhar/experiment.hpp"
#include "weakhar/gmm.hpp"
#include "weakhar/ingest.hpp"
#include "weakhar/io.hpp"
#include "weakhar/manifest.hpp"
#include "weakhar/parallel.hpp"
#include "weakhar/weaktrain.hpp"

// Eigen-based headers first: httplib pulls in <resolv.h>.
#include "weakhar/annoserve.hpp"

// Stages talk through files under the output directory:
//   cluster/seed-<s>/<pid>.wgmm, <pid>.clusters.csv
//   annotate/seed-<s>/<pid>.session.log, <pid>.weak.csv
//   train/metrics.csv, summary.txt, confusion_<scenario>.csv, scenarios.json
//   report/labelling.csv, sweep_clusters.csv, sweep_thresholds.csv, summary.txt
// Each stage directory ends with a manifest.json.
namespace weakhar {

namespace fs = std::filesystem;

struct RunConfig {
  fs::path base_dir;  // relative paths resolve against this (the config file's directory)

  // [data]
  fs::path data_root = "data";
  std::vector<std::string> participants{"auto"};
  std::vector<std::string> sources{"synth"};  // concatenated in order
  bool normalize = false;

  // [clips]
  WindowingSpec clips{4.0, 1.0};

  // [gmm]
  GmmOptions gmm{.components = 100};

  // [annotate]
  double threshold = kNoThreshold;
  int port = kDefaultPort;
  fs::path assets;

  // [run]
  fs::path output = "out";
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int jobs = 1;

  // [train]
  std::vector<std::string> scenarios{"fully-supervised", "few-shot-ce", "random-ce", "weak-ce", "weak-phgce"};
  WindowingSpec window{1.0, 0.5};
  TrainConfig train;

  // [loss]
  double q = 0.7;
  double tau = 10.0;
  double label_noise = 0.0;

  // [report]
  std::vector<int> sweep_clusters{10, 25, 50, 100};
  std::vector<double> sweep_thresholds{kNoThreshold, 6.0, 4.0};
  bool relative_thresholds = false;

  fs::path resolve(const fs::path& p) const { return p.is_absolute() || base_dir.empty() ? p : base_dir / p; }
  fs::path root() const { return resolve(data_root); }
  fs::path out() const { return resolve(output); }
};

namespace detail {

template <typename T, typename Parse>
std::vector<T> parse_list(std::string_view text, Parse parse) {
  std::vector<T> out;
  for (auto cell : io::split(text, ',')) {
    cell = io::trim(cell);
    if (!cell.empty()) out.push_back(parse(cell));
  }
  return out;
}

template <typename T, typename Format>
std::string join(const std::vector<T>& values, Format format) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + format(values[i]);
  return out;
}

inline bool parse_bool(std::string_view s, const std::string& key) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + std::string(s) + "'");
}

inline std::uint64_t parse_seed(std::string_view s) {
  const auto v = io::parse_int(s, "seed");
  if (v < 0) throw ConfigError("seeds must be non-negative");
  return static_cast<std::uint64_t>(v);
}

}  // namespace detail

inline std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  try {
    return detail::parse_list<std::uint64_t>(text, detail::parse_seed);
  } catch (const FormatError& e) {
    throw ConfigError(std::string("seed list: ") + e.what());
  }
}

// INI text with sections [data] [clips] [gmm] [annotate] [run] [train] [loss]
// [report]; missing keys keep their defaults, unknown keys are rejected.
inline RunConfig parse_config(const std::string& text, fs::path base_dir = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c;
  c.base_dir = std::move(base_dir);
  using Setter = std::function<void(std::string_view)>;
  auto d = [](std::string_view v, const char* what) { return io::parse_double(v, what); };
  auto i = [](std::string_view v, const char* what) { return static_cast<int>(io::parse_int(v, what)); };
  const std::map<std::string, Setter> keys{
      {"data.root", [&](auto v) { c.data_root = std::string(v); }},
      {"data.participants", [&](auto v) { c.participants = detail::parse_list<std::string>(v, [](auto s) { return std::string(s); }); }},
      {"data.sources", [&](auto v) { c.sources = detail::parse_list<std::string>(v, [](auto s) { return std::string(s); }); }},
      {"data.normalize", [&](auto v) { c.normalize = detail::parse_bool(v, "data.normalize"); }},
      {"clips.length_s", [&](auto v) { c.clips.length_s = d(v, "clips.length_s"); }},
      {"clips.stride_s", [&](auto v) { c.clips.stride_s = d(v, "clips.stride_s"); }},
      {"gmm.components", [&](auto v) { c.gmm.components = i(v, "gmm.components"); }},
      {"gmm.reg", [&](auto v) { c.gmm.reg = d(v, "gmm.reg"); }},
      {"gmm.max_iter", [&](auto v) { c.gmm.max_iter = i(v, "gmm.max_iter"); }},
      {"gmm.tol", [&](auto v) { c.gmm.tol = d(v, "gmm.tol"); }},
      {"annotate.threshold", [&](auto v) { c.threshold = parse_threshold(v); }},
      {"annotate.port", [&](auto v) { c.port = i(v, "annotate.port"); }},
      {"annotate.assets", [&](auto v) { c.assets = std::string(v); }},
      {"run.output", [&](auto v) { c.output = std::string(v); }},
      {"run.seeds", [&](auto v) { c.seeds = parse_seed_list(v); }},
      {"run.jobs", [&](auto v) { c.jobs = i(v, "run.jobs"); }},
      {"train.scenarios", [&](auto v) { c.scenarios = detail::parse_list<std::string>(v, [](auto s) { return std::string(s); }); }},
      {"train.window_s", [&](auto v) { c.window.length_s = d(v, "train.window_s"); }},
      {"train.window_stride_s", [&](auto v) { c.window.stride_s = d(v, "train.window_stride_s"); }},
      {"train.epochs", [&](auto v) { c.train.epochs = i(v, "train.epochs"); }},
      {"train.batch_size", [&](auto v) { c.train.batch_size = i(v, "train.batch_size"); }},
      {"train.hidden_units", [&](auto v) { c.train.hidden_units = i(v, "train.hidden_units"); }},
      {"train.learning_rate", [&](auto v) { c.train.learning_rate = d(v, "train.learning_rate"); }},
      {"train.weight_decay", [&](auto v) { c.train.weight_decay = d(v, "train.weight_decay"); }},
      {"train.lr_decay", [&](auto v) { c.train.lr_decay = d(v, "train.lr_decay"); }},
      {"train.lr_step", [&](auto v) { c.train.lr_step = i(v, "train.lr_step"); }},
      {"loss.q", [&](auto v) { c.q = d(v, "loss.q"); }},
      {"loss.tau", [&](auto v) { c.tau = d(v, "loss.tau"); }},
      {"loss.label_noise", [&](auto v) { c.label_noise = d(v, "loss.label_noise"); }},
      {"report.clusters", [&](auto v) { c.sweep_clusters = detail::parse_list<int>(v, [&](auto s) { return i(s, "report.clusters"); }); }},
      {"report.thresholds", [&](auto v) { c.sweep_thresholds = detail::parse_list<double>(v, parse_threshold); }},
      {"report.relative_thresholds", [&](auto v) { c.relative_thresholds = detail::parse_bool(v, "report.relative_thresholds"); }},
  };
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      const auto full = section + "." + key;
      auto it = keys.find(full);
      if (it == keys.end()) throw ConfigError("config: unknown key [" + section + "] " + key);
      try {
        it->second(io::trim(value.data()));
      } catch (const FormatError& e) {
        throw ConfigError("config: " + full + ": " + e.what());
      }
    }
  }
  return c;
}

inline RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  return parse_config(io::read_file(path), fs::absolute(path).parent_path());
}

inline std::string print_config(const RunConfig& c) {
  auto num = [](double v) { return threshold_name(v); };
  auto str = [](const std::string& s) { return s; };
  auto seed = [](std::uint64_t s) { return std::to_string(s); };
  auto integer = [](int v) { return std::to_string(v); };
  std::ostringstream o;
  o << "[data]\nroot = " << c.data_root.generic_string() << "\nparticipants = " << detail::join(c.participants, str)
    << "\nsources = " << detail::join(c.sources, str) << "\nnormalize = " << (c.normalize ? "true" : "false") << "\n\n";
  o << "[clips]\nlength_s = " << num(c.clips.length_s) << "\nstride_s = " << num(c.clips.stride_s) << "\n\n";
  o << "[gmm]\ncomponents = " << c.gmm.components << "\nreg = " << num(c.gmm.reg) << "\nmax_iter = " << c.gmm.max_iter
    << "\ntol = " << num(c.gmm.tol) << "\n\n";
  o << "[annotate]\nthreshold = " << num(c.threshold) << "\nport = " << c.port << "\nassets = " << c.assets.generic_string()
    << "\n\n";
  o << "[run]\noutput = " << c.output.generic_string() << "\nseeds = " << detail::join(c.seeds, seed)
    << "\njobs = " << c.jobs << "\n\n";
  o << "[train]\nscenarios = " << detail::join(c.scenarios, str) << "\nwindow_s = " << num(c.window.length_s)
    << "\nwindow_stride_s = " << num(c.window.stride_s) << "\nepochs = " << c.train.epochs
    << "\nbatch_size = " << c.train.batch_size << "\nhidden_units = " << c.train.hidden_units
    << "\nlearning_rate = " << num(c.train.learning_rate) << "\nweight_decay = " << num(c.train.weight_decay)
    << "\nlr_decay = " << num(c.train.lr_decay) << "\nlr_step = " << c.train.lr_step << "\n\n";
  o << "[loss]\nq = " << num(c.q) << "\ntau = " << num(c.tau) << "\nlabel_noise = " << num(c.label_noise) << "\n\n";
  o << "[report]\nclusters = " << detail::join(c.sweep_clusters, integer)
    << "\nthresholds = " << detail::join(c.sweep_thresholds, num)
    << "\nrelative_thresholds = " << (c.relative_thresholds ? "true" : "false") << "\n";
  return o.str();
}

// Jobs and the output location never change artifact contents, so they are
// left out of the hash.
inline std::string config_hash(const RunConfig& c) {
  RunConfig copy = c;
  copy.jobs = 1;
  copy.output = "out";
  return sha256_hex(print_config(copy));
}

inline std::vector<ScenarioSpec> scenario_specs(const RunConfig& c) {
  std::vector<ScenarioSpec> out;
  std::set<std::string> seen;
  for (const auto& name : c.scenarios) {
    auto s = parse_scenario(name);
    if (s.kind == ScenarioKind::kWeak && std::isinf(s.threshold) && !std::isinf(c.threshold)) s.threshold = c.threshold;
    if (!seen.insert(s.name + "@" + threshold_name(s.threshold)).second) throw ConfigError("duplicate scenario '" + name + "'");
    out.push_back(std::move(s));
  }
  return out;
}

inline void validate(const RunConfig& c) {
  if (c.participants.empty()) throw ConfigError("participant list is empty");
  if (c.seeds.empty()) throw ConfigError("seed list is empty");
  if (c.sources.empty()) throw ConfigError("no embedding sources configured");
  if (c.gmm.components < 1) throw ConfigError("gmm.components must be at least 1");
  if (c.gmm.max_iter < 1 || !(c.gmm.tol > 0.0) || !(c.gmm.reg >= 0.0)) throw ConfigError("invalid GMM settings");
  if (c.jobs < 1) throw ConfigError("run.jobs must be at least 1");
  if (c.port < 0 || c.port > 65535) throw ConfigError("annotate.port out of range");
  if (c.label_noise < 0.0 || c.label_noise >= 1.0) throw ConfigError("loss.label_noise must lie in [0, 1)");
  if (c.sweep_clusters.empty() || !std::is_sorted(c.sweep_clusters.begin(), c.sweep_clusters.end()) ||
      c.sweep_clusters.front() < 1)
    throw ConfigError("report.clusters must be positive and ascending");
  if (c.sweep_thresholds.empty()) throw ConfigError("report.thresholds is empty");
  c.clips.validate();
  c.window.validate();
  c.train.validate();
  LossSpec loss;
  loss.q = c.q;
  loss.tau = c.tau;
  loss.validate();
  scenario_specs(c);
}

// ---------------------------------------------------------------------------
// Data access
// ---------------------------------------------------------------------------

using Logger = std::function<void(const std::string&)>;

inline Logger stderr_logger() {
  return [](const std::string& line) { std::clog << line << '\n'; };
}

inline std::vector<std::string> resolve_participants(const RunConfig& c) {
  if (c.participants.empty()) throw ConfigError("participant list is empty");
  if (c.participants.size() == 1 && c.participants[0] == "auto") {
    const auto dir = c.root() / "embeddings";
    if (!fs::is_directory(dir)) throw ConfigError("participants = auto but " + dir.string() + " does not exist");
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_directory()) out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw ConfigError("participant list is empty: no directories under " + dir.string());
    return out;
  }
  return c.participants;
}

inline EmbeddingSet load_participant_embeddings(const RunConfig& c, const std::string& pid) {
  try {
    std::optional<EmbeddingSet> combined;
    for (const auto& tag : c.sources) {
      const auto base = c.root() / "embeddings" / pid / tag;
      fs::path file = base;
      file += ".wemb";
      if (!fs::exists(file)) {
        file = base;
        file += ".csv";
      }
      if (!fs::exists(file)) throw DataError("missing embedding file " + base.string() + ".{wemb,csv}");
      auto set = load_embeddings(file, {.participant_id = pid, .source_tag = tag, .default_clips = c.clips});
      validate(set, c.clips.length_s);
      combined = combined ? concat_embeddings(*combined, set) : std::move(set);
    }
    if (c.normalize) l2_normalize_rows(*combined);
    return std::move(*combined);
  } catch (const Error&) {
    rethrow_with_context("participant " + pid);
  }
}

inline std::vector<std::string> load_vocabulary(const RunConfig& c) {
  const auto path = c.root() / "labels" / "names.txt";
  if (!fs::exists(path)) throw DataError("missing label vocabulary " + path.string());
  return load_label_names(path);
}

inline LabelTrack load_ground_truth(const RunConfig& c, const std::string& pid) {
  const auto path = c.root() / "labels" / (pid + ".csv");
  if (!fs::exists(path)) throw DataError("participant " + pid + ": missing ground truth " + path.string());
  try {
    auto track = load_label_track(path, c.root() / "labels" / "names.txt", pid);
    validate(track);
    return track;
  } catch (const Error&) {
    rethrow_with_context("participant " + pid);
  }
}

inline fs::path stage_dir(const RunConfig& c, const std::string& stage) { return c.out() / stage; }
inline fs::path seed_dir(const RunConfig& c, const std::string& stage, std::uint64_t seed) {
  return stage_dir(c, stage) / ("seed-" + std::to_string(seed));
}

inline void finish_stage(const RunConfig& c, const std::string& stage) {
  write_manifest(stage_dir(c, stage), scan_stage(stage_dir(c, stage), stage, config_hash(c), c.seeds));
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline void cmd_cluster(const RunConfig& c, const Logger& log = {}) {
  validate(c);
  const auto pids = resolve_participants(c);
  const auto dir = stage_dir(c, "cluster");
  fs::remove_all(dir);
  std::vector<EmbeddingSet> embeddings(pids.size());
  run_jobs(pids.size(), c.jobs, [&](std::size_t i) { embeddings[i] = load_participant_embeddings(c, pids[i]); });
  std::mutex log_mu;
  run_jobs(pids.size() * c.seeds.size(), c.jobs, [&](std::size_t job) {
    const auto& emb = embeddings[job % pids.size()];
    const auto seed = c.seeds[job / pids.size()];
    try {
      if (c.gmm.components > emb.size())
        throw ConfigError("C=" + std::to_string(c.gmm.components) + " exceeds its " + std::to_string(emb.size()) + " clips");
      GmmOptions g = c.gmm;
      g.seed = seed;
      const auto model = fit_gmm(emb.clips, g);
      const auto assignment = assign_clusters(model, emb.clips);
      const auto out = seed_dir(c, "cluster", seed);
      save_gmm(out / (emb.participant_id + ".wgmm"), model);
      std::string csv = "clip,cluster_id,log_density\n";
      for (Index t = 0; t < assignment.size(); ++t) {
        const int k = assignment.cluster_ids[static_cast<std::size_t>(t)];
        csv += std::to_string(t) + ',' + std::to_string(k) + ',' + io::format_double(assignment.log_densities(t, k)) + '\n';
      }
      io::write_file(out / (emb.participant_id + ".clusters.csv"), csv);
      if (log) {
        std::lock_guard lock(log_mu);
        log("cluster: " + emb.participant_id + " seed " + std::to_string(seed) + ": " +
            std::to_string(model.log_likelihood_history.size()) + " EM iterations" + (model.converged ? "" : " (not converged)") +
            ", " + std::to_string(find_centroids(assignment).centroids.size()) + " non-empty clusters");
      }
    } catch (const Error&) {
      rethrow_with_context("participant " + emb.participant_id + ", seed " + std::to_string(seed));
    }
  });
  finish_stage(c, "cluster");
}

enum class AnnotateMode { kOracle, kServe };

inline AnnotateMode parse_annotate_mode(std::string_view s) {
  if (s == "oracle") return AnnotateMode::kOracle;
  if (s == "serve") return AnnotateMode::kServe;
  throw ConfigError("annotate mode must be 'oracle' or 'serve', got '" + std::string(s) + "'");
}

struct ClusteredParticipant {
  EmbeddingSet embeddings;
  ClusterAssignment assignment;
  CentroidSet centroids;
};

inline ClusteredParticipant load_clustering(const RunConfig& c, const std::string& pid, std::uint64_t seed) {
  try {
    const auto path = seed_dir(c, "cluster", seed) / (pid + ".wgmm");
    if (!fs::exists(path)) throw StateError("missing stage 'cluster' artifact " + path.string());
    ClusteredParticipant p;
    p.embeddings = load_participant_embeddings(c, pid);
    p.assignment = assign_clusters(load_gmm(path), p.embeddings.clips);
    p.centroids = find_centroids(p.assignment);
    return p;
  } catch (const Error&) {
    rethrow_with_context("seed " + std::to_string(seed));
  }
}

inline std::function<std::optional<std::string>(const std::string&, Index)> asset_lookup(const fs::path& assets) {
  if (assets.empty()) return {};
  return [assets](const std::string& pid, Index clip) -> std::optional<std::string> {
    for (const char* ext : {".mp4", ".webm", ".gif", ".jpg", ".png"}) {
      const auto rel = pid + "/" + std::to_string(clip) + ext;
      if (fs::exists(assets / rel)) return rel;
    }
    return std::nullopt;
  };
}

// Oracle mode answers every request with the centroid clip's ground truth and
// a zero clock, so its logs are reproducible. Serve mode hands each session to
// the HTTP server and waits for a human; rerunning resumes from the logs.
inline void cmd_annotate(const RunConfig& c, AnnotateMode mode, const Logger& log = {}) {
  validate(c);
  read_manifest(stage_dir(c, "cluster"), "cluster");
  const auto pids = resolve_participants(c);
  const auto vocabulary = load_vocabulary(c);
  const auto dir = stage_dir(c, "annotate");
  if (mode == AnnotateMode::kOracle) fs::remove_all(dir);
  fs::remove(dir / kManifestFile);
  const fs::path assets = c.assets.empty() ? fs::path{} : c.resolve(c.assets);

  auto finish = [&](const ClusteredParticipant& p, const AnnotationSession& session, std::uint64_t seed) {
    auto weak = propagate(p.assignment, session.labels(), p.embeddings, p.centroids, c.threshold);
    io::write_file(seed_dir(c, "annotate", seed) / (p.embeddings.participant_id + ".weak.csv"), encode_weak_labels(weak));
    return weak;
  };
  auto make_session = [&](const ClusteredParticipant& p, std::uint64_t seed, SessionClock clock) {
    SessionOptions o;
    o.session_id = p.embeddings.participant_id + "-s" + std::to_string(seed);
    o.clock = std::move(clock);
    o.media_hint = asset_lookup(assets);
    return std::make_shared<AnnotationSession>(p.embeddings.participant_id, p.centroids, p.embeddings.spans, vocabulary,
                                               seed_dir(c, "annotate", seed) / (p.embeddings.participant_id + ".session.log"),
                                               o);
  };

  if (mode == AnnotateMode::kOracle) {
    std::mutex log_mu;
    run_jobs(pids.size() * c.seeds.size(), c.jobs, [&](std::size_t job) {
      const auto& pid = pids[job % pids.size()];
      const auto seed = c.seeds[job / pids.size()];
      const auto track = load_ground_truth(c, pid);
      const auto p = load_clustering(c, pid, seed);
      try {
        const auto gt = clip_ground_truth(track, p.embeddings.spans);
        auto session = make_session(p, seed, [] { return std::int64_t{0}; });
        for (const auto& req : session->enqueue_requests()) {
          const int label = gt[static_cast<std::size_t>(req.clip_index)];
          if (label >= static_cast<int>(vocabulary.size()))
            throw DataError("ground-truth label " + std::to_string(label) + " is not in the vocabulary");
          session->submit(req.request_id, label);
        }
        const auto weak = finish(p, *session, seed);
        if (log) {
          std::lock_guard lock(log_mu);
          log("annotate: " + pid + " seed " + std::to_string(seed) + ": budget " + std::to_string(weak.annotation_budget) +
              ", retained " + std::to_string(weak.retained_count()) + "/" + std::to_string(weak.size()));
        }
      } catch (const Error&) {
        rethrow_with_context("participant " + pid + ", seed " + std::to_string(seed));
      }
    });
  } else {
    AnnotationServer server({.port = c.port, .assets_dir = assets});
    const int port = server.start();
    if (log) log("annotate: serving on http://127.0.0.1:" + std::to_string(port));
    for (const auto seed : c.seeds)
      for (const auto& pid : pids) {
        const auto p = load_clustering(c, pid, seed);
        auto session = make_session(p, seed, wall_clock_ms);
        if (log) {
          const auto s = session->state();
          log("annotate: session " + s.session_id + ": " + std::to_string(s.labeled) + "/" +
              std::to_string(s.total_clusters) + " labelled");
        }
        server.set_session(session);
        server.wait_until_complete();
        session->close();
        server.set_session(nullptr);
        finish(p, *session, seed);
      }
    server.stop();
  }
  finish_stage(c, "annotate");
}

inline WeakLabelSet load_weak_labels(const RunConfig& c, const std::string& pid, std::uint64_t seed) {
  const auto path = seed_dir(c, "annotate", seed) / (pid + ".weak.csv");
  if (!fs::exists(path)) throw StateError("missing stage 'annotate' artifact " + path.string());
  return decode_weak_labels(io::read_file(path), pid, c.threshold);
}

inline std::string safe_file_name(std::string s) {
  for (auto& ch : s)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_' && ch != '.') ch = '_';
  return s;
}

inline void cmd_train(const RunConfig& c, const Logger& log = {}) {
  validate(c);
  read_manifest(stage_dir(c, "annotate"), "annotate");
  const auto pids = resolve_participants(c);
  const auto vocabulary = load_vocabulary(c);
  const int A = static_cast<int>(vocabulary.size());
  const auto specs = scenario_specs(c);
  const auto dir = stage_dir(c, "train");
  fs::remove_all(dir);

  ExperimentOptions opts;
  opts.window = c.window;
  opts.train = c.train;
  opts.q = c.q;
  opts.tau = c.tau;
  opts.label_noise = c.label_noise;
  opts.clusters = static_cast<int>(c.gmm.components);
  opts.jobs = c.jobs;

  std::vector<ScenarioRow> rows;
  nlohmann::json composition = nlohmann::json::array();
  for (const auto seed : c.seeds) {
    std::vector<ParticipantData> data(pids.size());
    run_jobs(pids.size(), c.jobs, [&](std::size_t i) {
      const auto& pid = pids[i];
      const auto track = load_ground_truth(c, pid);
      auto weak = load_weak_labels(c, pid, seed);
      try {
        const auto sensor_path = c.root() / "sensors" / (pid + ".csv");
        if (!fs::exists(sensor_path)) throw DataError("missing sensor file " + sensor_path.string());
        auto series = load_sensor_csv(sensor_path, pid);
        validate(series);
        data[i] = prepare_participant(std::move(series), track, std::move(weak), c.window, A);
      } catch (const Error&) {
        rethrow_with_context("participant " + pid);
      }
    });
    auto seed_rows = run_scenarios(data, specs, {seed}, opts);
    if (log) log("train: seed " + std::to_string(seed) + ": " + std::to_string(seed_rows.size()) + " held-out evaluations");
    rows.insert(rows.end(), seed_rows.begin(), seed_rows.end());

    std::map<std::tuple<std::size_t, double>, LabeledWindowSet> weak;
    for (const auto& s : specs)
      for (std::size_t i = 0; i < data.size(); ++i)
        if (!weak.contains({i, s.threshold})) weak[{i, s.threshold}] = weak_windows(data[i], s.threshold, c.window);
    for (const auto& s : specs) {
      auto j = scenario_manifest(s.name, s.threshold, scenario_training_set(data, weak, s, data.size(), seed, c.label_noise));
      j["seed"] = seed;
      composition.push_back(j);
    }
  }
  io::write_file(dir / "metrics.csv", metrics_csv(rows));
  const auto summary = summarize_scenarios(rows);
  io::write_file(dir / "summary.txt", scenario_table(summary));
  for (const auto& s : summary)
    io::write_file(dir / ("confusion_" + safe_file_name(s.scenario) + ".csv"), confusion_csv(s.confusion, vocabulary));
  io::write_file(dir / "scenarios.json", composition.dump(2) + "\n");
  finish_stage(c, "train");
}

inline void cmd_report(const RunConfig& c, const Logger& log = {}) {
  validate(c);
  read_manifest(stage_dir(c, "cluster"), "cluster");
  read_manifest(stage_dir(c, "annotate"), "annotate");
  const auto pids = resolve_participants(c);
  const auto dir = stage_dir(c, "report");
  fs::remove_all(dir);

  std::vector<ParticipantClips> clips(pids.size());
  run_jobs(pids.size(), c.jobs, [&](std::size_t i) {
    clips[i].embeddings = load_participant_embeddings(c, pids[i]);
    clips[i].clip_gt = clip_ground_truth(load_ground_truth(c, pids[i]), clips[i].embeddings.spans);
  });

  std::vector<SweepRow> labelling;
  for (const auto seed : c.seeds)
    for (std::size_t i = 0; i < pids.size(); ++i) {
      const auto weak = load_weak_labels(c, pids[i], seed);
      try {
        const auto acc = labelling_accuracy(weak, clip_ground_truth(load_ground_truth(c, pids[i]), weak.spans));
        labelling.push_back({static_cast<double>(c.gmm.components), seed, pids[i], acc.accuracy, acc.coverage, acc.budget,
                             acc.total, c.threshold});
      } catch (const Error&) {
        rethrow_with_context("participant " + pids[i] + ", seed " + std::to_string(seed));
      }
    }
  io::write_file(dir / "labelling.csv", sweep_csv(labelling, "C"));
  if (log) log("report: cluster sweep over " + std::to_string(c.sweep_clusters.size()) + " values");
  SweepOptions sweep;
  sweep.gmm = c.gmm;
  sweep.threshold = c.threshold;
  sweep.jobs = c.jobs;
  const auto by_c = sweep_clusters(clips, c.sweep_clusters, c.seeds, sweep);
  io::write_file(dir / "sweep_clusters.csv", sweep_csv(by_c, "C"));
  if (log) log("report: threshold sweep over " + std::to_string(c.sweep_thresholds.size()) + " values");
  sweep.relative = c.relative_thresholds;
  const auto by_t = sweep_thresholds(clips, c.sweep_thresholds, c.seeds, sweep);
  io::write_file(dir / "sweep_thresholds.csv", sweep_csv(by_t, "threshold"));

  std::string text = "labelling (C=" + std::to_string(c.gmm.components) + ", threshold " + threshold_name(c.threshold) +
                     ")\n" + summary_table(summarize(labelling), "C") + "\ncluster sweep\n" +
                     summary_table(summarize(by_c), "C") + "\nthreshold sweep (C=" + std::to_string(c.gmm.components) +
                     (c.relative_thresholds ? ", multiples of the median centroid distance" : "") + ")\n" +
                     summary_table(summarize(by_t), "threshold");
  const auto train_summary = stage_dir(c, "train") / "summary.txt";
  if (fs::exists(stage_dir(c, "train") / kManifestFile) && fs::exists(train_summary))
    text += "\ntraining (held-out participant)\n" + io::read_file(train_summary);
  io::write_file(dir / "summary.txt", text);
  finish_stage(c, "report");
}

}  // namespace weakhar

#endif  // WEAKHAR_PIPELINE_HPP
