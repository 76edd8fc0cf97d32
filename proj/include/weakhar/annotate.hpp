#ifndef WEAKHAR_ANNOTATE_HPP
#define WEAKHAR_ANNOTATE_HPP

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "weakhar/error.hpp"
#include "weakhar/gmm.hpp"
#include "weakhar/ingest.hpp"
#include "weakhar/io.hpp"

namespace weakhar {

inline constexpr double kNoThreshold = std::numeric_limits<double>::infinity();

// "T-4" / "T-6" presets, "inf"/"none", or a plain number.
inline double parse_threshold(std::string_view text) {
  auto t = io::trim(text);
  if (t.empty() || t == "inf" || t == "none" || t == "+inf") return kNoThreshold;
  if (t.size() > 2 && (t[0] == 'T' || t[0] == 't') && t[1] == '-') t.remove_prefix(2);
  double v = io::parse_double(t, "threshold");
  if (!(v >= 0.0)) throw ConfigError("threshold must be non-negative");
  return v;
}

inline std::string threshold_name(double threshold) {
  return std::isinf(threshold) ? std::string("inf") : io::format_double(threshold);
}

struct Centroid {
  int cluster_id = 0;
  Index clip_index = 0;
  double log_density = 0.0;
};

// Centroid clips of the non-empty clusters, ordered by cluster id.
struct CentroidSet {
  Index components = 0;
  std::vector<Centroid> centroids;
  std::vector<Index> member_counts;  // per component, including empty ones

  const Centroid* find(int cluster_id) const {
    for (const auto& c : centroids)
      if (c.cluster_id == cluster_id) return &c;
    return nullptr;
  }
  std::vector<int> empty_clusters() const {
    std::vector<int> out;
    for (Index c = 0; c < components; ++c)
      if (member_counts[static_cast<std::size_t>(c)] == 0) out.push_back(static_cast<int>(c));
    return out;
  }
};

using ClusterLabels = std::map<int, int>;

// Member clip with the highest component log-density; ties to the smaller clip index.
inline CentroidSet find_centroids(const ClusterAssignment& assignment) {
  CentroidSet out;
  out.components = assignment.components();
  out.member_counts.assign(static_cast<std::size_t>(out.components), 0);
  std::vector<std::optional<Centroid>> best(static_cast<std::size_t>(out.components));
  for (Index t = 0; t < assignment.size(); ++t) {
    const int c = assignment.cluster_ids[static_cast<std::size_t>(t)];
    if (c < 0 || c >= out.components) throw ShapeError("cluster id " + std::to_string(c) + " out of range");
    ++out.member_counts[static_cast<std::size_t>(c)];
    const double density = assignment.log_densities(t, c);
    auto& slot = best[static_cast<std::size_t>(c)];
    if (!slot || density > slot->log_density) slot = Centroid{c, t, density};
  }
  for (auto& b : best)
    if (b) out.centroids.push_back(*b);
  return out;
}

struct OracleAnnotation {
  ClusterLabels labels;
  int budget = 0;
};

// Stands in for the human: each centroid is labelled with its ground-truth clip label.
inline OracleAnnotation annotate_oracle(const CentroidSet& centroids, const std::vector<int>& clip_gt) {
  OracleAnnotation out;
  for (const auto& c : centroids.centroids) {
    if (c.clip_index < 0 || static_cast<std::size_t>(c.clip_index) >= clip_gt.size())
      throw DataError("no ground truth for centroid clip " + std::to_string(c.clip_index) + " of cluster " +
                      std::to_string(c.cluster_id));
    out.labels[c.cluster_id] = clip_gt[static_cast<std::size_t>(c.clip_index)];
    ++out.budget;
  }
  return out;
}

struct WeakLabel {
  int cluster_id = 0;
  int label_id = 0;
  double distance = 0.0;  // L2 to the cluster's centroid clip
  bool retained = true;
  bool is_centroid = false;
};

struct WeakLabelSet {
  std::string participant_id;
  std::vector<WeakLabel> clips;
  std::vector<ClipSpan> spans;
  int annotation_budget = 0;
  double threshold = kNoThreshold;

  Index size() const { return static_cast<Index>(clips.size()); }
  Index retained_count() const {
    Index n = 0;
    for (const auto& c : clips) n += c.retained ? 1 : 0;
    return n;
  }
};

inline void apply_threshold(WeakLabelSet& weak, double threshold) {
  if (std::isnan(threshold) || threshold < 0.0) throw ConfigError("threshold must be non-negative");
  weak.threshold = threshold;
  for (auto& c : weak.clips) c.retained = c.distance <= threshold;
}

// Copies each centroid's label to every clip of its cluster and measures the
// distance to that centroid clip in the clustering embedding space.
inline WeakLabelSet propagate(const ClusterAssignment& assignment, const ClusterLabels& labels,
                              const EmbeddingSet& embeddings, const CentroidSet& centroids,
                              double threshold = kNoThreshold) {
  if (assignment.size() != embeddings.size())
    throw ShapeError("assignment covers " + std::to_string(assignment.size()) + " clips, embeddings " +
                     std::to_string(embeddings.size()));
  WeakLabelSet out;
  out.participant_id = embeddings.participant_id;
  out.spans = embeddings.spans;
  out.clips.resize(static_cast<std::size_t>(assignment.size()));
  std::vector<const Centroid*> by_cluster(static_cast<std::size_t>(centroids.components), nullptr);
  for (const auto& c : centroids.centroids) {
    if (!labels.contains(c.cluster_id))
      throw StateError("cluster " + std::to_string(c.cluster_id) + " has no annotated label");
    by_cluster[static_cast<std::size_t>(c.cluster_id)] = &c;
  }
  for (Index t = 0; t < assignment.size(); ++t) {
    const int cluster = assignment.cluster_ids[static_cast<std::size_t>(t)];
    const Centroid* c = cluster >= 0 && cluster < centroids.components ? by_cluster[static_cast<std::size_t>(cluster)]
                                                                       : nullptr;
    if (!c) throw StateError("clip " + std::to_string(t) + " belongs to cluster " + std::to_string(cluster) +
                             " which has no centroid");
    auto& w = out.clips[static_cast<std::size_t>(t)];
    w.cluster_id = cluster;
    w.label_id = labels.at(cluster);
    w.is_centroid = c->clip_index == t;
    w.distance = w.is_centroid ? 0.0 : (embeddings.clips.row(t) - embeddings.clips.row(c->clip_index)).norm();
  }
  for (const auto& [cluster, label] : labels)
    if (cluster >= 0 && cluster < centroids.components && by_cluster[static_cast<std::size_t>(cluster)]) ++out.annotation_budget;
  apply_threshold(out, threshold);
  return out;
}

// clip,start_s,end_s,cluster_id,label_id,distance,retained,is_centroid
inline std::string encode_weak_labels(const WeakLabelSet& weak) {
  std::string out = "clip,start_s,end_s,cluster_id,label_id,distance,retained,is_centroid\n";
  for (std::size_t i = 0; i < weak.clips.size(); ++i) {
    const auto& c = weak.clips[i];
    const auto& s = weak.spans[i];
    out += std::to_string(i) + ',' + io::format_double(s.start_s) + ',' + io::format_double(s.end_s) + ',' +
           std::to_string(c.cluster_id) + ',' + std::to_string(c.label_id) + ',' + io::format_double(c.distance) + ',' +
           (c.retained ? "1" : "0") + ',' + (c.is_centroid ? "1" : "0") + '\n';
  }
  return out;
}

inline WeakLabelSet decode_weak_labels(std::string_view text, std::string participant_id, double threshold) {
  auto rows = io::lines(text);
  if (rows.empty() || rows[0] != "clip,start_s,end_s,cluster_id,label_id,distance,retained,is_centroid")
    throw FormatError("unexpected weak-label header");
  WeakLabelSet weak;
  weak.participant_id = std::move(participant_id);
  weak.threshold = threshold;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    auto cells = io::split(rows[i], ',');
    if (cells.size() != 8) throw FormatError("weak-label row " + std::to_string(i) + " has " + std::to_string(cells.size()) + " cells");
    weak.spans.push_back({io::parse_double(cells[1], "start_s"), io::parse_double(cells[2], "end_s")});
    WeakLabel w;
    w.cluster_id = static_cast<int>(io::parse_int(cells[3], "cluster_id"));
    w.label_id = static_cast<int>(io::parse_int(cells[4], "label_id"));
    w.distance = io::parse_double(cells[5], "distance");
    w.retained = cells[6] == "1";
    w.is_centroid = cells[7] == "1";
    weak.annotation_budget += w.is_centroid ? 1 : 0;
    weak.clips.push_back(w);
  }
  return weak;
}

// ---------------------------------------------------------------------------
// Interactive annotation session
// ---------------------------------------------------------------------------

struct AnnotatorRequest {
  std::string request_id;
  std::string participant_id;
  Index clip_index = 0;
  ClipSpan span;
  int cluster_id = 0;
  std::optional<std::string> media_hint;
};

struct SessionRecord {
  std::string request_id;
  int cluster_id = 0;
  Index clip_index = 0;
  int label_id = 0;
  std::int64_t timestamp_ms = 0;
};

struct SessionState {
  std::string session_id;
  std::string participant_id;
  Index total_clusters = 0;  // non-empty clusters
  Index labeled = 0;
  std::vector<AnnotatorRequest> pending;
  std::vector<std::string> vocabulary;
};

enum class SubmitStatus { kAccepted, kDuplicate, kUnknownLabel, kUnknownRequest };

using SessionClock = std::function<std::int64_t()>;

inline std::int64_t wall_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

struct SessionOptions {
  std::string session_id;
  std::function<std::optional<std::string>(const std::string& participant, Index clip)> media_hint;
  SessionClock clock = wall_clock_ms;
};

// Single-writer annotation state backed by an append-only log
// (request_id \t cluster_id \t clip_index \t label_id \t timestamp_ms).
// Reopening the same log replays it, so a killed session resumes where it
// stopped and never re-asks an answered cluster.
class AnnotationSession {
 public:
  AnnotationSession(std::string participant_id, CentroidSet centroids, std::vector<ClipSpan> spans,
                    std::vector<std::string> vocabulary, std::filesystem::path log_path, SessionOptions opts = {})
      : participant_id_(std::move(participant_id)),
        centroids_(std::move(centroids)),
        spans_(std::move(spans)),
        vocabulary_(std::move(vocabulary)),
        log_path_(std::move(log_path)),
        opts_(std::move(opts)) {
    if (opts_.session_id.empty()) opts_.session_id = participant_id_;
    if (!opts_.clock) opts_.clock = wall_clock_ms;
    for (const auto& c : centroids_.centroids)
      if (c.clip_index < 0 || static_cast<std::size_t>(c.clip_index) >= spans_.size())
        throw ShapeError("centroid clip " + std::to_string(c.clip_index) + " has no span");
    replay();
  }

  AnnotationSession(const AnnotationSession&) = delete;
  AnnotationSession& operator=(const AnnotationSession&) = delete;

  const std::string& participant_id() const { return participant_id_; }
  const std::string& session_id() const { return opts_.session_id; }
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }
  const CentroidSet& centroids() const { return centroids_; }
  const ClipSpan& span(Index clip) const { return spans_.at(static_cast<std::size_t>(clip)); }

  std::string request_id(int cluster_id) const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d", cluster_id);
    return opts_.session_id + "-c" + buf;
  }

  // One request per unlabelled non-empty cluster, by cluster id. Idempotent.
  std::vector<AnnotatorRequest> enqueue_requests() const {
    std::lock_guard lock(mu_);
    require_open();
    return pending_locked();
  }

  std::optional<AnnotatorRequest> next_request() const {
    std::lock_guard lock(mu_);
    require_open();
    for (const auto& c : centroids_.centroids)
      if (!labels_.contains(c.cluster_id)) return make_request(c);
    return std::nullopt;
  }

  SubmitStatus submit(std::string_view request_id, int label_id) {
    std::lock_guard lock(mu_);
    require_open();
    const Centroid* target = nullptr;
    for (const auto& c : centroids_.centroids)
      if (this->request_id(c.cluster_id) == request_id) target = &c;
    if (!target) return SubmitStatus::kUnknownRequest;
    if (labels_.contains(target->cluster_id)) return SubmitStatus::kDuplicate;
    if (label_id < 0 || label_id >= static_cast<int>(vocabulary_.size())) return SubmitStatus::kUnknownLabel;
    SessionRecord rec{std::string(request_id), target->cluster_id, target->clip_index, label_id, opts_.clock()};
    append(rec);
    labels_[rec.cluster_id] = rec.label_id;
    records_.push_back(std::move(rec));
    return SubmitStatus::kAccepted;
  }

  SessionState state() const {
    std::lock_guard lock(mu_);
    require_open();
    SessionState s;
    s.session_id = opts_.session_id;
    s.participant_id = participant_id_;
    s.total_clusters = static_cast<Index>(centroids_.centroids.size());
    s.labeled = static_cast<Index>(labels_.size());
    s.pending = pending_locked();
    s.vocabulary = vocabulary_;
    return s;
  }

  bool complete() const {
    std::lock_guard lock(mu_);
    return labels_.size() == centroids_.centroids.size();
  }

  ClusterLabels labels() const {
    std::lock_guard lock(mu_);
    return labels_;
  }

  std::vector<SessionRecord> records() const {
    std::lock_guard lock(mu_);
    return records_;
  }

  void close() {
    std::lock_guard lock(mu_);
    open_ = false;
  }
  bool is_open() const {
    std::lock_guard lock(mu_);
    return open_;
  }

  static std::vector<SessionRecord> read_log(const std::filesystem::path& path) {
    std::vector<SessionRecord> out;
    if (!std::filesystem::exists(path)) return out;
    auto text = io::read_file(path);
    // A crash can leave a partial last line; it is discarded.
    auto complete_len = text.rfind('\n');
    text.resize(complete_len == std::string::npos ? 0 : complete_len + 1);
    for (auto line : io::lines(text)) {
      auto cells = io::split(line, '\t');
      if (cells.size() != 5) throw FormatError("malformed session log line in " + path.string());
      out.push_back({std::string(cells[0]), static_cast<int>(io::parse_int(cells[1], "cluster_id")),
                     static_cast<Index>(io::parse_int(cells[2], "clip_index")),
                     static_cast<int>(io::parse_int(cells[3], "label_id")), io::parse_int(cells[4], "timestamp")});
    }
    return out;
  }

 private:
  void require_open() const {
    if (!open_) throw StateError("annotation session '" + opts_.session_id + "' is closed");
  }

  AnnotatorRequest make_request(const Centroid& c) const {
    AnnotatorRequest r;
    r.request_id = request_id(c.cluster_id);
    r.participant_id = participant_id_;
    r.clip_index = c.clip_index;
    r.span = spans_[static_cast<std::size_t>(c.clip_index)];
    r.cluster_id = c.cluster_id;
    if (opts_.media_hint) r.media_hint = opts_.media_hint(participant_id_, c.clip_index);
    return r;
  }

  std::vector<AnnotatorRequest> pending_locked() const {
    std::vector<AnnotatorRequest> out;
    for (const auto& c : centroids_.centroids)
      if (!labels_.contains(c.cluster_id)) out.push_back(make_request(c));
    return out;
  }

  void replay() {
    if (std::filesystem::exists(log_path_)) {
      auto size = std::filesystem::file_size(log_path_);
      auto text = io::read_file(log_path_);
      auto keep = text.rfind('\n');
      auto keep_len = keep == std::string::npos ? 0 : keep + 1;
      if (keep_len != size) std::filesystem::resize_file(log_path_, keep_len);
    }
    for (auto& rec : read_log(log_path_)) {
      const Centroid* c = centroids_.find(rec.cluster_id);
      if (!c || c->clip_index != rec.clip_index || request_id(rec.cluster_id) != rec.request_id)
        throw StateError("session log record " + rec.request_id + " does not match the clustering");
      if (labels_.contains(rec.cluster_id)) continue;
      labels_[rec.cluster_id] = rec.label_id;
      records_.push_back(std::move(rec));
    }
  }

  void append(const SessionRecord& rec) {
    if (log_path_.has_parent_path()) std::filesystem::create_directories(log_path_.parent_path());
    std::ofstream out(log_path_, std::ios::binary | std::ios::app);
    if (!out) throw DataError("cannot append to session log " + log_path_.string());
    out << rec.request_id << '\t' << rec.cluster_id << '\t' << rec.clip_index << '\t' << rec.label_id << '\t'
        << rec.timestamp_ms << '\n';
    out.flush();
    if (!out) throw DataError("failed writing session log " + log_path_.string());
  }

  std::string participant_id_;
  CentroidSet centroids_;
  std::vector<ClipSpan> spans_;
  std::vector<std::string> vocabulary_;
  std::filesystem::path log_path_;
  SessionOptions opts_;

  mutable std::mutex mu_;
  bool open_ = true;
  ClusterLabels labels_;
  std::vector<SessionRecord> records_;
};

}  // namespace weakhar

#endif  // WEAKHAR_ANNOTATE_HPP
