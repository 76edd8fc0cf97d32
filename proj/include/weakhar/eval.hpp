#ifndef WEAKHAR_EVAL_HPP
#define WEAKHAR_EVAL_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "weakhar/annotate.hpp"
#include "weakhar/error.hpp"
#include "weakhar/gmm.hpp"
#include "weakhar/ingest.hpp"
#include "weakhar/io.hpp"
#include "weakhar/parallel.hpp"

namespace weakhar {

struct LabelAccuracy {
  double accuracy = 0.0;  // over retained clips
  double coverage = 0.0;  // retained / total
  Index retained = 0;
  Index total = 0;
  int budget = 0;
};

inline LabelAccuracy labelling_accuracy(const WeakLabelSet& weak, const std::vector<int>& gt) {
  if (gt.size() != weak.clips.size())
    throw ShapeError("ground truth covers " + std::to_string(gt.size()) + " clips, weak labels " +
                     std::to_string(weak.clips.size()));
  LabelAccuracy out;
  out.total = weak.size();
  out.budget = weak.annotation_budget;
  Index correct = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!weak.clips[i].retained) continue;
    ++out.retained;
    correct += weak.clips[i].label_id == gt[i];
  }
  if (out.retained == 0)
    throw DataError("labelling accuracy undefined for '" + weak.participant_id + "': no clips retained");
  out.accuracy = static_cast<double>(correct) / static_cast<double>(out.retained);
  out.coverage = static_cast<double>(out.retained) / static_cast<double>(out.total);
  return out;
}

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample (n-1); 0 for a single value
  std::size_t n = 0;
};

inline Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.n = values.size();
  if (values.empty()) return a;
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(a.n);
  if (a.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(a.n - 1));
  }
  return a;
}

inline double median(std::vector<double> values) {
  if (values.empty()) throw EmptyInputError("median of an empty sequence");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// One (participant, axis value, seed) evaluation.
struct SweepRow {
  double axis = 0.0;  // C or threshold
  std::uint64_t seed = 0;
  std::string participant;
  double accuracy = 0.0;
  double coverage = 0.0;
  int budget = 0;
  Index clips = 0;
  double threshold = kNoThreshold;  // effective distance bound
};

struct ParticipantClips {
  EmbeddingSet embeddings;
  std::vector<int> clip_gt;
};

// Cluster -> centroid -> oracle -> propagate for one participant.
inline WeakLabelSet oracle_weak_labels(const ParticipantClips& p, const GmmOptions& gmm) {
  const auto model = fit_gmm(p.embeddings.clips, gmm);
  const auto assignment = assign_clusters(model, p.embeddings.clips);
  const auto centroids = find_centroids(assignment);
  const auto oracle = annotate_oracle(centroids, p.clip_gt);
  return propagate(assignment, oracle.labels, p.embeddings, centroids);
}

struct SweepOptions {
  GmmOptions gmm;       // components is overridden by the cluster sweep
  double threshold = kNoThreshold;
  bool relative = false;  // thresholds are multiples of the median centroid distance
  int jobs = 1;
};

namespace detail {

inline void sort_rows(std::vector<SweepRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return std::tie(a.axis, a.seed, a.participant) < std::tie(b.axis, b.seed, b.participant);
  });
}

inline void check_sweep_inputs(const std::vector<ParticipantClips>& participants, const std::vector<std::uint64_t>& seeds) {
  if (participants.empty()) throw ConfigError("no participants to sweep");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  for (const auto& p : participants)
    if (p.clip_gt.size() != static_cast<std::size_t>(p.embeddings.size()))
      throw ShapeError("ground truth of '" + p.embeddings.participant_id + "' does not cover its clips");
}

inline SweepRow make_row(double axis, std::uint64_t seed, const WeakLabelSet& weak, const std::vector<int>& gt) {
  const auto acc = labelling_accuracy(weak, gt);
  return {axis, seed, weak.participant_id, acc.accuracy, acc.coverage, acc.budget, acc.total, weak.threshold};
}

}  // namespace detail

inline std::vector<SweepRow> sweep_clusters(const std::vector<ParticipantClips>& participants,
                                            const std::vector<int>& c_values, const std::vector<std::uint64_t>& seeds,
                                            const SweepOptions& opts = {}) {
  detail::check_sweep_inputs(participants, seeds);
  if (c_values.empty() || !std::is_sorted(c_values.begin(), c_values.end()) || c_values.front() < 1)
    throw ConfigError("cluster counts must be positive and sorted ascending");
  for (const auto& p : participants)
    if (c_values.back() > p.embeddings.size())
      throw ConfigError("C=" + std::to_string(c_values.back()) + " exceeds the " + std::to_string(p.embeddings.size()) +
                        " clips of participant '" + p.embeddings.participant_id + "'");

  const std::size_t per_p = c_values.size() * seeds.size();
  std::vector<SweepRow> rows(participants.size() * per_p);
  run_jobs(rows.size(), opts.jobs, [&](std::size_t job) {
    const auto& p = participants[job / per_p];
    const int C = c_values[(job % per_p) / seeds.size()];
    const auto seed = seeds[job % seeds.size()];
    GmmOptions g = opts.gmm;
    g.components = C;
    g.seed = seed;
    auto weak = oracle_weak_labels(p, g);
    apply_threshold(weak, opts.threshold);
    rows[job] = detail::make_row(C, seed, weak, p.clip_gt);
  });
  detail::sort_rows(rows);
  return rows;
}

// Thresholds apply to a single clustering per (participant, seed); with
// opts.relative they are multiples of that clustering's median centroid distance.
inline std::vector<SweepRow> sweep_thresholds(const std::vector<ParticipantClips>& participants,
                                              const std::vector<double>& thresholds,
                                              const std::vector<std::uint64_t>& seeds, const SweepOptions& opts) {
  detail::check_sweep_inputs(participants, seeds);
  if (thresholds.empty()) throw ConfigError("no thresholds to sweep");
  for (double t : thresholds)
    if (std::isnan(t) || t < 0.0) throw ConfigError("threshold must be non-negative");
  for (const auto& p : participants)
    if (opts.gmm.components > p.embeddings.size())
      throw ConfigError("C=" + std::to_string(opts.gmm.components) + " exceeds the clips of participant '" +
                        p.embeddings.participant_id + "'");

  std::vector<SweepRow> rows(participants.size() * seeds.size() * thresholds.size());
  run_jobs(participants.size() * seeds.size(), opts.jobs, [&](std::size_t job) {
    const auto& p = participants[job / seeds.size()];
    GmmOptions g = opts.gmm;
    g.seed = seeds[job % seeds.size()];
    auto weak = oracle_weak_labels(p, g);
    double scale = 1.0;
    if (opts.relative) {
      std::vector<double> d;
      for (const auto& c : weak.clips) d.push_back(c.distance);
      scale = median(std::move(d));
    }
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
      apply_threshold(weak, std::isinf(thresholds[k]) ? kNoThreshold : thresholds[k] * scale);
      rows[job * thresholds.size() + k] = detail::make_row(thresholds[k], g.seed, weak, p.clip_gt);
    }
  });
  detail::sort_rows(rows);
  return rows;
}

struct AxisSummary {
  double axis = 0.0;
  Aggregate accuracy;
  Aggregate coverage;
  Aggregate budget_fraction;  // budget / clips
};

// Per-participant means over seeds, then mean and sample deviation across
// participants, for each axis value in ascending order.
inline std::vector<AxisSummary> summarize(const std::vector<SweepRow>& rows) {
  struct Acc {
    double accuracy = 0, coverage = 0, budget = 0;
    int n = 0;
  };
  std::map<double, std::map<std::string, Acc>> grouped;
  for (const auto& r : rows) {
    auto& a = grouped[r.axis][r.participant];
    a.accuracy += r.accuracy;
    a.coverage += r.coverage;
    a.budget += static_cast<double>(r.budget) / static_cast<double>(r.clips);
    ++a.n;
  }
  std::vector<AxisSummary> out;
  for (const auto& [axis, per_p] : grouped) {
    std::vector<double> acc, cov, bud;
    for (const auto& [pid, a] : per_p) {
      acc.push_back(a.accuracy / a.n);
      cov.push_back(a.coverage / a.n);
      bud.push_back(a.budget / a.n);
    }
    out.push_back({axis, aggregate(acc), aggregate(cov), aggregate(bud)});
  }
  return out;
}

inline std::string axis_text(double axis) { return std::isinf(axis) ? std::string("inf") : io::format_double(axis); }

// axis,seed,participant,accuracy,coverage,budget
inline std::string sweep_csv(const std::vector<SweepRow>& rows, const std::string& axis_name) {
  std::string out = axis_name + ",seed,participant,accuracy,coverage,budget\n";
  for (const auto& r : rows)
    out += axis_text(r.axis) + ',' + std::to_string(r.seed) + ',' + r.participant + ',' + io::format_double(r.accuracy) +
           ',' + io::format_double(r.coverage) + ',' + std::to_string(r.budget) + '\n';
  return out;
}

inline std::string percent_cell(const Aggregate& a) {
  return io::format_fixed(100.0 * a.mean, 2) + " (± " + io::format_fixed(100.0 * a.stddev, 2) + ")";
}

inline std::string summary_table(const std::vector<AxisSummary>& summary, const std::string& axis_name) {
  std::string out = axis_name + "\taccuracy\tcoverage\tbudget %\n";
  for (const auto& s : summary)
    out += axis_text(s.axis) + '\t' + percent_cell(s.accuracy) + '\t' + percent_cell(s.coverage) + '\t' +
           percent_cell(s.budget_fraction) + '\n';
  return out;
}

}  // namespace weakhar

#endif  // WEAKHAR_EVAL_HPP
