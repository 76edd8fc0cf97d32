#ifndef WEAKHAR_TRANSFER_HPP
#define WEAKHAR_TRANSFER_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "weakhar/annotate.hpp"
#include "weakhar/error.hpp"
#include "weakhar/ingest.hpp"
#include "weakhar/random.hpp"

namespace weakhar {

// Per-sensor-sample labels; kept[i] == false means the sample carries no label.
struct TimestepLabels {
  std::vector<int> labels;
  std::vector<bool> kept;

  std::size_t size() const { return labels.size(); }
};

struct LabeledWindowSet {
  Matrix features;                 // M x (W*D), time-major within a row
  std::vector<int> labels;         // M
  std::vector<ClipSpan> spans;     // M window time ranges
  Vector class_weights;            // A
  int num_classes = 0;
  std::size_t clip_budget = 0;     // clips whose labels the set relies on (few-shot/random)
  std::string provenance;

  Index size() const { return static_cast<Index>(labels.size()); }
  std::vector<Index> class_counts() const {
    std::vector<Index> out(static_cast<std::size_t>(num_classes), 0);
    for (int l : labels) ++out[static_cast<std::size_t>(l)];
    return out;
  }
};

// Inverse-frequency weights kept/(A * count_c); absent classes get 0.
inline Vector inverse_frequency_weights(const std::vector<int>& labels, int num_classes) {
  Vector counts = Vector::Zero(num_classes);
  for (int l : labels) counts(l) += 1.0;
  Vector w = Vector::Zero(num_classes);
  const double total = static_cast<double>(labels.size());
  for (int c = 0; c < num_classes; ++c)
    if (counts(c) > 0.0) w(c) = total / (static_cast<double>(num_classes) * counts(c));
  return w;
}

// Each sensor sample takes the label of the retained clip covering it whose
// center is nearest (ties to the lower clip index). Samples covered only by
// omitted clips, or by nothing, are masked.
inline TimestepLabels labels_to_timesteps(const WeakLabelSet& weak, const SensorSeries& series) {
  if (weak.spans.size() != weak.clips.size()) throw ShapeError("weak labels and clip spans differ in length");
  if (weak.clips.empty() || series.timestamps.empty()) throw EmptyInputError("nothing to transfer");
  const double clip_begin = weak.spans.front().start_s;
  const double clip_end = weak.spans.back().end_s;
  if (series.timestamps.back() < clip_begin || series.timestamps.front() >= clip_end)
    throw AlignmentError("sensor stream [" + io::format_double(series.timestamps.front()) + ", " +
                         io::format_double(series.timestamps.back()) + "] does not overlap clips [" +
                         io::format_double(clip_begin) + ", " + io::format_double(clip_end) + ")");
  TimestepLabels out;
  out.labels.assign(series.timestamps.size(), kNullLabel);
  out.kept.assign(series.timestamps.size(), false);
  std::size_t first = 0;  // first clip whose end is beyond the current timestamp
  for (std::size_t i = 0; i < series.timestamps.size(); ++i) {
    const double t = series.timestamps[i];
    while (first < weak.spans.size() && weak.spans[first].end_s <= t) ++first;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = first; k < weak.spans.size() && weak.spans[k].start_s <= t; ++k) {
      if (!weak.clips[k].retained || t >= weak.spans[k].end_s) continue;
      const double d = std::abs(t - weak.spans[k].center());
      if (d < best) {
        best = d;
        out.labels[i] = weak.clips[k].label_id;
        out.kept[i] = true;
      }
    }
  }
  return out;
}

// Ground truth per sensor sample: the most recent track sample at or before it.
inline TimestepLabels ground_truth_timesteps(const LabelTrack& track, const SensorSeries& series) {
  if (track.samples.empty()) throw DataError("ground-truth track for '" + track.participant_id + "' is empty");
  TimestepLabels out;
  out.labels.assign(series.timestamps.size(), kNullLabel);
  out.kept.assign(series.timestamps.size(), false);
  std::size_t k = 0;
  for (std::size_t i = 0; i < series.timestamps.size(); ++i) {
    const double t = series.timestamps[i];
    while (k + 1 < track.samples.size() && track.samples[k + 1].timestamp_s <= t) ++k;
    if (track.samples[k].timestamp_s <= t) {
      out.labels[i] = track.samples[k].label_id;
      out.kept[i] = true;
    }
  }
  return out;
}

inline Index window_count(Index samples, Index window, Index step) {
  if (window < 1 || step < 1 || samples < window) return 0;
  return (samples - window) / step + 1;
}

// Slides spec over the series. A window is labelled by the majority of its
// kept samples (ties to the smaller id) and dropped when more than half of
// its samples are masked.
inline LabeledWindowSet make_windows(const SensorSeries& series, const TimestepLabels& track, const WindowingSpec& spec,
                                     int num_classes, std::string provenance = {}) {
  spec.validate();
  if (series.size() == 0) throw EmptyInputError("sensor series '" + series.participant_id + "' is empty");
  if (track.size() != static_cast<std::size_t>(series.size()))
    throw ShapeError("timestep labels cover " + std::to_string(track.size()) + " samples, series has " +
                     std::to_string(series.size()));
  const auto W = static_cast<Index>(std::llround(series.rate_hz * spec.length_s));
  const auto step = std::max<Index>(1, static_cast<Index>(std::llround(series.rate_hz * spec.stride_s)));
  const Index D = series.dim();
  const Index total = window_count(series.size(), W, step);

  LabeledWindowSet out;
  out.num_classes = num_classes;
  out.provenance = std::move(provenance);
  std::vector<Index> starts;
  std::vector<int> counts(static_cast<std::size_t>(num_classes));
  for (Index m = 0; m < total; ++m) {
    const Index begin = m * step;
    std::fill(counts.begin(), counts.end(), 0);
    Index kept = 0;
    for (Index i = begin; i < begin + W; ++i) {
      if (!track.kept[static_cast<std::size_t>(i)]) continue;
      const int l = track.labels[static_cast<std::size_t>(i)];
      if (l < 0 || l >= num_classes) throw ShapeError("timestep label " + std::to_string(l) + " out of range");
      ++counts[static_cast<std::size_t>(l)];
      ++kept;
    }
    if (2 * (W - kept) > W) continue;
    starts.push_back(begin);
    out.labels.push_back(static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin()));
  }
  if (starts.empty())
    throw EmptyInputError("every window of '" + series.participant_id + "' was dropped (" + std::to_string(total) +
                          " candidates)");
  out.features.resize(static_cast<Index>(starts.size()), W * D);
  for (std::size_t m = 0; m < starts.size(); ++m) {
    for (Index i = 0; i < W; ++i) out.features.row(static_cast<Index>(m)).segment(i * D, D) = series.channels.row(starts[m] + i);
    const double t0 = series.timestamps[static_cast<std::size_t>(starts[m])];
    out.spans.push_back({t0, t0 + static_cast<double>(W) / series.rate_hz});
  }
  out.class_weights = inverse_frequency_weights(out.labels, num_classes);
  return out;
}

inline LabeledWindowSet select_windows(const LabeledWindowSet& set, const std::vector<Index>& rows, std::string provenance) {
  LabeledWindowSet out;
  out.num_classes = set.num_classes;
  out.provenance = std::move(provenance);
  out.features.resize(static_cast<Index>(rows.size()), set.features.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Index>(i)) = set.features.row(rows[i]);
    out.labels.push_back(set.labels[static_cast<std::size_t>(rows[i])]);
    out.spans.push_back(set.spans[static_cast<std::size_t>(rows[i])]);
  }
  out.class_weights = inverse_frequency_weights(out.labels, out.num_classes);
  return out;
}

inline LabeledWindowSet concat_windows(const std::vector<LabeledWindowSet>& parts, std::string provenance) {
  if (parts.empty()) throw EmptyInputError("no window sets to combine");
  LabeledWindowSet out;
  out.num_classes = parts.front().num_classes;
  out.provenance = std::move(provenance);
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.num_classes != out.num_classes || (p.size() > 0 && p.features.cols() != parts.front().features.cols()))
      throw ShapeError("window sets are not compatible");
    rows += p.size();
    out.clip_budget += p.clip_budget;
  }
  out.features.resize(rows, parts.front().features.cols());
  Index at = 0;
  for (const auto& p : parts) {
    if (p.size() > 0) out.features.middleRows(at, p.size()) = p.features;
    at += p.size();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.spans.insert(out.spans.end(), p.spans.begin(), p.spans.end());
  }
  out.class_weights = inverse_frequency_weights(out.labels, out.num_classes);
  return out;
}

// Flips each label to a uniformly chosen different class with probability rate.
inline void inject_symmetric_noise(LabeledWindowSet& set, double rate, Rng& rng) {
  if (set.num_classes < 2) return;
  for (auto& l : set.labels)
    if (rng.uniform() < rate) {
      int other = static_cast<int>(rng.below(static_cast<std::uint64_t>(set.num_classes - 1)));
      l = other >= l ? other + 1 : other;
    }
  set.class_weights = inverse_frequency_weights(set.labels, set.num_classes);
}

// ---------------------------------------------------------------------------
// Training scenarios
// ---------------------------------------------------------------------------

enum class ScenarioKind { kFullySupervised, kFewShot, kRandom, kWeak };

inline ScenarioKind parse_scenario_kind(std::string_view name) {
  if (name == "fully-supervised") return ScenarioKind::kFullySupervised;
  if (name == "few-shot") return ScenarioKind::kFewShot;
  if (name == "random") return ScenarioKind::kRandom;
  if (name == "weak") return ScenarioKind::kWeak;
  throw ConfigError("unknown scenario '" + std::string(name) + "'");
}

inline std::string scenario_kind_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::kFullySupervised: return "fully-supervised";
    case ScenarioKind::kFewShot: return "few-shot";
    case ScenarioKind::kRandom: return "random";
    case ScenarioKind::kWeak: return "weak";
  }
  return "?";
}

inline bool overlaps(const ClipSpan& a, const ClipSpan& b) { return a.start_s < b.end_s && b.start_s < a.end_s; }

inline std::vector<Index> windows_overlapping(const LabeledWindowSet& set, const std::vector<ClipSpan>& clips) {
  std::vector<Index> rows;
  for (Index m = 0; m < set.size(); ++m)
    for (const auto& c : clips)
      if (overlaps(set.spans[static_cast<std::size_t>(m)], c)) {
        rows.push_back(m);
        break;
      }
  return rows;
}

// fully-supervised: full_gt as is. few-shot: ground-truth windows overlapping
// the annotated clips. random: ground-truth windows overlapping as many
// uniformly drawn clips. weak: the weak-label windows.
inline LabeledWindowSet build_scenario(ScenarioKind kind, const LabeledWindowSet& full_gt, const LabeledWindowSet& weak,
                                       const std::vector<ClipSpan>& annotated_clips,
                                       const std::vector<ClipSpan>& all_clips, std::uint64_t seed) {
  const std::string name = scenario_kind_name(kind);
  switch (kind) {
    case ScenarioKind::kFullySupervised: {
      LabeledWindowSet out = full_gt;
      out.provenance = name;
      return out;
    }
    case ScenarioKind::kFewShot: {
      auto out = select_windows(full_gt, windows_overlapping(full_gt, annotated_clips), name);
      out.clip_budget = annotated_clips.size();
      return out;
    }
    case ScenarioKind::kRandom: {
      Rng rng(seed);
      std::vector<ClipSpan> drawn;
      for (auto i : rng.sample_without_replacement(all_clips.size(), annotated_clips.size())) drawn.push_back(all_clips[i]);
      auto out = select_windows(full_gt, windows_overlapping(full_gt, drawn), name);
      out.clip_budget = drawn.size();
      return out;
    }
    case ScenarioKind::kWeak: {
      LabeledWindowSet out = weak;
      out.provenance = name;
      out.clip_budget = annotated_clips.size();
      return out;
    }
  }
  throw ConfigError("unknown scenario");
}

inline nlohmann::json scenario_manifest(const std::string& scenario, double threshold, const LabeledWindowSet& set) {
  nlohmann::json j;
  j["scenario"] = scenario;
  j["threshold"] = threshold_name(threshold);
  j["budget"] = set.clip_budget;
  j["windows"] = set.size();
  j["window_counts"] = set.class_counts();
  return j;
}

}  // namespace weakhar

#endif  // WEAKHAR_TRANSFER_HPP
