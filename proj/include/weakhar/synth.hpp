#ifndef WEAKHAR_SYNTH_HPP
#define WEAKHAR_SYNTH_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "weakhar/error.hpp"
#include "weakhar/ingest.hpp"
#include "weakhar/io.hpp"
#include "weakhar/random.hpp"

// Synthetic benchmark suites: activity tracks made of contiguous segments,
// clip embeddings drawn from per-class Gaussian modes, and inertial-like
// sensor streams with class-specific sinusoid frequencies.
namespace weakhar::synth {

struct TrackSpec {
  int classes = 10;
  double duration_s = 2003.0;
  double sample_rate_hz = 1.0;
  double min_segment_s = 8.0;
  double max_segment_s = 40.0;
};

struct Segment {
  double start_s = 0.0;
  double end_s = 0.0;
  int label_id = 0;
  int mode = 0;
};

inline std::vector<std::string> class_names(int classes) {
  std::vector<std::string> names{"null"};
  for (int c = 1; c < classes; ++c) names.push_back("activity_" + std::to_string(c));
  return names;
}

// Consecutive segments never repeat a label.
inline std::vector<Segment> make_segments(const TrackSpec& spec, int modes, Rng& rng) {
  if (spec.classes < 2) throw ConfigError("synthetic tracks need at least 2 classes");
  std::vector<Segment> out;
  double t = 0.0;
  int prev = -1;
  while (t < spec.duration_s) {
    int label;
    do label = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.classes)));
    while (label == prev);
    const double len = std::round(rng.uniform(spec.min_segment_s, spec.max_segment_s));
    out.push_back({t, std::min(t + len, spec.duration_s), label, static_cast<int>(rng.below(static_cast<std::uint64_t>(modes)))});
    t += len;
    prev = label;
  }
  return out;
}

inline LabelTrack sample_track(const std::vector<Segment>& segments, const TrackSpec& spec, std::string participant) {
  LabelTrack track;
  track.participant_id = std::move(participant);
  track.label_names = class_names(spec.classes);
  const auto n = static_cast<Index>(std::floor(spec.duration_s * spec.sample_rate_hz + 1e-9));
  std::size_t seg = 0;
  for (Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / spec.sample_rate_hz;
    while (seg + 1 < segments.size() && segments[seg].end_s <= t) ++seg;
    track.samples.push_back({t, segments[seg].label_id});
  }
  return track;
}

inline const Segment& segment_at(const std::vector<Segment>& segments, double t) {
  for (const auto& s : segments)
    if (t < s.end_s) return s;
  return segments.back();
}

struct EmbeddingSuiteSpec {
  int participants = 5;
  Index clips = 2000;
  int classes = 10;
  int modes = 2;
  Index dim = 16;
  double separation = 1.0;        // sd of mode-center coordinates
  double noise = 0.35;            // per-coordinate clip noise
  double participant_shift = 0.1; // sd of a per-participant offset
  double outlier_fraction = 0.0;  // clips whose noise is inflated
  double outlier_scale = 1.0;     // inflation drawn uniformly from [1, scale]
  WindowingSpec clip{4.0, 1.0};
  std::uint64_t seed = 1;
};

struct Participant {
  LabelTrack track;
  EmbeddingSet embeddings;
  std::vector<int> clip_gt;
  SensorSeries sensors;  // empty unless the sensor suite generated it
  std::vector<Segment> segments;
};

inline std::string participant_name(int i) {
  std::string n = std::to_string(i + 1);
  return "p" + std::string(n.size() < 2 ? 2 - n.size() : 0, '0') + n;
}

namespace detail {

inline std::vector<Matrix> mode_centers(const EmbeddingSuiteSpec& spec, Rng& rng) {
  std::vector<Matrix> centers;
  for (int c = 0; c < spec.classes; ++c) {
    Matrix m(spec.modes, spec.dim);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, spec.separation);
    centers.push_back(std::move(m));
  }
  return centers;
}

inline void fill_embeddings(Participant& p, const EmbeddingSuiteSpec& spec, const std::vector<Matrix>& centers, Rng& rng) {
  const Index T = p.embeddings.spans.size();
  Eigen::RowVectorXd shift(spec.dim);
  for (Index e = 0; e < spec.dim; ++e) shift(e) = rng.normal(0.0, spec.participant_shift);
  p.embeddings.clips.resize(T, spec.dim);
  for (Index t = 0; t < T; ++t) {
    const int label = p.clip_gt[static_cast<std::size_t>(t)];
    const auto& seg = segment_at(p.segments, p.embeddings.spans[static_cast<std::size_t>(t)].center());
    const int mode = seg.label_id == label ? seg.mode : 0;
    double scale = spec.noise;
    if (spec.outlier_fraction > 0.0 && rng.uniform() < spec.outlier_fraction) scale *= rng.uniform(1.0, spec.outlier_scale);
    for (Index e = 0; e < spec.dim; ++e)
      p.embeddings.clips(t, e) = centers[static_cast<std::size_t>(label)](mode, e) + shift(e) + rng.normal(0.0, scale);
  }
}

inline Participant make_participant(int index, const TrackSpec& track_spec, int modes, const WindowingSpec& clip,
                                    const std::string& tag, Rng& rng) {
  Participant p;
  const std::string pid = participant_name(index);
  p.segments = make_segments(track_spec, modes, rng);
  p.track = sample_track(p.segments, track_spec, pid);
  const auto T = static_cast<Index>(std::floor((track_spec.duration_s - clip.length_s) / clip.stride_s + 1e-9)) + 1;
  p.embeddings.participant_id = pid;
  p.embeddings.source_tag = tag;
  p.embeddings.spans = clip.spans(T);
  p.clip_gt = clip_ground_truth(p.track, p.embeddings.spans);
  return p;
}

}  // namespace detail

inline std::vector<Participant> embedding_suite(const EmbeddingSuiteSpec& spec) {
  if (spec.participants < 1 || spec.clips < 1 || spec.modes < 1 || spec.dim < 1)
    throw ConfigError("synthetic suite sizes must be positive");
  Rng rng(spec.seed);
  const auto centers = detail::mode_centers(spec, rng);
  TrackSpec track;
  track.classes = spec.classes;
  track.duration_s = spec.clip.length_s + static_cast<double>(spec.clips - 1) * spec.clip.stride_s;
  std::vector<Participant> out;
  for (int i = 0; i < spec.participants; ++i) {
    auto p = detail::make_participant(i, track, spec.modes, spec.clip, "synth", rng);
    detail::fill_embeddings(p, spec, centers, rng);
    out.push_back(std::move(p));
  }
  return out;
}

// Clusters overlap and a share of clips carries heavy-tailed noise; meant to
// be clustered with C = 2A.
inline EmbeddingSuiteSpec overlap_heavy_spec(std::uint64_t seed) {
  EmbeddingSuiteSpec s;
  s.clips = 1000;
  s.modes = 1;
  s.noise = 0.5;
  s.outlier_fraction = 0.1;
  s.outlier_scale = 20.0;
  s.seed = seed;
  return s;
}

struct SensorSuiteSpec {
  int participants = 5;
  int classes = 6;
  double duration_s = 600.0;
  double rate_hz = 20.0;
  Index channels = 3;
  double base_frequency_hz = 0.6;
  double frequency_step_hz = 0.7;
  double signal_noise = 0.5;
  EmbeddingSuiteSpec embedding;  // clip embeddings paired with the sensor stream
  std::uint64_t seed = 1;
};

inline SensorSuiteSpec default_sensor_spec(std::uint64_t seed) {
  SensorSuiteSpec s;
  s.embedding.classes = s.classes;
  s.embedding.modes = 1;
  s.embedding.dim = 16;
  s.embedding.noise = 0.93;  // about 85% weak-label accuracy at C = 20
  s.seed = seed;
  return s;
}

// Each class oscillates at its own frequency on every channel, with a
// per-segment random phase and channel-specific amplitude.
inline std::vector<Participant> sensor_suite(const SensorSuiteSpec& spec) {
  if (spec.rate_hz <= 0.0 || spec.channels < 1) throw ConfigError("sensor rate and channels must be positive");
  if (spec.embedding.classes != spec.classes) throw ConfigError("embedding and sensor class counts differ");
  Rng rng(spec.seed);
  const auto centers = detail::mode_centers(spec.embedding, rng);
  Matrix amplitude(spec.classes, spec.channels);
  for (Index i = 0; i < amplitude.size(); ++i) amplitude.data()[i] = rng.uniform(0.5, 1.5);
  TrackSpec track;
  track.classes = spec.classes;
  track.duration_s = spec.duration_s;
  std::vector<Participant> out;
  for (int i = 0; i < spec.participants; ++i) {
    auto p = detail::make_participant(i, track, spec.embedding.modes, spec.embedding.clip, "synth", rng);
    detail::fill_embeddings(p, spec.embedding, centers, rng);
    const auto N = static_cast<Index>(std::floor(spec.duration_s * spec.rate_hz + 1e-9));
    p.sensors.participant_id = p.embeddings.participant_id;
    p.sensors.rate_hz = spec.rate_hz;
    p.sensors.channels.resize(N, spec.channels);
    std::vector<Eigen::VectorXd> phases;
    for (std::size_t s = 0; s < p.segments.size(); ++s) {
      Eigen::VectorXd ph(spec.channels);
      for (Index d = 0; d < spec.channels; ++d) ph(d) = rng.uniform(0.0, 2.0 * std::numbers::pi);
      phases.push_back(ph);
    }
    std::size_t seg = 0;
    for (Index n = 0; n < N; ++n) {
      const double t = static_cast<double>(n) / spec.rate_hz;
      while (seg + 1 < p.segments.size() && p.segments[seg].end_s <= t) ++seg;
      const int c = p.segments[seg].label_id;
      const double f = spec.base_frequency_hz + spec.frequency_step_hz * c;
      p.sensors.timestamps.push_back(t);
      for (Index d = 0; d < spec.channels; ++d)
        p.sensors.channels(n, d) = amplitude(c, d) * std::sin(2.0 * std::numbers::pi * f * t + phases[seg](d)) +
                                   rng.normal(0.0, spec.signal_noise);
    }
    out.push_back(std::move(p));
  }
  return out;
}

// <root>/labels/names.txt, labels/<pid>.csv, embeddings/<pid>/<tag>.wemb and,
// when present, sensors/<pid>.csv.
inline void write_dataset(const std::filesystem::path& root, const std::vector<Participant>& participants) {
  if (participants.empty()) throw EmptyInputError("no participants to write");
  std::string names;
  for (const auto& n : participants.front().track.label_names) names += n + '\n';
  io::write_file(root / "labels" / "names.txt", names);
  for (const auto& p : participants) {
    const auto& pid = p.embeddings.participant_id;
    io::write_file(root / "labels" / (pid + ".csv"), encode_label_track(p.track));
    save_embeddings(root / "embeddings" / pid / (p.embeddings.source_tag + ".wemb"), p.embeddings);
    if (p.sensors.size() > 0) io::write_file(root / "sensors" / (pid + ".csv"), encode_sensor_csv(p.sensors));
  }
}

}  // namespace weakhar::synth

#endif  // WEAKHAR_SYNTH_HPP
