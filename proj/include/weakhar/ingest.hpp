#ifndef WEAKHAR_INGEST_HPP
#define WEAKHAR_INGEST_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "weakhar/error.hpp"
#include "weakhar/io.hpp"

namespace weakhar {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kNullLabel = 0;

struct ClipSpan {
  double start_s = 0.0;
  double end_s = 0.0;

  double center() const { return 0.5 * (start_s + end_s); }
  double length() const { return end_s - start_s; }
  friend bool operator==(const ClipSpan&, const ClipSpan&) = default;
};

// Sliding window over time. Used for video clips and for sensor windows.
struct WindowingSpec {
  double length_s = 4.0;
  double stride_s = 1.0;

  void validate() const {
    if (!(length_s > 0.0) || !(stride_s > 0.0) || stride_s > length_s)
      throw ConfigError("windowing requires 0 < stride <= length (got length " + io::format_double(length_s) +
                        ", stride " + io::format_double(stride_s) + ")");
  }

  // Clip t spans [t*stride, t*stride + length).
  std::vector<ClipSpan> spans(Index count) const {
    std::vector<ClipSpan> out(static_cast<std::size_t>(count));
    for (Index t = 0; t < count; ++t) {
      double start = static_cast<double>(t) * stride_s;
      out[static_cast<std::size_t>(t)] = {start, start + length_s};
    }
    return out;
  }
};

// Per-participant clip embeddings, one row per clip.
struct EmbeddingSet {
  std::string participant_id;
  Matrix clips;  // T x E
  std::vector<ClipSpan> spans;
  std::string source_tag;

  Index size() const { return clips.rows(); }
  Index dim() const { return clips.cols(); }
};

struct LabelSample {
  double timestamp_s = 0.0;
  int label_id = 0;
};

struct LabelTrack {
  std::string participant_id;
  std::vector<LabelSample> samples;
  std::vector<std::string> label_names;  // index 0 is the NULL class

  int num_classes() const { return static_cast<int>(label_names.size()); }
};

struct SensorSeries {
  std::string participant_id;
  double rate_hz = 0.0;
  Matrix channels;  // N x D
  std::vector<double> timestamps;

  Index size() const { return channels.rows(); }
  Index dim() const { return channels.cols(); }
};

// Throws DataError/ShapeError/AlignmentError when an invariant is broken.
// Clip durations are compared with a tolerance that absorbs binary32 storage.
inline void validate(const EmbeddingSet& set, std::optional<double> clip_length_s = std::nullopt) {
  if (set.size() < 1 || set.dim() < 1)
    throw ShapeError("embedding set '" + set.participant_id + "' is empty (" + std::to_string(set.size()) + "x" +
                     std::to_string(set.dim()) + ")");
  if (static_cast<Index>(set.spans.size()) != set.size())
    throw ShapeError("embedding set has " + std::to_string(set.size()) + " clips but " +
                     std::to_string(set.spans.size()) + " spans");
  for (Index r = 0; r < set.size(); ++r)
    for (Index c = 0; c < set.dim(); ++c)
      if (!std::isfinite(set.clips(r, c)))
        throw DataError("non-finite embedding value at row " + std::to_string(r) + ", column " + std::to_string(c));
  const double expected = clip_length_s.value_or(set.spans.front().length());
  for (std::size_t i = 0; i < set.spans.size(); ++i) {
    const auto& s = set.spans[i];
    if (!std::isfinite(s.start_s) || !std::isfinite(s.end_s))
      throw DataError("non-finite clip span at clip " + std::to_string(i));
    if (std::abs(s.length() - expected) > 1e-4 * std::max(1.0, expected))
      throw AlignmentError("clip " + std::to_string(i) + " has length " + io::format_double(s.length()) +
                           ", expected " + io::format_double(expected));
    if (i > 0 && !(s.start_s > set.spans[i - 1].start_s))
      throw AlignmentError("clip spans not strictly increasing at clip " + std::to_string(i));
  }
}

inline void validate(const LabelTrack& track) {
  if (track.num_classes() < 2) throw DataError("label vocabulary needs at least 2 names (NULL + one activity)");
  for (std::size_t i = 0; i < track.samples.size(); ++i) {
    const auto& s = track.samples[i];
    if (s.label_id < 0 || s.label_id >= track.num_classes())
      throw ShapeError("label " + std::to_string(s.label_id) + " at sample " + std::to_string(i) +
                       " outside vocabulary of " + std::to_string(track.num_classes()));
    if (i > 0 && !(s.timestamp_s > track.samples[i - 1].timestamp_s))
      throw DataError("label timestamps not strictly increasing at sample " + std::to_string(i));
  }
}

inline double median_delta(const std::vector<double>& ts) {
  std::vector<double> d;
  d.reserve(ts.size());
  for (std::size_t i = 1; i < ts.size(); ++i) d.push_back(ts[i] - ts[i - 1]);
  if (d.empty()) return 0.0;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

inline void validate(const SensorSeries& s) {
  if (static_cast<Index>(s.timestamps.size()) != s.size())
    throw ShapeError("sensor series has " + std::to_string(s.size()) + " rows but " +
                     std::to_string(s.timestamps.size()) + " timestamps");
  if (!(s.rate_hz > 0.0)) throw DataError("sensor rate must be positive");
  if (!s.channels.allFinite()) throw DataError("non-finite sensor value in '" + s.participant_id + "'");
  for (std::size_t i = 1; i < s.timestamps.size(); ++i)
    if (!(s.timestamps[i] > s.timestamps[i - 1]))
      throw DataError("sensor timestamps not monotone at sample " + std::to_string(i));
  if (s.timestamps.size() >= 2) {
    double implied = 1.0 / median_delta(s.timestamps);
    if (std::abs(implied - s.rate_hz) > 0.01 * s.rate_hz)
      throw DataError("sensor rate " + io::format_double(s.rate_hz) + " Hz inconsistent with timestamps (" +
                      io::format_double(implied) + " Hz)");
  }
}

// ---------------------------------------------------------------------------
// Embedding files
//
// Binary: "WEMB", u32 version (1), u32 T, u32 E, T*E binary32 row-major,
// optionally followed by u32 flag (1) and 2*T binary32 (start, end) pairs.
// CSV:    start_s,end_s,f0,...,f{E-1}
// ---------------------------------------------------------------------------

inline constexpr char kEmbeddingMagic[4] = {'W', 'E', 'M', 'B'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

struct EmbeddingLoadOptions {
  std::optional<Index> expected_dim;
  std::string participant_id;  // defaults to the file stem
  std::string source_tag;
  WindowingSpec default_clips;  // synthesizes spans when the file carries none
};

inline std::string encode_embeddings(const EmbeddingSet& set, bool with_spans = true) {
  io::ByteWriter w;
  w.bytes(std::string_view(kEmbeddingMagic, 4));
  w.u32(kEmbeddingVersion);
  w.u32(static_cast<std::uint32_t>(set.size()));
  w.u32(static_cast<std::uint32_t>(set.dim()));
  for (Index r = 0; r < set.size(); ++r)
    for (Index c = 0; c < set.dim(); ++c) w.f32(static_cast<float>(set.clips(r, c)));
  if (with_spans) {
    w.u32(1);
    for (const auto& s : set.spans) {
      w.f32(static_cast<float>(s.start_s));
      w.f32(static_cast<float>(s.end_s));
    }
  }
  return w.str();
}

inline EmbeddingSet decode_embeddings(std::string_view bytes, const EmbeddingLoadOptions& opts = {}) {
  io::ByteReader r(bytes);
  if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(kEmbeddingMagic, 4))
    throw FormatError("bad magic: not a WEMB embedding file");
  r.take(4);
  auto version = r.u32();
  if (version != kEmbeddingVersion) throw FormatError("unsupported WEMB version " + std::to_string(version));
  const auto T = static_cast<Index>(r.u32());
  const auto E = static_cast<Index>(r.u32());
  if (opts.expected_dim && *opts.expected_dim != E)
    throw ShapeError("embedding dimension " + std::to_string(E) + " does not match expected " +
                     std::to_string(*opts.expected_dim));
  const auto need = static_cast<std::size_t>(T) * static_cast<std::size_t>(E) * 4u;
  if (r.remaining() < need)
    throw FormatError("truncated WEMB body: expected " + std::to_string(T * E) + " values, found " +
                      std::to_string(r.remaining() / 4));
  EmbeddingSet set;
  set.participant_id = opts.participant_id;
  set.source_tag = opts.source_tag;
  set.clips.resize(T, E);
  for (Index i = 0; i < T; ++i)
    for (Index j = 0; j < E; ++j) set.clips(i, j) = static_cast<double>(r.f32());
  if (r.remaining() == 0) {
    set.spans = opts.default_clips.spans(T);
  } else {
    auto flag = r.u32();
    if (flag != 1) throw FormatError("unknown WEMB trailer flag " + std::to_string(flag));
    if (r.remaining() != static_cast<std::size_t>(T) * 8u)
      throw FormatError("WEMB span block holds " + std::to_string(r.remaining() / 4) + " values, expected " +
                        std::to_string(2 * T));
    set.spans.resize(static_cast<std::size_t>(T));
    for (auto& s : set.spans) {
      s.start_s = static_cast<double>(r.f32());
      s.end_s = static_cast<double>(r.f32());
    }
  }
  validate(set);
  return set;
}

inline std::string encode_embeddings_csv(const EmbeddingSet& set) {
  std::string out = "start_s,end_s";
  for (Index j = 0; j < set.dim(); ++j) out += ",f" + std::to_string(j);
  out += '\n';
  for (Index i = 0; i < set.size(); ++i) {
    const auto& s = set.spans[static_cast<std::size_t>(i)];
    out += io::format_double(s.start_s) + ',' + io::format_double(s.end_s);
    for (Index j = 0; j < set.dim(); ++j) out += ',' + io::format_double(set.clips(i, j));
    out += '\n';
  }
  return out;
}

inline EmbeddingSet decode_embeddings_csv(std::string_view text, const EmbeddingLoadOptions& opts = {}) {
  auto rows = io::lines(text);
  if (rows.empty()) throw FormatError("empty embedding CSV");
  auto header = io::split(rows[0], ',');
  if (header.size() < 3 || header[0] != "start_s" || header[1] != "end_s")
    throw FormatError("embedding CSV header must start with start_s,end_s,f0");
  const auto E = static_cast<Index>(header.size() - 2);
  for (Index j = 0; j < E; ++j)
    if (header[static_cast<std::size_t>(j + 2)] != "f" + std::to_string(j))
      throw FormatError("embedding CSV column " + std::to_string(j + 2) + " should be f" + std::to_string(j));
  if (opts.expected_dim && *opts.expected_dim != E)
    throw ShapeError("embedding dimension " + std::to_string(E) + " does not match expected " +
                     std::to_string(*opts.expected_dim));
  EmbeddingSet set;
  set.participant_id = opts.participant_id;
  set.source_tag = opts.source_tag;
  const auto T = static_cast<Index>(rows.size() - 1);
  set.clips.resize(T, E);
  set.spans.resize(static_cast<std::size_t>(T));
  for (Index i = 0; i < T; ++i) {
    auto cells = io::split(rows[static_cast<std::size_t>(i + 1)], ',');
    if (static_cast<Index>(cells.size()) != E + 2)
      throw FormatError("embedding CSV row " + std::to_string(i) + " has " + std::to_string(cells.size()) +
                        " cells, expected " + std::to_string(E + 2));
    set.spans[static_cast<std::size_t>(i)] = {io::parse_double(cells[0], "start_s"),
                                              io::parse_double(cells[1], "end_s")};
    for (Index j = 0; j < E; ++j) set.clips(i, j) = io::parse_double(cells[static_cast<std::size_t>(j + 2)], "feature");
  }
  validate(set);
  return set;
}

inline EmbeddingSet load_embeddings(const std::filesystem::path& path, EmbeddingLoadOptions opts = {}) {
  if (opts.participant_id.empty()) opts.participant_id = path.stem().string();
  auto bytes = io::read_file(path);
  if (bytes.size() >= 4 && std::string_view(bytes).substr(0, 4) == std::string_view(kEmbeddingMagic, 4))
    return decode_embeddings(bytes, opts);
  if (path.extension() == ".csv") return decode_embeddings_csv(bytes, opts);
  throw FormatError("bad magic in " + path.string() + ": expected WEMB or a .csv file");
}

inline void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& set) {
  io::write_file(path, path.extension() == ".csv" ? encode_embeddings_csv(set) : encode_embeddings(set));
}

// ---------------------------------------------------------------------------
// Frame pooling and combination
// ---------------------------------------------------------------------------

// Clip t averages frames [round(t*stride*fps), round(t*stride*fps + length*fps)).
// Trailing partial windows are dropped.
inline EmbeddingSet pool_frames(const Matrix& frames, const WindowingSpec& spec, double fps,
                                std::string participant_id = {}, std::string source_tag = {}) {
  spec.validate();
  if (!(fps > 0.0)) throw ConfigError("fps must be positive");
  const double window = spec.length_s * fps;
  const double step = spec.stride_s * fps;
  const auto F = static_cast<double>(frames.rows());
  if (frames.rows() == 0 || F + 1e-9 < window)
    throw EmptyInputError("need at least " + io::format_double(window) + " frames for one clip, got " +
                          std::to_string(frames.rows()));
  const auto T = static_cast<Index>(std::floor((F - window) / step + 1e-9)) + 1;
  EmbeddingSet out;
  out.participant_id = std::move(participant_id);
  out.source_tag = std::move(source_tag);
  out.clips.resize(T, frames.cols());
  for (Index t = 0; t < T; ++t) {
    const double origin = static_cast<double>(t) * step;
    const auto begin = static_cast<Index>(std::llround(origin));
    const auto end = std::min<Index>(static_cast<Index>(std::llround(origin + window)), frames.rows());
    out.clips.row(t) = frames.middleRows(begin, end - begin).colwise().mean();
  }
  out.spans = spec.spans(T);
  return out;
}

// Row-wise concatenation of two embeddings of the same clips.
inline EmbeddingSet concat_embeddings(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.participant_id != b.participant_id)
    throw AlignmentError("cannot concatenate embeddings of '" + a.participant_id + "' and '" + b.participant_id + "'");
  if (a.size() != b.size())
    throw AlignmentError("clip counts differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  if (a.spans != b.spans) throw AlignmentError("clip spans differ between '" + a.source_tag + "' and '" + b.source_tag + "'");
  EmbeddingSet out;
  out.participant_id = a.participant_id;
  out.spans = a.spans;
  out.source_tag = a.source_tag + "+" + b.source_tag;
  out.clips.resize(a.size(), a.dim() + b.dim());
  out.clips << a.clips, b.clips;
  return out;
}

inline EmbeddingSet slice_columns(const EmbeddingSet& set, Index first, Index count, std::string source_tag = {}) {
  if (first < 0 || count < 1 || first + count > set.dim())
    throw ShapeError("column slice [" + std::to_string(first) + ", " + std::to_string(first + count) +
                     ") outside dimension " + std::to_string(set.dim()));
  EmbeddingSet out = set;
  out.clips = set.clips.middleCols(first, count);
  out.source_tag = std::move(source_tag);
  return out;
}

inline void l2_normalize_rows(EmbeddingSet& set) {
  for (Index i = 0; i < set.size(); ++i) {
    double n = set.clips.row(i).norm();
    if (n > 0.0) set.clips.row(i) /= n;
  }
}

// ---------------------------------------------------------------------------
// Label tracks and sensors
// ---------------------------------------------------------------------------

inline std::vector<std::string> load_label_names(const std::filesystem::path& path) {
  auto text = io::read_file(path);
  std::vector<std::string> names;
  for (auto line : io::lines(text)) names.emplace_back(line);
  if (names.size() < 2) throw DataError("label names file " + path.string() + " must list at least 2 names");
  return names;
}

inline LabelTrack decode_label_track(std::string_view text, std::vector<std::string> names,
                                     std::string participant_id = {}) {
  auto rows = io::lines(text);
  if (rows.empty() || rows[0] != "timestamp_s,label_id") throw FormatError("label CSV header must be timestamp_s,label_id");
  LabelTrack track;
  track.participant_id = std::move(participant_id);
  track.label_names = std::move(names);
  track.samples.reserve(rows.size() - 1);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    auto cells = io::split(rows[i], ',');
    if (cells.size() != 2) throw FormatError("label CSV row " + std::to_string(i) + " must have 2 cells");
    track.samples.push_back({io::parse_double(cells[0], "timestamp_s"),
                             static_cast<int>(io::parse_int(cells[1], "label_id"))});
  }
  validate(track);
  return track;
}

inline LabelTrack load_label_track(const std::filesystem::path& csv, const std::filesystem::path& names_file,
                                   std::string participant_id = {}) {
  if (participant_id.empty()) participant_id = csv.stem().string();
  return decode_label_track(io::read_file(csv), load_label_names(names_file), std::move(participant_id));
}

inline std::string encode_label_track(const LabelTrack& track) {
  std::string out = "timestamp_s,label_id\n";
  for (const auto& s : track.samples) out += io::format_double(s.timestamp_s) + ',' + std::to_string(s.label_id) + '\n';
  return out;
}

inline SensorSeries decode_sensor_csv(std::string_view text, std::string participant_id = {},
                                      std::optional<double> rate_hz = std::nullopt) {
  auto rows = io::lines(text);
  if (rows.empty()) throw FormatError("empty sensor CSV");
  auto header = io::split(rows[0], ',');
  if (header.size() < 2 || header[0] != "timestamp_s") throw FormatError("sensor CSV header must be timestamp_s,c0,...");
  const auto D = static_cast<Index>(header.size() - 1);
  for (Index j = 0; j < D; ++j)
    if (header[static_cast<std::size_t>(j + 1)] != "c" + std::to_string(j))
      throw FormatError("sensor CSV column " + std::to_string(j + 1) + " should be c" + std::to_string(j));
  SensorSeries s;
  s.participant_id = std::move(participant_id);
  const auto N = static_cast<Index>(rows.size() - 1);
  s.channels.resize(N, D);
  s.timestamps.resize(static_cast<std::size_t>(N));
  for (Index i = 0; i < N; ++i) {
    auto cells = io::split(rows[static_cast<std::size_t>(i + 1)], ',');
    if (static_cast<Index>(cells.size()) != D + 1)
      throw FormatError("sensor CSV row " + std::to_string(i) + " has " + std::to_string(cells.size()) + " cells");
    s.timestamps[static_cast<std::size_t>(i)] = io::parse_double(cells[0], "timestamp_s");
    for (Index j = 0; j < D; ++j) s.channels(i, j) = io::parse_double(cells[static_cast<std::size_t>(j + 1)], "channel");
  }
  if (N < 2 && !rate_hz) throw DataError("sensor CSV needs at least 2 samples to infer its rate");
  s.rate_hz = rate_hz.value_or(N >= 2 ? 1.0 / median_delta(s.timestamps) : 0.0);
  validate(s);
  return s;
}

inline SensorSeries load_sensor_csv(const std::filesystem::path& path, std::string participant_id = {},
                                    std::optional<double> rate_hz = std::nullopt) {
  if (participant_id.empty()) participant_id = path.stem().string();
  return decode_sensor_csv(io::read_file(path), std::move(participant_id), rate_hz);
}

inline std::string encode_sensor_csv(const SensorSeries& s) {
  std::string out = "timestamp_s";
  for (Index j = 0; j < s.dim(); ++j) out += ",c" + std::to_string(j);
  out += '\n';
  for (Index i = 0; i < s.size(); ++i) {
    out += io::format_double(s.timestamps[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < s.dim(); ++j) out += ',' + io::format_double(s.channels(i, j));
    out += '\n';
  }
  return out;
}

// Majority label of the track samples inside each clip span [start, end).
// Ties go to the smallest label id; uncovered clips get NULL.
inline std::vector<int> clip_ground_truth(const LabelTrack& track, const std::vector<ClipSpan>& spans) {
  if (track.samples.empty()) throw DataError("ground-truth track for '" + track.participant_id + "' is empty");
  int A = track.num_classes();
  for (const auto& s : track.samples) A = std::max(A, s.label_id + 1);
  std::vector<int> out(spans.size(), kNullLabel);
  std::vector<int> counts(static_cast<std::size_t>(A));
  auto by_time = [](const LabelSample& s, double t) { return s.timestamp_s < t; };
  for (std::size_t i = 0; i < spans.size(); ++i) {
    auto first = std::lower_bound(track.samples.begin(), track.samples.end(), spans[i].start_s, by_time);
    auto last = std::lower_bound(first, track.samples.end(), spans[i].end_s, by_time);
    if (first == last) continue;
    std::fill(counts.begin(), counts.end(), 0);
    for (auto it = first; it != last; ++it) {
      if (it->label_id < 0) throw ShapeError("negative label id " + std::to_string(it->label_id));
      ++counts[static_cast<std::size_t>(it->label_id)];
    }
    out[i] = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }
  return out;
}

}  // namespace weakhar

#endif  // WEAKHAR_INGEST_HPP
