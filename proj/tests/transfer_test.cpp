#include <set>

#include <gtest/gtest.h>

#include "weakhar/transfer.hpp"

namespace weakhar {
namespace {

SensorSeries make_series(double seconds, double rate, Index channels = 2, double t0 = 0.0) {
  SensorSeries s;
  s.participant_id = "p";
  s.rate_hz = rate;
  const auto N = static_cast<Index>(std::llround(seconds * rate));
  s.channels.resize(N, channels);
  for (Index i = 0; i < N; ++i) {
    s.timestamps.push_back(t0 + static_cast<double>(i) / rate);
    for (Index d = 0; d < channels; ++d) s.channels(i, d) = static_cast<double>(i * 10 + d);
  }
  return s;
}

WeakLabelSet weak_from(const std::vector<ClipSpan>& spans, const std::vector<int>& labels, const std::vector<bool>& kept) {
  WeakLabelSet w;
  w.participant_id = "p";
  w.spans = spans;
  for (std::size_t i = 0; i < spans.size(); ++i) w.clips.push_back({0, labels[i], kept[i] ? 0.0 : 10.0, kept[i], false});
  return w;
}

TimestepLabels uniform_track(std::size_t n, int label) { return {std::vector<int>(n, label), std::vector<bool>(n, true)}; }

TEST(LabelsToTimesteps, CenterOfRetainedClip) {
  auto spans = WindowingSpec{4.0, 1.0}.spans(6);
  auto weak = weak_from(spans, {1, 2, 3, 4, 5, 6}, std::vector<bool>(6, true));
  auto series = make_series(10.0, 10.0);
  auto track = labels_to_timesteps(weak, series);
  // clip 2 spans [2, 6), center 4.0 = sample 40
  EXPECT_TRUE(track.kept[40]);
  EXPECT_EQ(track.labels[40], 3);
}

TEST(LabelsToTimesteps, OmittedCoverageIsMasked) {
  std::vector<ClipSpan> spans{{0, 4}, {4, 8}};
  auto weak = weak_from(spans, {1, 2}, {true, false});
  auto series = make_series(10.0, 10.0);
  auto track = labels_to_timesteps(weak, series);
  EXPECT_TRUE(track.kept[10]);
  EXPECT_FALSE(track.kept[50]);
  EXPECT_FALSE(track.kept[90]);
}

TEST(LabelsToTimesteps, MatchesNearestCenterScan) {
  Rng rng(4);
  auto spans = WindowingSpec{4.0, 1.0}.spans(40);
  std::vector<int> labels;
  std::vector<bool> kept;
  for (int i = 0; i < 40; ++i) {
    labels.push_back(static_cast<int>(rng.below(5)));
    kept.push_back(rng.uniform() < 0.7);
  }
  auto weak = weak_from(spans, labels, kept);
  auto series = make_series(45.0, 25.0);
  auto track = labels_to_timesteps(weak, series);
  for (std::size_t i = 0; i < series.timestamps.size(); ++i) {
    const double t = series.timestamps[i];
    int best = -1;
    double best_d = INFINITY;
    for (std::size_t k = 0; k < spans.size(); ++k) {
      if (!kept[k] || t < spans[k].start_s || t >= spans[k].end_s) continue;
      double d = std::abs(t - spans[k].center());
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    ASSERT_EQ(track.kept[i], best >= 0) << "t=" << t;
    if (best >= 0) {
      EXPECT_EQ(track.labels[i], labels[static_cast<std::size_t>(best)]) << "t=" << t;
    }
  }
}

TEST(LabelsToTimesteps, DisjointRangesAreAlignmentError) {
  auto weak = weak_from({{0, 4}}, {1}, {true});
  EXPECT_THROW(labels_to_timesteps(weak, make_series(5.0, 10.0, 1, 100.0)), AlignmentError);
}

TEST(MakeWindows, CountAtFiftyHertz) {
  auto series = make_series(10.0, 50.0);
  auto set = make_windows(series, uniform_track(500, 2), {1.0, 0.5}, 4);
  EXPECT_EQ(set.size(), 19);
  EXPECT_EQ(set.features.cols(), 100);
  for (int l : set.labels) EXPECT_EQ(l, 2);
  EXPECT_DOUBLE_EQ(set.class_weights(2), 19.0 / (4.0 * 19.0));
  EXPECT_EQ(set.class_weights(0), 0.0);
  // time-major flattening
  EXPECT_EQ(set.features(1, 0), series.channels(25, 0));
  EXPECT_EQ(set.features(1, 3), series.channels(26, 1));
}

TEST(MakeWindows, MixedWindowTakesMajority) {
  auto series = make_series(1.0, 50.0);
  TimestepLabels track = uniform_track(50, 1);
  for (int i = 0; i < 30; ++i) track.labels[static_cast<std::size_t>(i * 5 / 3 % 50)] = 3;
  int threes = 0;
  for (int l : track.labels) threes += l == 3;
  auto set = make_windows(series, track, {1.0, 0.5}, 4);
  ASSERT_EQ(set.size(), 1);
  EXPECT_EQ(set.labels[0], threes * 2 > 50 ? 3 : 1);
  EXPECT_EQ(threes, 30);
  EXPECT_EQ(set.labels[0], 3);
}

TEST(MakeWindows, DropsMostlyMaskedWindows) {
  auto series = make_series(2.0, 50.0);
  TimestepLabels track = uniform_track(100, 1);
  for (int i = 0; i < 25; ++i) track.kept[static_cast<std::size_t>(i)] = false;  // window 0: exactly half masked
  for (int i = 50; i < 76; ++i) track.kept[static_cast<std::size_t>(i)] = false;  // window 2: 26 of 50 masked
  auto set = make_windows(series, track, {1.0, 0.5}, 2);
  ASSERT_EQ(set.size(), 2);
  EXPECT_EQ(set.spans[0].start_s, 0.0);
  EXPECT_EQ(set.spans[1].start_s, 0.5);
  std::fill(track.kept.begin(), track.kept.end(), false);
  EXPECT_THROW(make_windows(series, track, {1.0, 0.5}, 2), EmptyInputError);
}

TEST(MakeWindows, CountFormulaProperty) {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const double rate = static_cast<double>(10 + rng.below(90));
    const double seconds = 2.0 + static_cast<double>(rng.below(20));
    auto series = make_series(seconds, rate, 1);
    WindowingSpec spec{0.5 + static_cast<double>(rng.below(3)) * 0.5, 0.5};
    auto set = make_windows(series, uniform_track(static_cast<std::size_t>(series.size()), 0), spec, 2);
    const auto W = static_cast<Index>(std::llround(rate * spec.length_s));
    const auto step = static_cast<Index>(std::llround(rate * spec.stride_s));
    EXPECT_EQ(set.size(), (series.size() - W) / step + 1);
  }
}

struct ScenarioFixture {
  SensorSeries series = make_series(60.0, 20.0, 1);
  std::vector<ClipSpan> clips = WindowingSpec{4.0, 1.0}.spans(57);
  LabeledWindowSet full;
  LabeledWindowSet weak;
  std::vector<ClipSpan> annotated;

  ScenarioFixture() {
    TimestepLabels gt = uniform_track(static_cast<std::size_t>(series.size()), 0);
    for (std::size_t i = 0; i < gt.size(); ++i) gt.labels[i] = static_cast<int>(i / 200) % 3;  // 10 s blocks
    full = make_windows(series, gt, {1.0, 0.5}, 3);
    weak = full;
    annotated = {clips[3], clips[20], clips[40]};
  }
};

TEST(BuildScenario, FewShotAndRandomShareBudget) {
  ScenarioFixture f;
  auto few = build_scenario(ScenarioKind::kFewShot, f.full, f.weak, f.annotated, f.clips, 1);
  auto rnd = build_scenario(ScenarioKind::kRandom, f.full, f.weak, f.annotated, f.clips, 7);
  EXPECT_EQ(few.clip_budget, 3u);
  EXPECT_EQ(rnd.clip_budget, few.clip_budget);
  EXPECT_GT(few.size(), 0);
  EXPECT_LT(few.size(), f.full.size());
  for (const auto& s : few.spans) {
    bool hit = false;
    for (const auto& c : f.annotated) hit |= overlaps(s, c);
    EXPECT_TRUE(hit);
  }
}

TEST(BuildScenario, RandomSeedsDrawDifferentClips) {
  ScenarioFixture f;
  Rng a(1), b(2);
  auto da = a.sample_without_replacement(f.clips.size(), 3);
  auto db = b.sample_without_replacement(f.clips.size(), 3);
  EXPECT_EQ(da.size(), db.size());
  EXPECT_NE(da, db);
  auto ra = build_scenario(ScenarioKind::kRandom, f.full, f.weak, f.annotated, f.clips, 1);
  auto rb = build_scenario(ScenarioKind::kRandom, f.full, f.weak, f.annotated, f.clips, 2);
  EXPECT_NE(ra.spans, rb.spans);
  EXPECT_EQ(ra.clip_budget, rb.clip_budget);
}

TEST(BuildScenario, PerfectWeakLabelsMatchFullSupervision) {
  // Clips tile the 10 s activity blocks exactly, so perfect clustering with an
  // oracle yields zero label noise.
  ScenarioFixture f;
  LabelTrack gt_track;
  gt_track.label_names = {"null", "a", "b"};
  for (std::size_t i = 0; i < f.series.timestamps.size(); ++i)
    gt_track.samples.push_back({f.series.timestamps[i], static_cast<int>(i / 200) % 3});
  auto clips = WindowingSpec{2.0, 2.0}.spans(30);
  auto clip_labels = clip_ground_truth(gt_track, clips);
  auto weak_clips = weak_from(clips, clip_labels, std::vector<bool>(clips.size(), true));
  auto weak = make_windows(f.series, labels_to_timesteps(weak_clips, f.series), {1.0, 0.5}, 3);
  auto scenario = build_scenario(ScenarioKind::kWeak, f.full, weak, f.annotated, clips, 0);
  auto full = build_scenario(ScenarioKind::kFullySupervised, f.full, weak, f.annotated, clips, 0);
  std::size_t shared = 0;
  for (std::size_t i = 0; i < scenario.spans.size(); ++i)
    for (std::size_t j = 0; j < full.spans.size(); ++j)
      if (scenario.spans[i] == full.spans[j]) {
        ++shared;
        EXPECT_EQ(scenario.labels[i], full.labels[j]);
      }
  EXPECT_EQ(shared, static_cast<std::size_t>(full.size()));
}

TEST(BuildScenario, UnknownName) { EXPECT_THROW(parse_scenario_kind("semi"), ConfigError); }

TEST(BuildScenario, TighterThresholdGivesSubset) {
  Rng rng(3);
  auto spans = WindowingSpec{4.0, 1.0}.spans(30);
  WeakLabelSet weak;
  weak.spans = spans;
  for (int i = 0; i < 30; ++i) weak.clips.push_back({0, static_cast<int>(rng.below(3)), rng.uniform(0.0, 8.0), true, false});
  auto series = make_series(34.0, 20.0, 1);
  std::set<std::pair<double, double>> previous;
  bool first = true;
  for (double th : {8.0, 6.0, 4.0, 2.0}) {
    apply_threshold(weak, th);
    auto set = make_windows(series, labels_to_timesteps(weak, series), {1.0, 0.5}, 3);
    std::set<std::pair<double, double>> current;
    for (const auto& s : set.spans) current.insert({s.start_s, s.end_s});
    if (!first) {
      for (const auto& s : current) EXPECT_TRUE(previous.contains(s));
    }
    previous = current;
    first = false;
  }
}

TEST(BuildScenario, ManifestCountsPerClass) {
  ScenarioFixture f;
  auto j = scenario_manifest("weak-ce", 4.0, f.full);
  EXPECT_EQ(j["scenario"], "weak-ce");
  EXPECT_EQ(j["threshold"], "4");
  EXPECT_EQ(j["window_counts"].size(), 3u);
}

TEST(NoiseInjection, FlipsRoughlyTheRequestedShare) {
  ScenarioFixture f;
  auto noisy = f.full;
  Rng rng(5);
  inject_symmetric_noise(noisy, 0.3, rng);
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < noisy.labels.size(); ++i) flipped += noisy.labels[i] != f.full.labels[i];
  const double share = static_cast<double>(flipped) / static_cast<double>(noisy.labels.size());
  EXPECT_NEAR(share, 0.3, 0.08);
}

}  // namespace
}  // namespace weakhar
