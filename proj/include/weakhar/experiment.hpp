#ifndef WEAKHAR_EXPERIMENT_HPP
#define WEAKHAR_EXPERIMENT_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "weakhar/annotate.hpp"
#include "weakhar/error.hpp"
#include "weakhar/eval.hpp"
#include "weakhar/parallel.hpp"
#include "weakhar/transfer.hpp"
#include "weakhar/weaktrain.hpp"

namespace weakhar {

// Training regime plus loss and threshold, e.g. "weak-phgce-t4".
struct ScenarioSpec {
  std::string name;
  ScenarioKind kind = ScenarioKind::kWeak;
  LossKind loss = LossKind::kWeightedCe;
  double threshold = kNoThreshold;
};

inline ScenarioSpec parse_scenario(std::string_view text) {
  std::string s(io::trim(text));
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  ScenarioSpec out;
  auto strip = [&](std::string_view suffix) {
    if (s.size() > suffix.size() && s.ends_with(suffix) && s[s.size() - suffix.size() - 1] == '-') {
      s.resize(s.size() - suffix.size() - 1);
      return true;
    }
    return false;
  };
  if (auto dash = s.rfind("-t"); dash != std::string::npos && dash + 2 < s.size() &&
                                 s.find_first_not_of("0123456789.", dash + 2) == std::string::npos) {
    out.threshold = parse_threshold(s.substr(dash + 2));
    s.resize(dash);
  }
  if (strip("phgce")) out.loss = LossKind::kPhgce;
  else if (strip("gce")) out.loss = LossKind::kGce;
  else strip("ce");
  try {
    out.kind = parse_scenario_kind(s);
  } catch (const ConfigError&) {
    throw ConfigError("unknown scenario '" + std::string(text) + "'");
  }
  if (out.kind != ScenarioKind::kWeak && !std::isinf(out.threshold))
    throw ConfigError("scenario '" + std::string(text) + "': thresholds apply to weak labels only");
  out.name = scenario_kind_name(out.kind);
  if (out.kind != ScenarioKind::kFullySupervised || out.loss != LossKind::kWeightedCe) out.name += "-" + loss_kind_name(out.loss);
  if (!std::isinf(out.threshold)) out.name += "-t" + io::format_double(out.threshold);
  return out;
}

// Everything the training stage needs from one participant.
struct ParticipantData {
  std::string participant_id;
  SensorSeries series;
  LabeledWindowSet full_gt;
  WeakLabelSet weak;                  // distances kept; thresholds applied per scenario
  std::vector<ClipSpan> annotated;    // centroid clip spans
};

inline ParticipantData prepare_participant(SensorSeries series, const LabelTrack& gt, WeakLabelSet weak,
                                           const WindowingSpec& window, int num_classes) {
  ParticipantData p;
  p.participant_id = series.participant_id;
  p.full_gt = make_windows(series, ground_truth_timesteps(gt, series), window, num_classes, "ground-truth");
  for (std::size_t i = 0; i < weak.clips.size(); ++i)
    if (weak.clips[i].is_centroid) p.annotated.push_back(weak.spans[i]);
  p.weak = std::move(weak);
  p.series = std::move(series);
  return p;
}

inline LabeledWindowSet weak_windows(const ParticipantData& p, double threshold, const WindowingSpec& window) {
  WeakLabelSet w = p.weak;
  apply_threshold(w, threshold);
  return make_windows(p.series, labels_to_timesteps(w, p.series), window, p.full_gt.num_classes, "weak");
}

struct ExperimentOptions {
  WindowingSpec window{1.0, 0.5};
  TrainConfig train;
  double q = 0.7;
  double tau = 10.0;
  double label_noise = 0.0;  // symmetric noise injected into weak training labels
  int clusters = 0;          // reported only
  int jobs = 1;
};

struct ScenarioRow {
  std::string scenario;
  int clusters = 0;
  double threshold = kNoThreshold;
  std::uint64_t seed = 0;
  std::string participant;  // held-out test participant
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  Eigen::MatrixXi confusion;
  Index train_windows = 0;
  std::size_t budget = 0;
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ull + salt + 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// The training set of a scenario built from every participant except `held_out`.
inline LabeledWindowSet scenario_training_set(const std::vector<ParticipantData>& participants,
                                              const std::map<std::tuple<std::size_t, double>, LabeledWindowSet>& weak,
                                              const ScenarioSpec& scenario, std::size_t held_out, std::uint64_t seed,
                                              double label_noise) {
  std::vector<LabeledWindowSet> parts;
  for (std::size_t i = 0; i < participants.size(); ++i) {
    if (i == held_out) continue;
    const auto& p = participants[i];
    const auto& w = weak.at({i, scenario.threshold});
    parts.push_back(build_scenario(scenario.kind, p.full_gt, w, p.annotated, p.weak.spans, mix_seed(seed, i)));
  }
  auto set = concat_windows(parts, scenario.name);
  if (scenario.kind == ScenarioKind::kWeak && label_noise > 0.0) {
    Rng rng(mix_seed(seed, 0x6e6f697365ull + held_out));
    inject_symmetric_noise(set, label_noise, rng);
    set.class_weights = inverse_frequency_weights(set.labels, set.num_classes);
  }
  return set;
}

// Leave-one-participant-out: each participant is tested on its ground-truth
// windows after training on the scenario's data from all others.
inline std::vector<ScenarioRow> run_scenarios(const std::vector<ParticipantData>& participants,
                                              const std::vector<ScenarioSpec>& scenarios,
                                              const std::vector<std::uint64_t>& seeds, const ExperimentOptions& opts) {
  if (participants.size() < 2) throw ConfigError("leave-one-participant-out needs at least 2 participants");
  if (scenarios.empty()) throw ConfigError("no scenarios configured");
  if (seeds.empty()) throw ConfigError("at least one seed is required");

  std::map<std::tuple<std::size_t, double>, LabeledWindowSet> weak;
  for (const auto& s : scenarios)
    for (std::size_t i = 0; i < participants.size(); ++i)
      if (!weak.contains({i, s.threshold})) weak[{i, s.threshold}] = weak_windows(participants[i], s.threshold, opts.window);

  const std::size_t P = participants.size();
  std::vector<ScenarioRow> rows(scenarios.size() * seeds.size() * P);
  run_jobs(rows.size(), opts.jobs, [&](std::size_t job) {
    const auto& scenario = scenarios[job / (seeds.size() * P)];
    const auto seed = seeds[(job / P) % seeds.size()];
    const std::size_t test = job % P;
    const auto train_set = scenario_training_set(participants, weak, scenario, test, seed, opts.label_noise);
    LossSpec loss;
    loss.kind = scenario.loss;
    loss.q = opts.q;
    loss.tau = opts.tau;
    loss.class_weights = train_set.class_weights;
    TrainConfig cfg = opts.train;
    cfg.seed = seed;
    const auto model = train_classifier(train_set, cfg, loss).model;
    const auto m = evaluate(model, participants[test].full_gt);
    rows[job] = {scenario.name, opts.clusters, scenario.threshold, seed, participants[test].participant_id,
                 m.accuracy, m.macro_f1, m.confusion, train_set.size(), train_set.clip_budget};
  });
  return rows;
}

// scenario,C,threshold,seed,participant,accuracy,macro_f1
inline std::string metrics_csv(const std::vector<ScenarioRow>& rows) {
  std::string out = "scenario,C,threshold,seed,participant,accuracy,macro_f1\n";
  for (const auto& r : rows)
    out += r.scenario + ',' + std::to_string(r.clusters) + ',' + threshold_name(r.threshold) + ',' + std::to_string(r.seed) +
           ',' + r.participant + ',' + io::format_double(r.accuracy) + ',' + io::format_double(r.macro_f1) + '\n';
  return out;
}

struct ScenarioSummary {
  std::string scenario;
  Aggregate accuracy;  // across seed means of held-out accuracy
  Aggregate macro_f1;
  Eigen::MatrixXi confusion;  // summed over seeds and participants
};

// Scenario order follows first appearance in rows. Each seed contributes its
// participant-averaged score; deviations are across seeds.
inline std::vector<ScenarioSummary> summarize_scenarios(const std::vector<ScenarioRow>& rows) {
  std::vector<ScenarioSummary> out;
  std::map<std::string, std::map<std::uint64_t, std::pair<std::vector<double>, std::vector<double>>>> scores;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& s) { return s.scenario == r.scenario; });
    if (it == out.end()) {
      out.push_back({r.scenario, {}, {}, Eigen::MatrixXi::Zero(r.confusion.rows(), r.confusion.cols())});
      it = std::prev(out.end());
    }
    it->confusion += r.confusion;
    auto& [acc, f1] = scores[r.scenario][r.seed];
    acc.push_back(r.accuracy);
    f1.push_back(r.macro_f1);
  }
  for (auto& s : out) {
    std::vector<double> acc, f1;
    for (const auto& [seed, v] : scores[s.scenario]) {
      acc.push_back(aggregate(v.first).mean);
      f1.push_back(aggregate(v.second).mean);
    }
    s.accuracy = aggregate(acc);
    s.macro_f1 = aggregate(f1);
  }
  return out;
}

inline std::string scenario_table(const std::vector<ScenarioSummary>& summary) {
  std::string out = "scenario\tAcc\tF1\n";
  for (const auto& s : summary)
    out += s.scenario + '\t' + format_mean_std(100.0 * s.accuracy.mean, 100.0 * s.accuracy.stddev, false) + '\t' +
           format_mean_std(100.0 * s.macro_f1.mean, 100.0 * s.macro_f1.stddev, false) + '\n';
  return out;
}

}  // namespace weakhar

#endif  // WEAKHAR_EXPERIMENT_HPP
