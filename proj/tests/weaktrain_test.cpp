#include <cmath>

#include <gtest/gtest.h>

#include "weakhar/weaktrain.hpp"

namespace weakhar {
namespace {

LossSpec spec_of(LossKind kind, double q = 0.7, double tau = 10.0) {
  LossSpec s;
  s.kind = kind;
  s.q = q;
  s.tau = tau;
  return s;
}

// Central differences of loss(softmax(z)) with respect to z.
Vector numeric_grad(const LossSpec& spec, const Vector& z, int label) {
  Vector g(z.size());
  const double h = 1e-6;
  for (Index k = 0; k < z.size(); ++k) {
    Vector zp = z, zm = z;
    zp(k) += h;
    zm(k) -= h;
    g(k) = (loss_and_grad(spec, softmax(zp), label).loss - loss_and_grad(spec, softmax(zm), label).loss) / (2 * h);
  }
  return g;
}

TEST(Loss, KnownValues) {
  EXPECT_NEAR(loss_of_probability(spec_of(LossKind::kWeightedCe), 0.5).loss, std::log(2.0), 1e-12);
  EXPECT_NEAR(loss_of_probability(spec_of(LossKind::kGce), 1.0).loss, 0.0, 1e-12);
  EXPECT_NEAR(loss_of_probability(spec_of(LossKind::kGce), 0.25).loss, (1 - std::pow(0.25, 0.7)) / 0.7, 1e-12);
  // q = 1 gives the mean absolute error 1 - p.
  EXPECT_NEAR(loss_of_probability(spec_of(LossKind::kGce, 1.0), 0.3).loss, 0.7, 1e-12);
}

TEST(Loss, GceApproachesCeForSmallQ) {
  const auto spec = spec_of(LossKind::kGce, 1e-6);
  for (double p : {0.01, 0.2, 0.9}) EXPECT_NEAR(loss_of_probability(spec, p).loss, -std::log(p), 1e-4);
}

TEST(Loss, PhgcePivotWhereSlopeEqualsTau) {
  const auto spec = spec_of(LossKind::kPhgce);
  const double p0 = spec.pivot();
  EXPECT_NEAR(p0, std::pow(10.0, -1.0 / 0.3), 1e-15);
  EXPECT_NEAR(std::pow(p0, spec.q - 1.0), spec.tau, 1e-9);
  EXPECT_EQ(spec_of(LossKind::kPhgce, 1.0).pivot(), 0.0);
}

TEST(Loss, PhgceMatchesGceAbovePivotAndIsContinuous) {
  const auto ph = spec_of(LossKind::kPhgce);
  const auto g = spec_of(LossKind::kGce);
  const double p0 = ph.pivot();
  for (double p : {p0 * 1.0001, 0.01, 0.3, 0.99}) EXPECT_DOUBLE_EQ(loss_of_probability(ph, p).loss, loss_of_probability(g, p).loss);
  EXPECT_NEAR(loss_of_probability(ph, p0 * (1 - 1e-9)).loss, loss_of_probability(ph, p0 * (1 + 1e-9)).loss, 1e-9);
}

TEST(Loss, PhgceGradientBoundedAndBelowGce) {
  const auto ph = spec_of(LossKind::kPhgce);
  const auto g = spec_of(LossKind::kGce);
  for (double p = 1e-12; p < 1.0; p *= 1.7) {
    const auto v = loss_of_probability(ph, p);
    EXPECT_LE(std::abs(v.dloss_dp), ph.tau + 1e-9) << p;
    // GCE is convex in p, so its tangent at the pivot lies underneath it.
    EXPECT_LE(v.loss, loss_of_probability(g, p).loss + 1e-12) << p;
  }
  EXPECT_GT(std::abs(loss_of_probability(g, 1e-8).dloss_dp), ph.tau);
}

TEST(Loss, GradientsMatchFiniteDifferences) {
  Rng rng(3);
  for (auto kind : {LossKind::kWeightedCe, LossKind::kGce, LossKind::kPhgce}) {
    auto spec = spec_of(kind);
    spec.class_weights = Vector::Constant(4, 1.0);
    spec.class_weights(2) = 2.5;
    for (int trial = 0; trial < 20; ++trial) {
      Vector z(4);
      for (Index k = 0; k < 4; ++k) z(k) = rng.normal(0.0, 3.0);
      const int label = static_cast<int>(rng.below(4));
      const auto analytic = loss_and_grad(spec, softmax(z), label).grad;
      const auto numeric = numeric_grad(spec, z, label);
      EXPECT_LT((analytic - numeric).cwiseAbs().maxCoeff(), 1e-5) << loss_kind_name(kind) << " trial " << trial;
    }
  }
}

TEST(Loss, PhgceGradientInLinearRegion) {
  auto spec = spec_of(LossKind::kPhgce);
  Vector z(3);
  z << 20.0, 0.0, 0.0;  // p_2 ~ 2e-9, far below the pivot
  const Vector p = softmax(z);
  const auto lg = loss_and_grad(spec, p, 2);
  for (Index k = 0; k < 3; ++k) EXPECT_NEAR(lg.grad(k), -spec.tau * p(2) * ((k == 2) - p(k)), 1e-15);
}

TEST(Loss, WeightScalesLossAndGradient) {
  Vector z(3);
  z << 0.3, -1.0, 0.5;
  for (auto kind : {LossKind::kWeightedCe, LossKind::kGce, LossKind::kPhgce}) {
    auto unit = spec_of(kind);
    auto weighted = unit;
    weighted.class_weights = Vector::Constant(3, 3.0);
    const auto a = loss_and_grad(unit, softmax(z), 1);
    const auto b = loss_and_grad(weighted, softmax(z), 1);
    EXPECT_NEAR(b.loss, 3.0 * a.loss, 1e-12);
    EXPECT_LT((b.grad - 3.0 * a.grad).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Loss, RejectsBadParameters) {
  EXPECT_THROW(spec_of(LossKind::kGce, 0.0).validate(), ConfigError);
  EXPECT_THROW(spec_of(LossKind::kGce, 1.5).validate(), ConfigError);
  EXPECT_THROW(spec_of(LossKind::kPhgce, 0.7, 0.5).validate(), ConfigError);
  EXPECT_THROW(parse_loss_kind("hinge"), ConfigError);
  EXPECT_EQ(parse_loss_kind("phgce"), LossKind::kPhgce);
}

TEST(Schedule, DecaysEveryTenEpochs) {
  TrainConfig cfg;
  for (int e = 1; e <= 10; ++e) EXPECT_DOUBLE_EQ(cfg.learning_rate_at(e), 1e-4);
  for (int e = 11; e <= 20; ++e) EXPECT_DOUBLE_EQ(cfg.learning_rate_at(e), 1e-4 * 0.9);
  for (int e = 21; e <= 30; ++e) EXPECT_NEAR(cfg.learning_rate_at(e), 1e-4 * 0.81, 1e-18);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  Vector param(3), grad(3);
  param << 1.0, -2.0, 0.5;
  grad << 0.3, -5.0, 1e-3;
  Vector m = Vector::Zero(3), v = Vector::Zero(3);
  const Vector before = param;
  adam_update(param, grad, m, v, 1, 0.01, AdamOptions{});
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(param(i), before(i) - 0.01 * (grad(i) > 0 ? 1.0 : -1.0), 1e-6);
}

TEST(Adam, DecoupledDecayShrinksWithZeroGradient) {
  Vector param(2);
  param << 4.0, -1.0;
  Vector m = Vector::Zero(2), v = Vector::Zero(2);
  adam_update(param, Vector::Zero(2), m, v, 1, 0.1, AdamOptions{.weight_decay = 0.5});
  EXPECT_DOUBLE_EQ(param(0), 4.0 * 0.95);
  EXPECT_DOUBLE_EQ(param(1), -0.95);
}

LabeledWindowSet blobs(int per_class, int classes, Index dim, double spread, std::uint64_t seed) {
  Rng rng(seed);
  LabeledWindowSet s;
  s.num_classes = classes;
  s.features.resize(per_class * classes, dim);
  Index row = 0;
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per_class; ++i, ++row) {
      for (Index d = 0; d < dim; ++d) s.features(row, d) = (d % classes == c ? 5.0 : 0.0) + rng.normal(0.0, spread) + 100.0;
      s.labels.push_back(c);
    }
  s.class_weights = Vector::Ones(classes);
  s.provenance = "blobs";
  return s;
}

TEST(Train, SeparableDataIsLearned) {
  const auto train = blobs(150, 3, 6, 0.5, 1);
  const auto test = blobs(100, 3, 6, 0.5, 2);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.epochs = 10;
  for (auto kind : {LossKind::kWeightedCe, LossKind::kGce, LossKind::kPhgce}) {
    auto spec = spec_of(kind);
    const auto result = train_classifier(train, cfg, spec);
    EXPECT_GE(evaluate(result.model, test).accuracy, 0.99) << loss_kind_name(kind);
    EXPECT_LT(result.epoch_losses.back(), result.epoch_losses.front());
  }
}

TEST(Train, DeterministicForSeed) {
  const auto data = blobs(40, 3, 4, 1.0, 5);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 9;
  const auto a = train_classifier(data, cfg, spec_of(LossKind::kPhgce));
  const auto b = train_classifier(data, cfg, spec_of(LossKind::kPhgce));
  EXPECT_EQ(a.model.w1, b.model.w1);
  EXPECT_EQ(a.model.w2, b.model.w2);
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  cfg.seed = 10;
  const auto c = train_classifier(data, cfg, spec_of(LossKind::kPhgce));
  EXPECT_NE(a.model.w1, c.model.w1);
}

TEST(Train, ProbabilitiesAreNormalized) {
  const auto data = blobs(20, 4, 5, 1.0, 6);
  TrainConfig cfg;
  cfg.epochs = 2;
  const auto r = train_classifier(data, cfg, spec_of(LossKind::kWeightedCe));
  const Matrix p = r.model.predict_proba(data.features);
  for (Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
  EXPECT_TRUE((p.array() >= 0.0).all());
}

TEST(Train, RejectsDegenerateInput) {
  auto data = blobs(10, 2, 3, 1.0, 7);
  TrainConfig cfg;
  for (auto& l : data.labels) l = 1;
  EXPECT_THROW(train_classifier(data, cfg, LossSpec{}), DataError);
  LabeledWindowSet empty;
  empty.num_classes = 2;
  EXPECT_THROW(train_classifier(empty, cfg, LossSpec{}), EmptyInputError);
  cfg.epochs = 0;
  EXPECT_THROW(train_classifier(blobs(10, 2, 3, 1.0, 7), cfg, LossSpec{}), ConfigError);
}

TEST(Metrics, ConstantPredictorOnBalancedBinary) {
  const auto m = compute_metrics({0, 0, 1, 1}, {0, 0, 0, 0}, 2);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.5);
  EXPECT_NEAR(m.macro_f1, 1.0 / 3.0, 1e-12);
  EXPECT_EQ(m.confusion(0, 0), 2);
  EXPECT_EQ(m.confusion(1, 0), 2);
  EXPECT_EQ(m.confusion(0, 1), 0);
}

TEST(Metrics, PerfectPredictionIgnoresUnseenClasses) {
  const auto m = compute_metrics({0, 2, 2, 1}, {0, 2, 2, 1}, 5);
  EXPECT_DOUBLE_EQ(m.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(m.macro_f1, 1.0);
}

TEST(Metrics, MacroF1AgainstHandCount) {
  // class 0: tp 1, fp 1, fn 1 -> 0.5; class 1: tp 2, fp 1, fn 0 -> 0.8; class 2: tp 0 -> 0
  const auto m = compute_metrics({0, 0, 1, 1, 2}, {0, 1, 1, 1, 0}, 3);
  EXPECT_NEAR(m.macro_f1, (0.5 + 0.8 + 0.0) / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.6);
}

TEST(Format, MeanStdCell) {
  EXPECT_EQ(format_mean_std(82.4702, 6.0349), "82.47 ($\\pm$ 6.03)");
  EXPECT_EQ(format_mean_std(66.08, 9.53, false), "66.08 (± 9.53)");
}

TEST(Format, ConfusionCsvRowsAreTruth) {
  Eigen::MatrixXi c(2, 2);
  c << 3, 1, 0, 2;
  EXPECT_EQ(confusion_csv(c, {"walk", "run"}), "truth\\predicted,walk,run\nwalk,3,1\nrun,0,2\n");
}

}  // namespace
}  // namespace weakhar
