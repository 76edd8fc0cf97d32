#ifndef WEAKHAR_WEAKTRAIN_HPP
#define WEAKHAR_WEAKTRAIN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "weakhar/error.hpp"
#include "weakhar/ingest.hpp"
#include "weakhar/io.hpp"
#include "weakhar/random.hpp"
#include "weakhar/transfer.hpp"

namespace weakhar {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

enum class LossKind { kWeightedCe, kGce, kPhgce };

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "ce" || s == "weighted-ce") return LossKind::kWeightedCe;
  if (s == "gce") return LossKind::kGce;
  if (s == "phgce") return LossKind::kPhgce;
  throw ConfigError("unknown loss '" + std::string(s) + "'");
}

inline std::string loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::kWeightedCe: return "ce";
    case LossKind::kGce: return "gce";
    case LossKind::kPhgce: return "phgce";
  }
  return "?";
}

inline constexpr double kProbFloor = 1e-12;

struct LossSpec {
  LossKind kind = LossKind::kWeightedCe;
  double q = 0.7;      // GCE exponent
  double tau = 10.0;   // bound on |dloss/dp| for PHGCE
  Vector class_weights;  // empty means all ones

  void validate() const {
    if (!(q > 0.0 && q <= 1.0)) throw ConfigError("GCE exponent q must lie in (0, 1]");
    if (!(tau >= 1.0)) throw ConfigError("PHGCE tau must be at least 1");
    if (class_weights.size() > 0 && (class_weights.array() < 0.0).any())
      throw ConfigError("class weights must be non-negative");
  }

  double weight(int label) const { return class_weights.size() > 0 ? class_weights(label) : 1.0; }

  // Probability below which PHGCE is linear: the point where p^(q-1) = tau.
  double pivot() const {
    if (q >= 1.0) return tau > 1.0 ? 0.0 : 1.0;
    return std::pow(tau, 1.0 / (q - 1.0));
  }
};

namespace detail {

inline double gce_value(double p, double q) { return (1.0 - std::pow(p, q)) / q; }

}  // namespace detail

struct LossValue {
  double loss = 0.0;
  double dloss_dp = 0.0;  // derivative with respect to the true-class probability
};

// Unweighted per-sample loss as a function of the true-class probability.
inline LossValue loss_of_probability(const LossSpec& spec, double p) {
  p = std::clamp(p, kProbFloor, 1.0);
  switch (spec.kind) {
    case LossKind::kWeightedCe:
      return {-std::log(p), -1.0 / p};
    case LossKind::kGce:
      return {detail::gce_value(p, spec.q), -std::pow(p, spec.q - 1.0)};
    case LossKind::kPhgce: {
      const double p0 = spec.pivot();
      if (p <= p0) return {-spec.tau * (p - p0) + detail::gce_value(p0, spec.q), -spec.tau};
      return {detail::gce_value(p, spec.q), -std::pow(p, spec.q - 1.0)};
    }
  }
  return {};
}

struct LossGrad {
  double loss = 0.0;
  Vector grad;  // with respect to pre-softmax scores
};

inline Vector softmax(const Vector& scores) {
  Vector e = (scores.array() - scores.maxCoeff()).exp();
  return e / e.sum();
}

// Weighted loss and its gradient through the softmax:
// dL/dz_k = w_y * dL/dp_y * p_y * (1[k=y] - p_k).
inline LossGrad loss_and_grad(const LossSpec& spec, const Vector& probs, int label) {
  if (label < 0 || label >= probs.size())
    throw ShapeError("label " + std::to_string(label) + " outside " + std::to_string(probs.size()) + " classes");
  const double w = spec.weight(label);
  const double p = std::max(probs(label), kProbFloor);
  LossGrad out;
  if (spec.kind == LossKind::kWeightedCe) {
    out.loss = -w * std::log(p);
    out.grad = w * probs;
    out.grad(label) -= w;
    return out;
  }
  const auto v = loss_of_probability(spec, p);
  out.loss = w * v.loss;
  out.grad = -(w * v.dloss_dp * p) * probs;
  out.grad(label) += w * v.dloss_dp * p;
  return out;
}

// ---------------------------------------------------------------------------
// Classifier and optimizer
// ---------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 30;
  double learning_rate = 1e-4;
  double weight_decay = 1e-6;
  double lr_decay = 0.9;
  int lr_step = 10;  // epochs between decays
  int batch_size = 32;
  int hidden_units = 128;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1 || batch_size < 1 || hidden_units < 1 || lr_step < 1)
      throw ConfigError("epochs, batch size, hidden units and decay step must be positive");
    if (!(learning_rate > 0.0) || !(lr_decay > 0.0) || weight_decay < 0.0)
      throw ConfigError("learning rate and decay must be positive");
  }

  // Epochs are 1-based: decay applies after every lr_step completed epochs.
  double learning_rate_at(int epoch) const {
    return learning_rate * std::pow(lr_decay, static_cast<double>((epoch - 1) / lr_step));
  }
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

// One bias-corrected Adam step with decoupled weight decay; step is 1-based.
template <typename P, typename G, typename M>
void adam_update(Eigen::DenseBase<P>& param, const Eigen::DenseBase<G>& grad, Eigen::DenseBase<M>& m1,
                 Eigen::DenseBase<M>& m2, int step, double lr, const AdamOptions& opts) {
  m1.derived() = opts.beta1 * m1.derived().array() + (1.0 - opts.beta1) * grad.derived().array();
  m2.derived() = opts.beta2 * m2.derived().array() + (1.0 - opts.beta2) * grad.derived().array().square();
  const double c1 = 1.0 - std::pow(opts.beta1, step);
  const double c2 = 1.0 - std::pow(opts.beta2, step);
  if (opts.weight_decay > 0.0) param.derived() *= (1.0 - lr * opts.weight_decay);
  param.derived().array() -= lr * (m1.derived().array() / c1) / ((m2.derived().array() / c2).sqrt() + opts.epsilon);
}

// Standardize -> affine -> ReLU -> affine -> softmax.
struct Classifier {
  Eigen::RowVectorXd input_mean;
  Eigen::RowVectorXd input_scale;
  Matrix w1;  // H x F
  Vector b1;
  Matrix w2;  // A x H
  Vector b2;

  Index num_classes() const { return w2.rows(); }

  Matrix scores(const Matrix& x) const {
    Matrix z = ((x.rowwise() - input_mean).array().rowwise() / input_scale.array()).matrix();
    Matrix h = ((z * w1.transpose()).rowwise() + b1.transpose()).cwiseMax(0.0);
    return (h * w2.transpose()).rowwise() + b2.transpose();
  }

  Matrix predict_proba(const Matrix& x) const {
    Matrix s = scores(x);
    for (Index i = 0; i < s.rows(); ++i) {
      s.row(i).array() -= s.row(i).maxCoeff();
      s.row(i) = s.row(i).array().exp();
      s.row(i) /= s.row(i).sum();
    }
    return s;
  }

  std::vector<int> predict(const Matrix& x) const {
    Matrix s = scores(x);
    std::vector<int> out(static_cast<std::size_t>(x.rows()));
    for (Index i = 0; i < s.rows(); ++i) {
      Index best = 0;
      for (Index k = 1; k < s.cols(); ++k)
        if (s(i, k) > s(i, best)) best = k;
      out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
  }
};

struct TrainResult {
  Classifier model;
  std::vector<double> epoch_losses;  // mean weighted loss per epoch
};

inline Classifier init_classifier(Index features, Index hidden, Index classes, Rng& rng) {
  Classifier c;
  c.w1.resize(hidden, features);
  const double s1 = std::sqrt(2.0 / static_cast<double>(features));
  for (Index i = 0; i < c.w1.size(); ++i) c.w1.data()[i] = s1 * rng.normal();
  c.b1 = Vector::Zero(hidden);
  c.w2.resize(classes, hidden);
  const double s2 = std::sqrt(1.0 / static_cast<double>(hidden));
  for (Index i = 0; i < c.w2.size(); ++i) c.w2.data()[i] = s2 * rng.normal();
  c.b2 = Vector::Zero(classes);
  return c;
}

inline TrainResult train_classifier(const LabeledWindowSet& data, const TrainConfig& cfg, const LossSpec& spec) {
  cfg.validate();
  spec.validate();
  if (data.size() == 0) throw EmptyInputError("no training windows for '" + data.provenance + "'");
  if (data.features.rows() != data.size()) throw ShapeError("feature rows do not match labels");
  std::vector<bool> present(static_cast<std::size_t>(data.num_classes), false);
  for (int l : data.labels) {
    if (l < 0 || l >= data.num_classes) throw ShapeError("training label " + std::to_string(l) + " out of range");
    present[static_cast<std::size_t>(l)] = true;
  }
  if (std::count(present.begin(), present.end(), true) < 2)
    throw DataError("training set '" + data.provenance + "' needs at least 2 classes");

  const Index M = data.size();
  const Index F = data.features.cols();
  const Index A = data.num_classes;
  Rng rng(cfg.seed);
  TrainResult result;
  Classifier& net = result.model;
  net = init_classifier(F, cfg.hidden_units, A, rng);
  net.input_mean = data.features.colwise().mean();
  net.input_scale = ((data.features.rowwise() - net.input_mean).colwise().squaredNorm() / static_cast<double>(M))
                        .cwiseSqrt()
                        .cwiseMax(1e-8);
  const Matrix x = (data.features.rowwise() - net.input_mean).array().rowwise() / net.input_scale.array();

  Matrix m_w1 = Matrix::Zero(net.w1.rows(), net.w1.cols()), v_w1 = m_w1;
  Matrix m_w2 = Matrix::Zero(net.w2.rows(), net.w2.cols()), v_w2 = m_w2;
  Vector m_b1 = Vector::Zero(net.b1.size()), v_b1 = m_b1;
  Vector m_b2 = Vector::Zero(net.b2.size()), v_b2 = m_b2;
  const AdamOptions adam{.weight_decay = cfg.weight_decay};

  std::vector<Index> order(static_cast<std::size_t>(M));
  for (Index i = 0; i < M; ++i) order[static_cast<std::size_t>(i)] = i;
  int step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate_at(epoch);
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int batch_index = 0;
    for (Index start = 0; start < M; start += cfg.batch_size, ++batch_index) {
      const Index B = std::min<Index>(cfg.batch_size, M - start);
      Matrix xb(B, F);
      std::vector<int> yb(static_cast<std::size_t>(B));
      for (Index i = 0; i < B; ++i) {
        const Index row = order[static_cast<std::size_t>(start + i)];
        xb.row(i) = x.row(row);
        yb[static_cast<std::size_t>(i)] = data.labels[static_cast<std::size_t>(row)];
      }
      const Matrix pre = (xb * net.w1.transpose()).rowwise() + net.b1.transpose();
      const Matrix hidden = pre.cwiseMax(0.0);
      const Matrix logits = (hidden * net.w2.transpose()).rowwise() + net.b2.transpose();
      Matrix grad_logits(B, A);
      double batch_loss = 0.0;
      for (Index i = 0; i < B; ++i) {
        auto lg = loss_and_grad(spec, softmax(logits.row(i).transpose()), yb[static_cast<std::size_t>(i)]);
        batch_loss += lg.loss;
        grad_logits.row(i) = lg.grad.transpose() / static_cast<double>(B);
      }
      if (!std::isfinite(batch_loss))
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index));
      epoch_loss += batch_loss;

      const Matrix g_w2 = grad_logits.transpose() * hidden;
      const Vector g_b2 = grad_logits.colwise().sum().transpose();
      const Matrix g_hidden = ((grad_logits * net.w2).array() * (pre.array() > 0.0).cast<double>()).matrix();
      const Matrix g_w1 = g_hidden.transpose() * xb;
      const Vector g_b1 = g_hidden.colwise().sum().transpose();

      ++step;
      adam_update(net.w1, g_w1, m_w1, v_w1, step, lr, adam);
      adam_update(net.b1, g_b1, m_b1, v_b1, step, lr, adam);
      adam_update(net.w2, g_w2, m_w2, v_w2, step, lr, adam);
      adam_update(net.b2, g_b2, m_b2, v_b2, step, lr, adam);
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(M));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  Eigen::MatrixXi confusion;  // rows: ground truth, columns: prediction
};

// Macro F1 averages over classes that occur in the ground truth or in the
// predictions; a class with no true positives scores 0.
inline Metrics compute_metrics(const std::vector<int>& truth, const std::vector<int>& predicted, int num_classes) {
  if (truth.size() != predicted.size()) throw ShapeError("truth and prediction lengths differ");
  if (truth.empty()) throw EmptyInputError("no samples to evaluate");
  Metrics m;
  m.confusion = Eigen::MatrixXi::Zero(num_classes, num_classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++m.confusion(truth[i], predicted[i]);
    correct += truth[i] == predicted[i];
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  double f1_sum = 0.0;
  int classes = 0;
  for (int c = 0; c < num_classes; ++c) {
    const double tp = m.confusion(c, c);
    const double actual = m.confusion.row(c).sum();
    const double guessed = m.confusion.col(c).sum();
    if (actual == 0.0 && guessed == 0.0) continue;
    ++classes;
    f1_sum += tp > 0.0 ? 2.0 * tp / (actual + guessed) : 0.0;
  }
  m.macro_f1 = classes > 0 ? f1_sum / classes : 0.0;
  return m;
}

inline Metrics evaluate(const Classifier& model, const LabeledWindowSet& data) {
  if (data.size() == 0) throw EmptyInputError("no evaluation windows");
  return compute_metrics(data.labels, model.predict(data.features), data.num_classes);
}

// "82.47 ($\pm$ 6.03)" for tables; plain text uses the ± sign.
inline std::string format_mean_std(double mean, double stddev, bool latex = true) {
  return io::format_fixed(mean, 2) + (latex ? " ($\\pm$ " : " (± ") + io::format_fixed(stddev, 2) + ")";
}

inline std::string confusion_csv(const Eigen::MatrixXi& confusion, const std::vector<std::string>& names) {
  std::string out = "truth\\predicted";
  for (Index c = 0; c < confusion.cols(); ++c)
    out += ',' + (static_cast<std::size_t>(c) < names.size() ? names[static_cast<std::size_t>(c)] : std::to_string(c));
  out += '\n';
  for (Index r = 0; r < confusion.rows(); ++r) {
    out += static_cast<std::size_t>(r) < names.size() ? names[static_cast<std::size_t>(r)] : std::to_string(r);
    for (Index c = 0; c < confusion.cols(); ++c) out += ',' + std::to_string(confusion(r, c));
    out += '\n';
  }
  return out;
}

}  // namespace weakhar

#endif  // WEAKHAR_WEAKTRAIN_HPP
