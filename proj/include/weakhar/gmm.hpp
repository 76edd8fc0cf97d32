#ifndef WEAKHAR_GMM_HPP
#define WEAKHAR_GMM_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "weakhar/error.hpp"
#include "weakhar/ingest.hpp"
#include "weakhar/io.hpp"
#include "weakhar/random.hpp"

namespace weakhar {

inline const double kLog2Pi = std::log(2.0 * std::numbers::pi);

struct GmmOptions {
  Index components = 1;
  std::uint64_t seed = 0;
  double reg = 1e-6;  // diagonal loading added after every M-step
  int max_iter = 200;
  double tol = 1e-4;  // relative change of mean log-likelihood
};

// Full-covariance Gaussian mixture. Covariances are kept as lower Cholesky
// factors with cached log-determinants.
struct GmmModel {
  Vector weights;             // C
  Matrix means;               // C x E
  std::vector<Matrix> chols;  // C lower-triangular E x E
  Vector log_dets;            // C
  std::uint64_t seed = 0;
  bool converged = false;
  double final_log_likelihood = 0.0;
  std::vector<double> log_likelihood_history;  // mean log-likelihood per E-step
  int reseeded = 0;

  Index components() const { return weights.size(); }
  Index dim() const { return means.cols(); }
  Matrix covariance(Index c) const {
    const auto& L = chols[static_cast<std::size_t>(c)];
    return L * L.transpose();
  }
};

struct ClusterAssignment {
  std::vector<int> cluster_ids;             // T
  Matrix log_densities;                     // T x C, component log-pdf without the weight
  std::optional<Matrix> responsibilities;   // T x C

  Index size() const { return static_cast<Index>(cluster_ids.size()); }
  Index components() const { return log_densities.cols(); }
};

inline double log_det_from_chol(const Matrix& chol) { return 2.0 * chol.diagonal().array().log().sum(); }

// Log-density of N(mean, L L^T) at x, via forward substitution.
template <typename X, typename M>
double log_pdf(const Eigen::MatrixBase<X>& x, const Eigen::MatrixBase<M>& mean, const Matrix& chol, double log_det) {
  const Index E = chol.rows();
  if (x.size() != E || mean.size() != E || chol.cols() != E)
    throw ShapeError("log_pdf dimension mismatch: x " + std::to_string(x.size()) + ", mean " +
                     std::to_string(mean.size()) + ", factor " + std::to_string(chol.rows()) + "x" +
                     std::to_string(chol.cols()));
  Vector diff(E);
  for (Index i = 0; i < E; ++i) diff(i) = x(i) - mean(i);
  chol.triangularView<Eigen::Lower>().solveInPlace(diff);
  return -0.5 * static_cast<double>(E) * kLog2Pi - 0.5 * log_det - 0.5 * diff.squaredNorm();
}

namespace detail {

// Log-density of every row of data under one component.
inline Vector component_log_density(const Matrix& data, const Eigen::RowVectorXd& mean, const Matrix& chol,
                                    double log_det) {
  Matrix centered = (data.rowwise() - mean).transpose();  // E x T
  chol.triangularView<Eigen::Lower>().solveInPlace(centered);
  const double norm = -0.5 * static_cast<double>(data.cols()) * kLog2Pi - 0.5 * log_det;
  return (norm - 0.5 * centered.colwise().squaredNorm().array()).matrix().transpose();
}

inline Matrix log_density_matrix(const GmmModel& model, const Matrix& data) {
  Matrix out(data.rows(), model.components());
  for (Index c = 0; c < model.components(); ++c)
    out.col(c) = component_log_density(data, model.means.row(c), model.chols[static_cast<std::size_t>(c)],
                                       model.log_dets(c));
  return out;
}

// Row-wise log-sum-exp.
inline Vector log_sum_exp_rows(const Matrix& m) {
  Vector out(m.rows());
  for (Index i = 0; i < m.rows(); ++i) {
    const double hi = m.row(i).maxCoeff();
    if (!std::isfinite(hi)) {
      out(i) = hi;
      continue;
    }
    out(i) = hi + std::log((m.row(i).array() - hi).exp().sum());
  }
  return out;
}

// Factorizes cov + jitter*I, escalating jitter x10 from reg up to 1e6*reg.
// Returns the factor and writes back the loaded covariance.
inline Matrix regularized_cholesky(Matrix& cov, double reg, Index component) {
  const Index E = cov.rows();
  cov = 0.5 * (cov + cov.transpose());
  for (double jitter = reg; jitter <= 1e6 * reg * (1.0 + 1e-12); jitter *= 10.0) {
    Matrix loaded = cov;
    loaded.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(loaded);
    if (llt.info() == Eigen::Success) {
      Matrix L = llt.matrixL();
      if ((L.diagonal().array() > 0.0).all() && L.allFinite()) {
        cov = std::move(loaded);
        return L;
      }
    }
  }
  throw NumericalError("covariance of component " + std::to_string(component) +
                       " is singular even with diagonal loading " + io::format_double(1e6 * reg) + " (E=" +
                       std::to_string(E) + ")");
}

inline std::vector<Index> kmeans_plus_plus(const Matrix& data, Index C, Rng& rng) {
  const Index T = data.rows();
  std::vector<Index> centers;
  centers.reserve(static_cast<std::size_t>(C));
  centers.push_back(static_cast<Index>(rng.below(static_cast<std::uint64_t>(T))));
  Vector dist2 = (data.rowwise() - data.row(centers.back())).rowwise().squaredNorm();
  while (static_cast<Index>(centers.size()) < C) {
    const double total = dist2.sum();
    Index pick = 0;
    if (!(total > 0.0)) {
      pick = static_cast<Index>(rng.below(static_cast<std::uint64_t>(T)));
    } else {
      double target = rng.uniform() * total;
      pick = T - 1;
      for (Index i = 0; i < T; ++i) {
        target -= dist2(i);
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
      while (dist2(pick) == 0.0 && pick > 0) --pick;  // never land on a zero-weight row
    }
    centers.push_back(pick);
    dist2 = dist2.cwiseMin((data.rowwise() - data.row(pick)).rowwise().squaredNorm());
  }
  return centers;
}

inline Vector diagonal_variance(const Matrix& data) {
  Eigen::RowVectorXd mean = data.colwise().mean();
  return (data.rowwise() - mean).colwise().squaredNorm().transpose() / static_cast<double>(data.rows());
}

struct MStepInput {
  const Matrix& data;
  const Matrix& resp;           // T x C
  const Vector& log_likelihood;  // per-row log-sum-exp, used to pick reseed points
  double reg;
  const Vector& init_variance;  // global diagonal variance used for reseeded components
};

// Closed-form M-step. Components with negligible mass are reseeded at the
// rows with the lowest total density.
inline void m_step(GmmModel& model, const MStepInput& in) {
  const Index T = in.data.rows();
  const Index C = in.resp.cols();
  const Index E = in.data.cols();
  Vector mass = in.resp.colwise().sum().transpose();

  std::vector<Index> order;
  for (Index c = 0; c < C; ++c)
    if (mass(c) < 1e-10 * static_cast<double>(T)) order.push_back(c);
  std::vector<Index> worst;
  if (!order.empty()) {
    std::vector<Index> rows(static_cast<std::size_t>(T));
    for (Index i = 0; i < T; ++i) rows[static_cast<std::size_t>(i)] = i;
    std::stable_sort(rows.begin(), rows.end(),
                     [&](Index a, Index b) { return in.log_likelihood(a) < in.log_likelihood(b); });
    worst.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(std::min<Index>(T, Index(order.size()))));
  }

  model.means.resize(C, E);
  model.chols.resize(static_cast<std::size_t>(C));
  model.log_dets.resize(C);
  std::size_t next_reseed = 0;
  for (Index c = 0; c < C; ++c) {
    Matrix cov;
    if (mass(c) < 1e-10 * static_cast<double>(T)) {
      const Index row = worst[std::min(next_reseed++, worst.size() - 1)];
      model.means.row(c) = in.data.row(row);
      cov = in.init_variance.asDiagonal();
      mass(c) = 1.0;
      ++model.reseeded;
    } else {
      model.means.row(c) = (in.resp.col(c).transpose() * in.data) / mass(c);
      Matrix centered = in.data.rowwise() - model.means.row(c);
      cov = (centered.array().colwise() * in.resp.col(c).array()).matrix().transpose() * centered / mass(c);
    }
    model.chols[static_cast<std::size_t>(c)] = regularized_cholesky(cov, in.reg, c);
    model.log_dets(c) = log_det_from_chol(model.chols[static_cast<std::size_t>(c)]);
  }
  model.weights = mass / mass.sum();
}

}  // namespace detail

inline GmmModel fit_gmm(const Matrix& data, const GmmOptions& opts) {
  const Index T = data.rows();
  const Index E = data.cols();
  const Index C = opts.components;
  if (C < 1) throw ConfigError("component count must be at least 1");
  if (C > T) throw ConfigError("component count " + std::to_string(C) + " exceeds clip count " + std::to_string(T));
  if (E < 1) throw ShapeError("data has no features");
  if (!(opts.reg > 0.0)) throw ConfigError("covariance regularization must be positive");
  if (opts.max_iter < 1) throw ConfigError("max_iter must be at least 1");
  if (!data.allFinite()) throw DataError("non-finite value in clustering input");

  Rng rng(opts.seed);
  GmmModel model;
  model.seed = opts.seed;

  const Vector variance = (detail::diagonal_variance(data).array() + opts.reg).matrix();
  auto centers = detail::kmeans_plus_plus(data, C, rng);
  model.weights = Vector::Constant(C, 1.0 / static_cast<double>(C));
  model.means.resize(C, E);
  model.chols.assign(static_cast<std::size_t>(C), Matrix(variance.array().sqrt().matrix().asDiagonal()));
  model.log_dets = Vector::Constant(C, variance.array().log().sum());
  for (Index c = 0; c < C; ++c) model.means.row(c) = data.row(centers[static_cast<std::size_t>(c)]);

  Matrix weighted(T, C);
  for (int iter = 0; iter < opts.max_iter; ++iter) {
    weighted = detail::log_density_matrix(model, data);
    weighted.rowwise() += model.weights.array().log().matrix().transpose();
    const Vector lse = detail::log_sum_exp_rows(weighted);
    const double ll = lse.mean();
    if (!std::isfinite(ll)) throw NumericalError("log-likelihood became non-finite at iteration " + std::to_string(iter));
    const bool have_prev = !model.log_likelihood_history.empty();
    const double prev = have_prev ? model.log_likelihood_history.back() : 0.0;
    model.log_likelihood_history.push_back(ll);
    model.final_log_likelihood = ll;
    if (have_prev && std::abs(ll - prev) <= opts.tol * std::abs(prev)) {
      model.converged = true;
      break;
    }
    if (iter + 1 == opts.max_iter) break;
    const Matrix resp = (weighted.colwise() - lse).array().exp().matrix();
    detail::m_step(model, {data, resp, lse, opts.reg, variance});
  }
  return model;
}

// MAP hard assignment; ties go to the smallest component index.
inline ClusterAssignment assign_clusters(const GmmModel& model, const Matrix& data, bool with_responsibilities = false) {
  if (data.cols() != model.dim())
    throw ShapeError("data dimension " + std::to_string(data.cols()) + " does not match model dimension " +
                     std::to_string(model.dim()));
  ClusterAssignment out;
  out.log_densities = detail::log_density_matrix(model, data);
  Matrix weighted = out.log_densities;
  weighted.rowwise() += model.weights.array().log().matrix().transpose();
  out.cluster_ids.resize(static_cast<std::size_t>(data.rows()));
  for (Index t = 0; t < data.rows(); ++t) {
    Index best = 0;
    for (Index c = 1; c < weighted.cols(); ++c)
      if (weighted(t, c) > weighted(t, best)) best = c;
    out.cluster_ids[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  if (with_responsibilities) {
    const Vector lse = detail::log_sum_exp_rows(weighted);
    out.responsibilities = (weighted.colwise() - lse).array().exp().matrix();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: "WGMM", u32 version, u32 C, u32 E, weights, means (row-major),
// full Cholesky factors (row-major), then seed, converged flag, final
// log-likelihood and the per-iteration history. All reals are binary64 LE.
// ---------------------------------------------------------------------------

inline constexpr char kGmmMagic[4] = {'W', 'G', 'M', 'M'};
inline constexpr std::uint32_t kGmmVersion = 1;

inline std::string encode_gmm(const GmmModel& m) {
  io::ByteWriter w;
  w.bytes(std::string_view(kGmmMagic, 4));
  w.u32(kGmmVersion);
  w.u32(static_cast<std::uint32_t>(m.components()));
  w.u32(static_cast<std::uint32_t>(m.dim()));
  for (Index c = 0; c < m.components(); ++c) w.f64(m.weights(c));
  for (Index c = 0; c < m.components(); ++c)
    for (Index j = 0; j < m.dim(); ++j) w.f64(m.means(c, j));
  for (const auto& L : m.chols)
    for (Index i = 0; i < m.dim(); ++i)
      for (Index j = 0; j < m.dim(); ++j) w.f64(L(i, j));
  w.u64(m.seed);
  w.u32(m.converged ? 1u : 0u);
  w.f64(m.final_log_likelihood);
  w.u32(static_cast<std::uint32_t>(m.reseeded));
  w.u32(static_cast<std::uint32_t>(m.log_likelihood_history.size()));
  for (double v : m.log_likelihood_history) w.f64(v);
  return w.str();
}

inline GmmModel decode_gmm(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(kGmmMagic, 4))
    throw FormatError("bad magic: not a WGMM model file");
  io::ByteReader r(bytes);
  r.take(4);
  if (auto v = r.u32(); v != kGmmVersion) throw FormatError("unsupported WGMM version " + std::to_string(v));
  const auto C = static_cast<Index>(r.u32());
  const auto E = static_cast<Index>(r.u32());
  GmmModel m;
  m.weights.resize(C);
  for (Index c = 0; c < C; ++c) m.weights(c) = r.f64();
  m.means.resize(C, E);
  for (Index c = 0; c < C; ++c)
    for (Index j = 0; j < E; ++j) m.means(c, j) = r.f64();
  m.chols.assign(static_cast<std::size_t>(C), Matrix(E, E));
  m.log_dets.resize(C);
  for (Index c = 0; c < C; ++c) {
    auto& L = m.chols[static_cast<std::size_t>(c)];
    for (Index i = 0; i < E; ++i)
      for (Index j = 0; j < E; ++j) L(i, j) = r.f64();
    m.log_dets(c) = log_det_from_chol(L);
  }
  m.seed = r.u64();
  m.converged = r.u32() != 0;
  m.final_log_likelihood = r.f64();
  m.reseeded = static_cast<int>(r.u32());
  m.log_likelihood_history.resize(r.u32());
  for (auto& v : m.log_likelihood_history) v = r.f64();
  if (r.remaining() != 0) throw FormatError("trailing bytes after WGMM model");
  return m;
}

inline void save_gmm(const std::filesystem::path& path, const GmmModel& m) { io::write_file(path, encode_gmm(m)); }
inline GmmModel load_gmm(const std::filesystem::path& path) { return decode_gmm(io::read_file(path)); }

}  // namespace weakhar

#endif  // WEAKHAR_GMM_HPP
