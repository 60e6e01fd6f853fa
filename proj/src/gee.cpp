#include "gfqi/gee.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gfqi/reduce.hpp"

namespace gfqi {

double clamp_exchangeable_rho(double rho, int cluster_size) {
  if (cluster_size < 2) return 0.0;
  const double lo = -1.0 / (cluster_size - 1) + kRhoClampMargin;
  const double hi = 1.0 - kRhoClampMargin;
  if (std::isnan(rho)) return 0.0;
  return std::clamp(rho, lo, hi);
}

WorkingCorrelation WorkingCorrelation::exchangeable(double rho, int cluster_size) {
  return {CorrelationKind::exchangeable, clamp_exchangeable_rho(rho, cluster_size)};
}

Eigen::MatrixXd WorkingCorrelation::matrix(int m) const {
  if (kind == CorrelationKind::identity || m < 2) return Eigen::MatrixXd::Identity(m, m);
  Eigen::MatrixXd c = Eigen::MatrixXd::Constant(m, m, rho);
  c.diagonal().setOnes();
  return c;
}

Eigen::MatrixXd WorkingCorrelation::inverse_matrix(int m) const {
  if (kind == CorrelationKind::identity || m < 2) return Eigen::MatrixXd::Identity(m, m);
  const double shrink = rho / (1.0 + (m - 1) * rho);
  Eigen::MatrixXd inv = Eigen::MatrixXd::Constant(m, m, -shrink);
  inv.diagonal().array() += 1.0;
  return inv / (1.0 - rho);
}

double WorkingCorrelation::condition(int m) const {
  if (kind == CorrelationKind::identity || m < 2) return 1.0;
  const double a = 1.0 - rho;
  const double b = 1.0 + (m - 1) * rho;
  return std::max(a, b) / std::min(a, b);
}

Eigen::MatrixXd WorkingCovariance::assemble() const {
  const int m = cluster_size();
  return sigma.asDiagonal() * correlation.matrix(m) * sigma.asDiagonal();
}

void WorkingCovariance::validate() const {
  if (sigma.size() < 1) throw InputError("working covariance needs at least one member");
  for (Eigen::Index j = 0; j < sigma.size(); ++j) {
    if (!(sigma[j] > 0.0) || !std::isfinite(sigma[j])) {
      throw InputError("working covariance sigma entries must be finite and > 0");
    }
  }
  if (correlation.kind == CorrelationKind::exchangeable && cluster_size() >= 2) {
    const double lo = -1.0 / (cluster_size() - 1);
    if (!(correlation.rho > lo && correlation.rho < 1.0)) {
      throw InputError("exchangeable rho outside the positive-definite range");
    }
  }
}

TdBatch td_residuals(const Design& design, const Eigen::VectorXd& beta_eval,
                     const Eigen::VectorXd& beta_target, double gamma) {
  if (beta_eval.size() != design.dim) throw InputError("beta_eval has the wrong length");
  TdBatch td;
  td.cluster_size = design.cluster_size;
  td.residuals = design.rewards + gamma * max_next_q(design, beta_target) - design.current * beta_eval;
  return td;
}

TdBatch td_residuals(const Dataset& data, const FeatureMap& map, const Eigen::VectorXd& beta_eval,
                     const Eigen::VectorXd& beta_target, double gamma) {
  return td_residuals(build_design(data, map), beta_eval, beta_target, gamma);
}

namespace {

// Mean over blocks of the average pairwise product e_j e_k, j < k.
double mean_pair_product(const Eigen::VectorXd& e, int m, int n_blocks) {
  const double pairs = 0.5 * m * (m - 1);
  double total = pairwise_reduce(0, n_blocks, kReduceLeafBlocks, [&](std::ptrdiff_t lo, std::ptrdiff_t hi) {
    double s = 0.0;
    for (std::ptrdiff_t b = lo; b < hi; ++b) {
      const auto blk = e.segment(b * m, m);
      const double sum = blk.sum();
      s += 0.5 * (sum * sum - blk.squaredNorm());
    }
    return s;
  });
  return total / (pairs * n_blocks);
}

double mean_square(const Eigen::VectorXd& e, int m, int n_blocks) {
  double total = pairwise_reduce(0, n_blocks, kReduceLeafBlocks, [&](std::ptrdiff_t lo, std::ptrdiff_t hi) {
    return e.segment(lo * m, (hi - lo) * m).squaredNorm();
  });
  return total / (static_cast<double>(n_blocks) * m);
}

CovarianceEstimate estimate_pooled(const Eigen::VectorXd& e, int m, CorrelationKind kind) {
  const int n_blocks = static_cast<int>(e.size()) / m;
  if (n_blocks < 1) throw InputError("no TD residual blocks");
  CovarianceEstimate est;
  est.sigma2 = mean_square(e, m, n_blocks);
  double sigma = std::sqrt(est.sigma2);
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    est.warnings.push_back("TD residual variance is zero; using unit-scale identity covariance");
    est.covariance = {Eigen::VectorXd::Ones(m), WorkingCorrelation::identity()};
    return est;
  }
  est.covariance.sigma = Eigen::VectorXd::Constant(m, sigma);
  if (kind == CorrelationKind::identity) return est;
  if (m < 2) {
    est.warnings.push_back("cluster size < 2: exchangeable correlation degenerates to identity");
    return est;
  }
  if (n_blocks < 2) throw InputError("exchangeable estimation needs at least 2 blocks");
  est.rho_raw = mean_pair_product(e, m, n_blocks) / est.sigma2;
  est.covariance.correlation = WorkingCorrelation::exchangeable(est.rho_raw, m);
  return est;
}

}  // namespace

CovarianceEstimate estimate_exchangeable(const TdBatch& td) {
  return estimate_pooled(td.residuals, td.cluster_size, CorrelationKind::exchangeable);
}

CovarianceEstimate estimate_identity(const TdBatch& td) {
  return estimate_pooled(td.residuals, td.cluster_size, CorrelationKind::identity);
}

CovarianceEstimate estimate_standardized(const TdBatch& td, const Eigen::VectorXd& row_sigma,
                                         CorrelationKind kind) {
  if (row_sigma.size() != td.residuals.size()) throw InputError("row sigma length mismatch");
  const Eigen::VectorXd e = td.residuals.cwiseQuotient(row_sigma);
  CovarianceEstimate est = estimate_pooled(e, td.cluster_size, kind);
  // Scale of the standardized residuals is carried by row_sigma.
  est.covariance.sigma = Eigen::VectorXd::Ones(td.cluster_size);
  return est;
}

Eigen::VectorXd estimate_sigma_regression(const Design& design, const TdBatch& td) {
  const Eigen::VectorXd sq = td.residuals.array().square();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design.current);
  const Eigen::VectorXd coef = qr.solve(sq);
  Eigen::VectorXd var = design.current * coef;
  return var.cwiseMax(1e-6).cwiseSqrt();
}

CovarianceInverse invert_covariance(const WorkingCovariance& cov) {
  cov.validate();
  const int m = cov.cluster_size();
  CovarianceInverse out;
  const double ratio = cov.sigma.maxCoeff() / cov.sigma.minCoeff();
  const double bound = ratio * ratio * cov.correlation.condition(m);
  if (bound <= kMaxCondition) {
    const Eigen::VectorXd inv_sigma = cov.sigma.cwiseInverse();
    out.inverse = inv_sigma.asDiagonal() * cov.correlation.inverse_matrix(m) * inv_sigma.asDiagonal();
    out.condition = bound;  // exact when sigma is constant
    if (ratio != 1.0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov.assemble(), Eigen::EigenvaluesOnly);
      out.condition = es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff();
    }
    return out;
  }
  Eigen::MatrixXd v = cov.assemble();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  out.condition = lmin > 0.0 ? es.eigenvalues().maxCoeff() / lmin : std::numeric_limits<double>::infinity();
  if (out.condition <= kMaxCondition) {
    out.inverse = v.ldlt().solve(Eigen::MatrixXd::Identity(m, m));
    return out;
  }
  v.diagonal().array() += 1e-8 * v.trace() / m;
  out.inverse = v.ldlt().solve(Eigen::MatrixXd::Identity(m, m));
  out.jittered = true;
  return out;
}

BlockInstrument BlockInstrument::from_blocks(const std::vector<Eigen::MatrixXd>& blocks) {
  if (blocks.empty()) throw InputError("instrument needs at least one block");
  BlockInstrument z;
  z.cluster_size = static_cast<int>(blocks.front().cols());
  const Eigen::Index d = blocks.front().rows();
  z.stacked.resize(static_cast<Eigen::Index>(blocks.size()) * z.cluster_size, d);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b].rows() != d || blocks[b].cols() != z.cluster_size) {
      throw InputError("instrument blocks must all be d x M");
    }
    z.stacked.middleRows(static_cast<Eigen::Index>(b) * z.cluster_size, z.cluster_size) = blocks[b].transpose();
  }
  return z;
}

BlockInstrument weight_instrument(const Eigen::MatrixXd& feature_rows, const Eigen::MatrixXd& v_inverse,
                                  int cluster_size) {
  BlockInstrument z;
  z.cluster_size = cluster_size;
  z.stacked.resize(feature_rows.rows(), feature_rows.cols());
  const Eigen::Index n_blocks = feature_rows.rows() / cluster_size;
  for (Eigen::Index b = 0; b < n_blocks; ++b) {
    z.stacked.middleRows(b * cluster_size, cluster_size).noalias() =
        v_inverse * feature_rows.middleRows(b * cluster_size, cluster_size);
  }
  return z;
}

BlockInstrument weight_instrument(const Eigen::MatrixXd& feature_rows, const Eigen::VectorXd& row_sigma,
                                  const WorkingCorrelation& correlation, int cluster_size,
                                  int* jittered_blocks) {
  BlockInstrument z;
  z.cluster_size = cluster_size;
  z.stacked.resize(feature_rows.rows(), feature_rows.cols());
  const Eigen::Index n_blocks = feature_rows.rows() / cluster_size;
  int jittered = 0;
  for (Eigen::Index b = 0; b < n_blocks; ++b) {
    const WorkingCovariance cov{row_sigma.segment(b * cluster_size, cluster_size), correlation};
    const auto inv = invert_covariance(cov);
    jittered += inv.jittered ? 1 : 0;
    z.stacked.middleRows(b * cluster_size, cluster_size).noalias() =
        inv.inverse * feature_rows.middleRows(b * cluster_size, cluster_size);
  }
  if (jittered_blocks) *jittered_blocks = jittered;
  return z;
}

double condition_number(const Eigen::MatrixXd& a) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& s = svd.singularValues();
  if (s.size() == 0) return std::numeric_limits<double>::infinity();
  const double smin = s[s.size() - 1];
  if (!(smin > 0.0)) return std::numeric_limits<double>::infinity();
  return s[0] / smin;
}

Eigen::MatrixXd blockwise_cross(const Eigen::MatrixXd& z, const Eigen::MatrixXd& x, int cluster_size) {
  if (z.rows() != x.rows()) throw InputError("blockwise_cross row mismatch");
  const std::ptrdiff_t n_blocks = z.rows() / cluster_size;
  return pairwise_reduce(0, n_blocks, kReduceLeafBlocks, [&](std::ptrdiff_t lo, std::ptrdiff_t hi) {
    const Eigen::Index r0 = lo * cluster_size;
    const Eigen::Index nr = (hi - lo) * cluster_size;
    return Eigen::MatrixXd(z.middleRows(r0, nr).transpose() * x.middleRows(r0, nr));
  });
}

EquationSolution solve_estimating_equation(const Design& design, const BlockInstrument& instrument,
                                           const Eigen::VectorXd& beta_target, double gamma) {
  if (instrument.stacked.rows() != design.rows() || instrument.stacked.cols() != design.dim ||
      instrument.cluster_size != design.cluster_size) {
    throw InputError("instrument shape does not match the design");
  }
  const Eigen::VectorXd response = design.rewards + gamma * max_next_q(design, beta_target);
  const Eigen::MatrixXd a = blockwise_cross(instrument.stacked, design.current, design.cluster_size);
  const Eigen::VectorXd rhs = blockwise_cross(instrument.stacked, response, design.cluster_size);
  EquationSolution sol;
  sol.condition = condition_number(a);
  if (!(sol.condition <= kMaxCondition)) {
    throw SingularSystemError("estimating-equation matrix is singular or ill-conditioned (cond = " +
                                  std::to_string(sol.condition) + ")",
                              sol.condition);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  sol.beta = qr.solve(rhs);
  sol.rhs_norm = rhs.norm();
  sol.residual_norm = (a * sol.beta - rhs).norm();
  return sol;
}

EquationSolution solve_estimating_equation(const Dataset& data, const FeatureMap& map,
                                           const BlockInstrument& instrument,
                                           const Eigen::VectorXd& beta_target, double gamma) {
  return solve_estimating_equation(build_design(data, map), instrument, beta_target, gamma);
}

}  // namespace gfqi
