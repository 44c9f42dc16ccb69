#ifndef OSR_GMM_HPP
#define OSR_GMM_HPP

#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Core>

#include "osr/common.hpp"

namespace osr {

inline constexpr double kGmmVarianceFloor = 1e-6;

/// Diagonal-covariance Gaussian mixture. Row h of `means` and `variances`
/// describes component h.
struct GmmModel {
  Eigen::VectorXd weights;
  Eigen::MatrixXd means;
  Eigen::MatrixXd variances;

  Eigen::Index num_components() const { return weights.size(); }
  Eigen::Index dim() const { return means.cols(); }
};

struct GmmOptions {
  int max_iterations = 100;
  double tolerance = 1e-6;
  double variance_floor = kGmmVarianceFloor;
};

/// EM fit. Means are seeded by D^2-weighted farthest-point sampling from the
/// rows of X, weights start uniform and variances at the per-dimension data
/// variance. When `ll_trace` is given it receives the log-likelihood evaluated
/// at the start of every iteration.
GmmModel fit_gmm(const Eigen::MatrixXd& X, int num_components, std::uint64_t seed,
                 const GmmOptions& options = {}, std::vector<double>* ll_trace = nullptr);

/// Per-component log(weight * density) of x.
Eigen::VectorXd component_log_densities(const GmmModel& gmm,
                                        const Eigen::Ref<const Eigen::VectorXd>& x);

/// Posterior component memberships of x.
Eigen::VectorXd responsibilities(const GmmModel& gmm, const Eigen::Ref<const Eigen::VectorXd>& x);

/// One row of memberships per row of X.
Eigen::MatrixXd responsibility_matrix(const GmmModel& gmm, const Eigen::MatrixXd& X);

double log_likelihood(const GmmModel& gmm, const Eigen::MatrixXd& X);

void save_gmm(std::ostream& os, const GmmModel& gmm);
GmmModel load_gmm(std::istream& is);

}  // namespace osr

#endif  // OSR_GMM_HPP
