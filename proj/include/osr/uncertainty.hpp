#ifndef OSR_UNCERTAINTY_HPP
#define OSR_UNCERTAINTY_HPP

#include <span>
#include <vector>

#include <Eigen/Core>

#include "osr/nn.hpp"
#include "osr/perturbation.hpp"

namespace osr {

/// Probabilities are clamped into [kLogitClamp, 1 - kLogitClamp] before the
/// log-odds transform.
inline constexpr double kLogitClamp = 1e-7;

struct UncertaintyRecord {
  Eigen::Index sample_id = 0;
  double mu = 0.0;
};

struct ThresholdConfig {
  double mu_star = 4.5;
};

/// Elementwise log(p) - log(1 - p) after clamping.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Derived::RowsAtCompileTime, Derived::ColsAtCompileTime>
logit_transform(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  const Scalar lo = static_cast<Scalar>(kLogitClamp);
  const Scalar hi = Scalar(1) - lo;
  const auto c = p.derived().array().max(lo).min(hi);
  return (c.log() - (Scalar(1) - c).log()).matrix();
}

/// Norm of the log-odds gap between the averaged member probabilities and the
/// base probabilities. Each component of the member mean is summed in
/// ascending order, making the score invariant to member order.
double uncertainty_from_probs(const Eigen::Ref<const Eigen::VectorXd>& base_probs,
                              std::span<const Eigen::VectorXd> member_probs);

double predictive_uncertainty(const ClassifierModel& model, const PerturbedEnsemble& ensemble,
                              const Eigen::Ref<const Eigen::VectorXd>& x);

/// predictive_uncertainty for every row of X.
Eigen::VectorXd score_uncertainty(const ClassifierModel& model, const PerturbedEnsemble& ensemble,
                                  const Eigen::MatrixXd& X);

std::vector<UncertaintyRecord> make_records(const Eigen::Ref<const Eigen::VectorXd>& mu);

struct ThresholdSplit {
  std::vector<Eigen::Index> rejected;  // mu <= mu_star: flagged unknown
  std::vector<Eigen::Index> passed;    // mu > mu_star: candidates
};

/// Partitions sample ids by mu <= mu_star. Both lists are sorted by id.
ThresholdSplit threshold_split(std::span<const UncertaintyRecord> records,
                               const ThresholdConfig& cfg);

}  // namespace osr

#endif  // OSR_UNCERTAINTY_HPP
