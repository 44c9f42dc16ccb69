#include "osr/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

namespace osr {
namespace {

void check_ensemble(const ClassifierModel& model, const PerturbedEnsemble& ensemble) {
  if (ensemble.members.empty()) throw InvalidArgument("uncertainty: empty ensemble");
  if (!(ensemble.base.spec == model.spec)) {
    throw DimensionMismatch("uncertainty: ensemble was built from a different architecture");
  }
  for (const auto& m : ensemble.members) {
    if (!m.same_shape(model.params)) {
      throw DimensionMismatch("uncertainty: ensemble member shape differs from the model");
    }
  }
}

// Each component is summed in ascending order, so the mean depends only on
// the multiset of member predictions.
Eigen::VectorXd canonical_mean(std::span<const Eigen::VectorXd> member_probs, Eigen::Index k) {
  Eigen::VectorXd mean(k);
  std::vector<double> column(member_probs.size());
  for (Eigen::Index c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < member_probs.size(); ++i) column[i] = member_probs[i][c];
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (double v : column) sum += v;
    mean[c] = sum / static_cast<double>(column.size());
  }
  return mean;
}

double score_one(const ClassifierModel& model, const PerturbedEnsemble& ensemble,
                 const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::VectorXd base = forward(model, x).probs;
  std::vector<Eigen::VectorXd> probs;
  probs.reserve(ensemble.members.size());
  for (const auto& member : ensemble.members) probs.push_back(forward(model.spec, member, x).probs);
  const Eigen::VectorXd mean = canonical_mean(probs, base.size());
  return (logit_transform(mean) - logit_transform(base)).norm();
}

}  // namespace

double uncertainty_from_probs(const Eigen::Ref<const Eigen::VectorXd>& base_probs,
                              std::span<const Eigen::VectorXd> member_probs) {
  if (member_probs.empty()) throw InvalidArgument("uncertainty: no member predictions");
  for (const auto& p : member_probs) {
    if (p.size() != base_probs.size()) {
      throw DimensionMismatch("uncertainty: member prediction length differs from base");
    }
  }
  const Eigen::VectorXd mean = canonical_mean(member_probs, base_probs.size());
  return (logit_transform(mean) - logit_transform(base_probs)).norm();
}

double predictive_uncertainty(const ClassifierModel& model, const PerturbedEnsemble& ensemble,
                              const Eigen::Ref<const Eigen::VectorXd>& x) {
  check_ensemble(model, ensemble);
  return score_one(model, ensemble, x);
}

Eigen::VectorXd score_uncertainty(const ClassifierModel& model, const PerturbedEnsemble& ensemble,
                                  const Eigen::MatrixXd& X) {
  check_ensemble(model, ensemble);
  if (X.cols() != model.spec.input_dim) {
    throw DimensionMismatch("uncertainty: feature width does not match input_dim");
  }
  Eigen::VectorXd mu(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) mu[i] = score_one(model, ensemble, X.row(i).transpose());
  return mu;
}

std::vector<UncertaintyRecord> make_records(const Eigen::Ref<const Eigen::VectorXd>& mu) {
  std::vector<UncertaintyRecord> out;
  out.reserve(static_cast<std::size_t>(mu.size()));
  for (Eigen::Index i = 0; i < mu.size(); ++i) out.push_back({i, mu[i]});
  return out;
}

ThresholdSplit threshold_split(std::span<const UncertaintyRecord> records,
                               const ThresholdConfig& cfg) {
  if (!std::isfinite(cfg.mu_star)) throw InvalidArgument("threshold: mu_star must be finite");
  std::unordered_set<Eigen::Index> seen;
  ThresholdSplit split;
  for (const auto& r : records) {
    if (!seen.insert(r.sample_id).second) {
      throw InvalidArgument("threshold: duplicate sample_id " + std::to_string(r.sample_id));
    }
    (r.mu <= cfg.mu_star ? split.rejected : split.passed).push_back(r.sample_id);
  }
  std::sort(split.rejected.begin(), split.rejected.end());
  std::sort(split.passed.begin(), split.passed.end());
  return split;
}

}  // namespace osr
