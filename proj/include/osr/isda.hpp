#ifndef OSR_ISDA_HPP
#define OSR_ISDA_HPP

// Stage-1 unknown detector: subclass discriminant analysis over GMM soft
// subclass assignments, followed by a two-class Gaussian naive Bayes head on
// the projected features. Binary labels: 0 = known, 1 = unknown.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "osr/common.hpp"
#include "osr/gmm.hpp"

namespace osr {

enum class FeatureSource { embedding, raw };

std::string_view to_string(FeatureSource source);
FeatureSource parse_feature_source(std::string_view text);

struct GnbModel {
  Eigen::Vector2d priors;
  Eigen::MatrixXd means;      // 2 x d
  Eigen::MatrixXd variances;  // 2 x d, smoothing already added
  double epsilon = 0.0;

  Eigen::Index dim() const { return means.cols(); }
};

/// Fits per-class means and variances; adds var_smoothing times the largest
/// per-dimension variance of Z to every variance.
GnbModel fit_gnb(const Eigen::MatrixXd& Z, std::span<const int> labels,
                 double var_smoothing = 1e-9);

/// log P(c) + sum_j log N(z_j | mean_cj, var_cj) for c = 0, 1.
Eigen::Vector2d gnb_joint_log_likelihood(const GnbModel& gnb,
                                         const Eigen::Ref<const Eigen::VectorXd>& z);

Eigen::Vector2d gnb_posterior(const GnbModel& gnb, const Eigen::Ref<const Eigen::VectorXd>& z);

struct ScatterMatrices {
  Eigen::MatrixXd within;
  Eigen::MatrixXd between;
};

/// Soft within/between-subclass scatter. Row i of `resp` holds sample i's
/// memberships over every subclass; subclasses with total mass below 1e-8 are
/// dropped. Both results are exactly symmetric.
ScatterMatrices scatter_matrices(const Eigen::MatrixXd& X, const Eigen::MatrixXd& resp);

/// Top-d generalized eigenvectors of S_b v = lambda (S_w + gamma I) v, unit
/// columns ordered by decreasing eigenvalue, sign fixed so each column's
/// largest-magnitude entry is positive. d is clipped to the feature dimension.
Eigen::MatrixXd fit_projection(const Eigen::MatrixXd& within, const Eigen::MatrixXd& between,
                               double gamma, Eigen::Index d);

struct IsdaConfig {
  int h1 = 2;  // subclasses of the unknown pool
  int h2 = 1;  // subclasses per known class
  /// Relative ridge: the projection uses gamma * trace(S_w) / dim.
  double gamma = 1e-4;
  std::uint64_t seed = 0;
  FeatureSource feature_source = FeatureSource::embedding;

  void validate() const;
};

struct IsdaModel {
  int h1 = 0;
  int h2 = 0;
  std::vector<int> subclass_counts;  // per known class (ascending id), then unknown pool
  Eigen::MatrixXd projection;        // feature_dim x d
  GnbModel gnb;
  FeatureSource feature_source = FeatureSource::embedding;

  Eigen::Index feature_dim() const { return projection.rows(); }
  int total_subclasses() const;
};

struct IsdaPrediction {
  int label = 0;
  double posterior_unknown = 0.0;
};

/// `labels` are binary (0 known, 1 unknown). `class_ids` carries the original
/// class of every known sample; entries for unknown samples are ignored.
IsdaModel fit_isda(const Eigen::MatrixXd& X, std::span<const int> labels,
                   std::span<const ClassId> class_ids, const IsdaConfig& config);

/// Ties in the posterior resolve to known (0).
IsdaPrediction predict_isda(const IsdaModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

void save_isda(std::ostream& os, const IsdaModel& model);
IsdaModel load_isda(std::istream& is);

}  // namespace osr

#endif  // OSR_ISDA_HPP
