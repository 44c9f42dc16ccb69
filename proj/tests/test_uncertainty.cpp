#include <algorithm>
#include <cmath>

#include "doctest.h"

#include "osr/uncertainty.hpp"
#include "test_util.hpp"

using namespace osr;

TEST_CASE("logit_transform values") {
  const Eigen::Vector3d g = logit_transform(Eigen::Vector3d(0.5, 0.9, 1.0));
  CHECK(g[0] == 0.0);
  CHECK(std::abs(g[1] - std::log(9.0)) < 1e-12);
  CHECK(std::abs(g[1] - 2.197225) < 1e-6);
  CHECK(std::isfinite(g[2]));
  CHECK(std::abs(g[2] - 16.1181) < 1e-4);
  CHECK(logit_transform(Eigen::Vector2d(0.0, 1.0)).allFinite());
}

TEST_CASE("zero noise gives zero uncertainty") {
  const ClassifierModel m = init_network({5, {8, 4}, 3}, 1);
  const PerturbedEnsemble e = make_ensemble(m, {4, 0.0, 2});
  const Eigen::MatrixXd X = test::random_matrix(100, 5, 3);
  const Eigen::VectorXd mu = score_uncertainty(m, e, X);
  CHECK(mu.cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("single perturbed member on a hand network") {
  // input 2 -> hidden [1] -> 2 classes; the member shifts the second output
  // bias by +1, so the logit gap shrinks from 4.4 to 3.4.
  ClassifierModel m = init_network({2, {1}, 2}, 0);
  m.params.layers[0].weight << 1.0, -2.0;
  m.params.layers[0].bias << 0.5;
  m.params.layers[1].weight << 2.0, -1.0;
  m.params.layers[1].bias << 0.1, 0.2;
  NetworkParams member = m.params;
  member.layers[1].bias << 0.1, 1.2;
  const PerturbedEnsemble e{m, {member}, {1, 0.0, 0}};
  // For two classes g(p_1) equals the logit gap and g(p_2) its negation.
  const double expected = std::sqrt(2.0) * (4.4 - 3.4);
  CHECK(std::abs(predictive_uncertainty(m, e, Eigen::Vector2d(3.0, 1.0)) - expected) <= 1e-6);
}

TEST_CASE("uncertainty is invariant to member order") {
  const ClassifierModel m = init_network({4, {10}, 3}, 6);
  PerturbedEnsemble e = make_ensemble(m, {7, 1.5, 3});
  const Eigen::MatrixXd X = test::random_matrix(25, 4, 8);
  const Eigen::VectorXd mu = score_uncertainty(m, e, X);
  CHECK(mu.minCoeff() >= 0.0);
  CHECK(mu.allFinite());
  std::reverse(e.members.begin(), e.members.end());
  std::rotate(e.members.begin(), e.members.begin() + 3, e.members.end());
  const Eigen::VectorXd mu2 = score_uncertainty(m, e, X);
  CHECK((mu.array() == mu2.array()).all());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    CHECK(predictive_uncertainty(m, e, X.row(i).transpose()) == mu[i]);
}

TEST_CASE("uncertainty_from_probs") {
  const Eigen::Vector2d base(0.5, 0.5);
  std::vector<Eigen::VectorXd> members{Eigen::Vector2d(0.9, 0.1), Eigen::Vector2d(0.1, 0.9)};
  CHECK(uncertainty_from_probs(base, members) == 0.0);
  members = {Eigen::Vector2d(0.9, 0.1)};
  CHECK(uncertainty_from_probs(base, members) ==
        doctest::Approx(std::sqrt(2.0) * std::log(9.0)).epsilon(1e-12));
  CHECK_THROWS_AS(uncertainty_from_probs(base, std::vector<Eigen::VectorXd>{}), InvalidArgument);
  members = {Eigen::Vector3d(0.2, 0.3, 0.5)};
  CHECK_THROWS_AS(uncertainty_from_probs(base, members), DimensionMismatch);
}

TEST_CASE("dimension mismatch is rejected") {
  const ClassifierModel m = init_network({4, {6}, 2}, 1);
  const PerturbedEnsemble e = make_ensemble(m, {2, 0.1, 1});
  CHECK_THROWS_AS(score_uncertainty(m, e, Eigen::MatrixXd::Zero(3, 5)), DimensionMismatch);
  const ClassifierModel other = init_network({4, {7}, 2}, 1);
  CHECK_THROWS_AS(score_uncertainty(other, e, Eigen::MatrixXd::Zero(3, 4)), DimensionMismatch);
}

TEST_CASE("threshold_split boundary and extremes") {
  const Eigen::Vector3d mu(4.4, 4.5, 4.6);
  const auto records = make_records(mu);
  const ThresholdSplit s = threshold_split(records, {4.5});
  CHECK(s.rejected == std::vector<Eigen::Index>{0, 1});
  CHECK(s.passed == std::vector<Eigen::Index>{2});
  CHECK(threshold_split(records, {1.0}).rejected.empty());
  CHECK(threshold_split(records, {9.0}).passed.empty());

  std::vector<UncertaintyRecord> dup{{0, 1.0}, {0, 2.0}};
  CHECK_THROWS_AS(threshold_split(dup, {1.5}), InvalidArgument);
}

TEST_CASE("threshold_split is monotone in the threshold") {
  const Eigen::VectorXd mu = test::random_matrix(200, 1, 4).cwiseAbs() * 5.0;
  const auto records = make_records(mu);
  std::vector<Eigen::Index> previous;
  for (double t = 0.0; t <= 15.0; t += 0.5) {
    const ThresholdSplit s = threshold_split(records, {t});
    CHECK(s.rejected.size() + s.passed.size() == records.size());
    CHECK(std::includes(s.rejected.begin(), s.rejected.end(), previous.begin(), previous.end()));
    previous = s.rejected;
  }
}
