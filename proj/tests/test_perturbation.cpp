#include <cmath>
#include <random>

#include "doctest.h"

#include "osr/perturbation.hpp"
#include "test_util.hpp"

using namespace osr;

TEST_CASE("layer_sigma arithmetic") {
  const Eigen::Vector3d theta(1, 2, 3);
  CHECK(population_std(theta) == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-12));
  CHECK(std::abs(layer_sigma(theta, 2.0) - 1.632993) < 1e-6);
  CHECK(layer_sigma(theta, 0.0) == 0.0);
  CHECK(layer_sigma(Eigen::VectorXd::Constant(5, 3.7), 4.0) == 0.0);
  CHECK_THROWS_AS(layer_sigma(Eigen::VectorXd(0), 1.0), InvalidArgument);
  CHECK_THROWS_AS(layer_sigma(theta, -1.0), InvalidArgument);
}

TEST_CASE("layer_sigma is homogeneous in lambda") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int t = 0; t < 100; ++t) {
    const Eigen::VectorXd theta = test::random_matrix(17 + t, 1, 100 + t, 2.5);
    const double c = u(rng);
    CHECK(layer_sigma(theta, c) == c * layer_sigma(theta, 1.0));
  }
}

TEST_CASE("flatten_layer orders weights row-major then bias") {
  DenseLayer l{Eigen::MatrixXd(2, 2), Eigen::VectorXd(2)};
  l.weight << 1, 2, 3, 4;
  l.bias << 5, 6;
  const Eigen::VectorXd f = flatten_layer(l);
  REQUIRE(f.size() == 6);
  for (int i = 0; i < 6; ++i) CHECK(f[i] == i + 1);
}

TEST_CASE("sample_layer_noise") {
  CHECK(sample_layer_noise(10, 0.0, 5).isZero(0.0));
  const Eigen::VectorXd a = sample_layer_noise(100000, 1.0, 42);
  const double mean = a.mean();
  const double sd = std::sqrt((a.array() - mean).square().mean());
  CHECK(std::abs(mean) <= 0.02);
  CHECK(sd >= 0.98);
  CHECK(sd <= 1.02);
  CHECK((sample_layer_noise(1000, 1.0, 42).array() == a.head(1000).array()).all());
  CHECK_FALSE((sample_layer_noise(1000, 1.0, 43).array() == a.head(1000).array()).all());
}

TEST_CASE("noise stream seeds differ across members and layers") {
  CHECK(noise_stream_seed(1, 0, 0) != noise_stream_seed(1, 1, 0));
  CHECK(noise_stream_seed(1, 0, 0) != noise_stream_seed(1, 0, 1));
  CHECK(noise_stream_seed(1, 0, 0) != noise_stream_seed(2, 0, 0));
  CHECK(noise_stream_seed(1, 3, 2) == noise_stream_seed(1, 3, 2));
}

TEST_CASE("make_ensemble: zero scale, shapes, determinism, base untouched") {
  const ClassifierModel m = init_network({4, {6, 5}, 3}, 8);
  const ClassifierModel copy = m;

  const PerturbedEnsemble zero = make_ensemble(m, {5, 0.0, 1});
  REQUIRE(zero.size() == 5);
  for (const auto& p : zero.members) CHECK(p.identical_to(m.params));

  const PerturbedEnsemble e = make_ensemble(m, {9, 4.0, 77});
  REQUIRE(e.size() == 9);
  for (const auto& p : e.members) {
    CHECK(p.same_shape(m.params));
    CHECK_FALSE(p.identical_to(m.params));
  }
  CHECK(m.params.identical_to(copy.params));
  const PerturbedEnsemble again = make_ensemble(m, {9, 4.0, 77});
  for (std::size_t i = 0; i < e.size(); ++i) CHECK(e.members[i].identical_to(again.members[i]));
  // Members are independent of how many are requested.
  const PerturbedEnsemble fewer = make_ensemble(m, {3, 4.0, 77});
  for (std::size_t i = 0; i < fewer.size(); ++i) CHECK(fewer.members[i].identical_to(e.members[i]));

  CHECK_THROWS_AS(make_ensemble(m, {0, 1.0, 1}), InvalidArgument);
  CHECK_THROWS_AS(make_ensemble(m, {3, -0.5, 1}), InvalidArgument);
}

TEST_CASE("member noise matches the per-layer sigma") {
  const ClassifierModel m = init_network({20, {30}, 4}, 1);
  const double lambda = 0.5;
  const PerturbedEnsemble e = make_ensemble(m, {1, lambda, 5});
  for (std::size_t l = 0; l < m.params.layers.size(); ++l) {
    const Eigen::VectorXd base = flatten_layer(m.params.layers[l]);
    const Eigen::VectorXd diff = flatten_layer(e.members[0].layers[l]) - base;
    const double sigma = layer_sigma(base, lambda);
    const double sd = std::sqrt(diff.squaredNorm() / static_cast<double>(diff.size()));
    CHECK(sd == doctest::Approx(sigma).epsilon(0.15));
  }
}

TEST_CASE("ensemble mean converges to the base parameters") {
  const ClassifierModel m = init_network({3, {4}, 2}, 2);
  const double lambda = 1.0;
  const PerturbedEnsemble e = make_ensemble(m, {500, lambda, 9});
  for (std::size_t l = 0; l < m.params.layers.size(); ++l) {
    const Eigen::VectorXd base = flatten_layer(m.params.layers[l]);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(base.size());
    for (const auto& p : e.members) mean += flatten_layer(p.layers[l]);
    mean /= 500.0;
    const double bound = 4.0 * layer_sigma(base, lambda) / std::sqrt(500.0);
    CHECK((mean - base).cwiseAbs().maxCoeff() <= bound);
  }
}

TEST_CASE("mean deviation shrinks as 1/sqrt(B)") {
  const ClassifierModel m = init_network({8, {16}, 3}, 4);
  const Eigen::VectorXd base = flatten_layer(m.params.layers[0]);
  const double sigma = layer_sigma(base, 1.0);
  double previous = 0.0;
  for (int b : {10, 100, 1000}) {
    const PerturbedEnsemble e = make_ensemble(m, {b, 1.0, 13});
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(base.size());
    for (const auto& p : e.members) mean += flatten_layer(p.layers[0]);
    mean /= static_cast<double>(b);
    const double rms = std::sqrt((mean - base).squaredNorm() / static_cast<double>(base.size()));
    const double scaled = rms * std::sqrt(static_cast<double>(b)) / sigma;
    CHECK(scaled > 0.7);
    CHECK(scaled < 1.3);
    if (previous > 0.0) CHECK(rms < previous);
    previous = rms;
  }
}
