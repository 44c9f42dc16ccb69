#include <cmath>
#include <sstream>

#include "doctest.h"

#include "osr/nn.hpp"
#include "test_util.hpp"

using namespace osr;

namespace {

// input 2 -> hidden [1] -> 2 classes with hand-picked weights.
ClassifierModel hand_network() {
  NetworkSpec spec{2, {1}, 2};
  ClassifierModel m = init_network(spec, 0);
  m.params.layers[0].weight << 1.0, -2.0;
  m.params.layers[0].bias << 0.5;
  m.params.layers[1].weight << 2.0, -1.0;
  m.params.layers[1].bias << 0.1, 0.2;
  return m;
}

double param_ref(NetworkParams& p, std::size_t layer, bool bias, Eigen::Index idx, double* set) {
  double& ref = bias ? p.layers[layer].bias[idx] : p.layers[layer].weight.data()[idx];
  if (set) ref = *set;
  return ref;
}

}  // namespace

TEST_CASE("spec validation") {
  CHECK_NOTHROW(NetworkSpec({4, {8}, 2}).validate());
  CHECK_THROWS_AS(NetworkSpec({4, {}, 2}).validate(), InvalidArgument);
  CHECK_THROWS_AS(NetworkSpec({4, {8}, 1}).validate(), InvalidArgument);
  CHECK_THROWS_AS(NetworkSpec({0, {8}, 2}).validate(), InvalidArgument);
  CHECK_THROWS_AS(NetworkSpec({4, {8, 0}, 2}).validate(), InvalidArgument);
}

TEST_CASE("init_network shapes, zero biases and determinism") {
  NetworkSpec spec{2, {3}, 2};
  const ClassifierModel a = init_network(spec, 7);
  REQUIRE(a.params.layers.size() == 2);
  CHECK(a.params.layers[0].weight.rows() == 3);
  CHECK(a.params.layers[0].weight.cols() == 2);
  CHECK(a.params.layers[0].bias.size() == 3);
  CHECK(a.params.layers[1].weight.rows() == 2);
  CHECK(a.params.layers[1].weight.cols() == 3);
  CHECK(a.params.layers[1].bias.size() == 2);
  for (const auto& l : a.params.layers) CHECK(l.bias.isZero(0.0));
  CHECK(a.params.conforms_to(spec));
  CHECK(a.params.identical_to(init_network(spec, 7).params));
  CHECK_FALSE(a.params.identical_to(init_network(spec, 8).params));
}

TEST_CASE("init_network weight scale is sqrt(2/fan_in)") {
  NetworkSpec spec{4, {8, 8}, 3};
  double sum = 0, sq = 0;
  int n = 0;
  for (std::uint64_t s = 0; s < 40; ++s) {
    const ClassifierModel m = init_network(spec, s);
    const Eigen::MatrixXd& w = m.params.layers[0].weight;
    sum += w.sum();
    sq += w.squaredNorm();
    n += static_cast<int>(w.size());
  }
  REQUIRE(n >= 1000);
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  const double target = std::sqrt(2.0 / 4.0);
  CHECK(sd < 3 * target);
  CHECK(sd > target / 3);
  CHECK(sd == doctest::Approx(target).epsilon(0.1));
}

TEST_CASE("softmax normalization and shift invariance") {
  const Eigen::MatrixXd L = test::random_matrix(50, 5, 3, 10.0);
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    const Eigen::VectorXd z = L.row(i).transpose();
    const Eigen::VectorXd p = softmax(z);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-6);
    const Eigen::VectorXd q = softmax((z.array() + 123.25).matrix());
    CHECK((p - q).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("forward: probabilities, zero params, hand network") {
  NetworkSpec spec{3, {4, 5}, 3};
  ClassifierModel m = init_network(spec, 1);
  const Eigen::MatrixXd X = test::random_matrix(20, 3, 2);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const ForwardResult r = forward(m, X.row(i).transpose());
    CHECK(std::abs(r.probs.sum() - 1.0) <= 1e-6);
    CHECK(r.probs.minCoeff() > 0.0);
    CHECK(r.probs.maxCoeff() < 1.0);
    CHECK(r.embedding.size() == 5);
  }

  for (auto& l : m.params.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  const ForwardResult z = forward(m, X.row(0).transpose());
  for (Eigen::Index k = 0; k < 3; ++k) CHECK(z.probs[k] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  const ClassifierModel h = hand_network();
  const ForwardResult r = forward(h, Eigen::Vector2d(3.0, 1.0));
  // hidden = relu(3 - 2 + 0.5) = 1.5; logits = (2 * 1.5 + 0.1, -1.5 + 0.2)
  CHECK(std::abs(r.embedding[0] - 1.5) <= 1e-9);
  CHECK(std::abs(r.logits[0] - 3.1) <= 1e-9);
  CHECK(std::abs(r.logits[1] + 1.3) <= 1e-9);
  CHECK(predict(h, Eigen::Vector2d(3.0, 1.0)) == 1);
  // hidden = relu(0 - 2 + 0.5) = 0; logits = (0.1, 0.2)
  CHECK(predict(h, Eigen::Vector2d(0.0, 1.0)) == 2);

  CHECK_THROWS_AS(forward(h, Eigen::Vector3d(1, 2, 3)), DimensionMismatch);
}

TEST_CASE("batched prediction agrees with single-sample forward") {
  const ClassifierModel m = init_network({6, {16, 8}, 4}, 9);
  const Eigen::MatrixXd X = test::random_matrix(30, 6, 10);
  const Eigen::MatrixXd P = predict_proba(m, X);
  const Eigen::MatrixXd E = embed(m, X);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const ForwardResult r = forward(m, X.row(i).transpose());
    CHECK((P.row(i).transpose().array() == r.probs.array()).all());
    CHECK((E.row(i).transpose().array() == r.embedding.array()).all());
  }
}

TEST_CASE("cross_entropy") {
  CHECK(cross_entropy(Eigen::Vector3d(0, 1, 0), 2) == 0.0);
  CHECK(cross_entropy(Eigen::Vector4d::Constant(0.25), 3) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  const double clamped = cross_entropy(Eigen::Vector2d(1, 0), 2);
  CHECK(std::isfinite(clamped));
  CHECK(clamped <= -std::log(1e-12) + 1e-9);
  CHECK_THROWS_AS(cross_entropy(Eigen::Vector2d(0.5, 0.5), 3), InvalidArgument);
  CHECK_THROWS_AS(cross_entropy(Eigen::Vector2d(0.5, 0.5), 0), InvalidArgument);
}

TEST_CASE("gradients match central finite differences") {
  const ClassifierModel m = init_network({3, {4, 3}, 3}, 21);
  const Eigen::MatrixXd X = test::random_matrix(1, 3, 22);
  const std::vector<ClassId> y{2};
  const NetworkParams g = gradients(m, X, y);
  constexpr double h = 1e-4;
  int probes = 0;
  for (std::size_t l = 0; l < m.params.layers.size(); ++l) {
    for (bool bias : {false, true}) {
      const Eigen::Index n =
          bias ? m.params.layers[l].bias.size() : m.params.layers[l].weight.size();
      for (Eigen::Index i = 0; i < n; ++i) {
        ClassifierModel plus = m, minus = m;
        const double v = param_ref(plus.params, l, bias, i, nullptr);
        double up = v + h, down = v - h;
        param_ref(plus.params, l, bias, i, &up);
        param_ref(minus.params, l, bias, i, &down);
        const double fd = (mean_loss(plus, X, y) - mean_loss(minus, X, y)) / (2 * h);
        NetworkParams gg = g;
        const double an = param_ref(gg, l, bias, i, nullptr);
        const double rel = std::abs(an - fd) / std::max(1e-8, std::max(std::abs(an), std::abs(fd)));
        CHECK_MESSAGE(rel <= 1e-4, "layer " << l << (bias ? " bias " : " weight ") << i);
        ++probes;
      }
    }
  }
  CHECK(probes >= 20);
}

TEST_CASE("duplicated sample gives the single-sample gradient") {
  const ClassifierModel m = init_network({3, {5}, 2}, 4);
  const Eigen::MatrixXd x = test::random_matrix(1, 3, 5);
  Eigen::MatrixXd xx(2, 3);
  xx << x, x;
  const NetworkParams g1 = gradients(m, x, std::vector<ClassId>{1});
  const NetworkParams g2 = gradients(m, xx, std::vector<ClassId>{1, 1});
  for (std::size_t l = 0; l < g1.layers.size(); ++l) {
    CHECK((g1.layers[l].weight - g2.layers[l].weight).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK((g1.layers[l].bias - g2.layers[l].bias).cwiseAbs().maxCoeff() <= 1e-15);
  }
}

TEST_CASE("gradient vanishes after fitting a single sample") {
  ClassifierModel m = init_network({2, {4}, 2}, 3);
  Eigen::MatrixXd x(1, 2);
  x << 1.0, -1.0;
  const std::vector<ClassId> y{2};
  auto grad_norm = [&](const ClassifierModel& model) {
    const NetworkParams g = gradients(model, x, y);
    double norm2 = 0;
    for (const auto& l : g.layers) norm2 += l.weight.squaredNorm() + l.bias.squaredNorm();
    return std::sqrt(norm2);
  };
  const double initial = grad_norm(m);
  m = train(m, x, y, {3000, 1, 1e-2, 1});
  CHECK(grad_norm(m) <= 1e-2 * initial);
  CHECK(mean_loss(m, x, y) <= 1e-2);
}

TEST_CASE("training on separable blobs") {
  Eigen::MatrixXd X;
  std::vector<ClassId> y;
  test::blobs(2, 100, 2, 6.0, 11, X, y);
  const ClassifierModel m0 = init_network({2, {16, 8}, 2}, 1);
  TrainHistory hist;
  const ClassifierModel m = train(m0, X, y, {50, 16, 1e-2, 2}, &hist);
  CHECK(accuracy(m, X, y) >= 0.99);

  REQUIRE(hist.epoch_loss.size() == 50);
  // Loss averaged over consecutive 10-epoch windows does not increase.
  for (std::size_t w = 10; w + 10 <= hist.epoch_loss.size(); w += 10) {
    double prev = 0, cur = 0;
    for (std::size_t i = 0; i < 10; ++i) {
      prev += hist.epoch_loss[w - 10 + i];
      cur += hist.epoch_loss[w + i];
    }
    CHECK(cur <= prev);
  }

  CHECK(train(m0, X, y, {50, 16, 1e-2, 2}).params.identical_to(m.params));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  Eigen::MatrixXd X;
  std::vector<ClassId> y;
  test::blobs(2, 20, 3, 3.0, 5, X, y);
  const ClassifierModel m0 = init_network({3, {4}, 2}, 2);
  const TrainConfig cfg{5, 8, 0.0, 1};
  CHECK(train(m0, X, y, cfg).params.identical_to(m0.params));
}

TEST_CASE("training configuration checks") {
  CHECK_NOTHROW(TrainConfig({200, 256, 0.0001, 0}).validate());
  CHECK_THROWS_AS(TrainConfig({0, 256, 0.0001, 0}).validate(), InvalidArgument);
  CHECK_THROWS_AS(TrainConfig({10, 0, 0.0001, 0}).validate(), InvalidArgument);
  CHECK_THROWS_AS(TrainConfig({10, 8, -0.1, 0}).validate(), InvalidArgument);
  const ClassifierModel m = init_network({2, {3}, 2}, 1);
  CHECK_THROWS(train(m, Eigen::MatrixXd(0, 2), std::vector<ClassId>{}, {1, 1, 0.1, 0}));
  Eigen::MatrixXd X(1, 2);
  X << 1, 2;
  CHECK_THROWS_AS(train(m, X, std::vector<ClassId>{3}, {1, 1, 0.1, 0}), InvalidArgument);
}

TEST_CASE("argmax tie-breaking") {
  CHECK(argmax_class(Eigen::Vector3d(0.1, 0.7, 0.2)) == 2);
  CHECK(argmax_class(Eigen::Vector2d(0.5, 0.5)) == 1);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  ClassifierModel m = init_network({5, {7, 3}, 4}, 77);
  m.train_seed = 1234567890123ULL;
  m.params.layers[0].weight(0, 0) = 0.1 + 0.2;
  std::stringstream ss;
  save_model(ss, m);
  const ClassifierModel back = load_model(ss);
  CHECK(back.spec == m.spec);
  CHECK(back.train_seed == m.train_seed);
  CHECK(back.params.identical_to(m.params));

  std::stringstream bad("osr-model 9\n");
  CHECK_THROWS_AS(load_model(bad), ParseError);
}
