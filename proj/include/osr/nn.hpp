#ifndef OSR_NN_HPP
#define OSR_NN_HPP

// Multilayer perceptron classifier: affine + ReLU blocks with a softmax head.
// Layer weights are stored as (out x in) so a layer maps x to W x + b.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "osr/common.hpp"

namespace osr {

struct NetworkSpec {
  Eigen::Index input_dim = 0;
  std::vector<Eigen::Index> hidden_dims{128, 64};
  int num_classes = 2;

  /// Throws InvalidArgument if any dimension is non-positive, hidden_dims is
  /// empty, or num_classes < 2.
  void validate() const;

  Eigen::Index embedding_dim() const { return hidden_dims.back(); }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

struct DenseLayer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;

  Eigen::Index num_parameters() const { return weight.size() + bias.size(); }
};

struct NetworkParams {
  std::vector<DenseLayer> layers;

  bool same_shape(const NetworkParams& other) const;
  bool all_finite() const;
  Eigen::Index num_parameters() const;
  bool conforms_to(const NetworkSpec& spec) const;

  /// Bitwise equality of every entry.
  bool identical_to(const NetworkParams& other) const;
};

struct TrainConfig {
  int epochs = 200;
  int batch_size = 256;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ClassifierModel {
  NetworkSpec spec;
  NetworkParams params;
  std::uint64_t train_seed = 0;
};

struct ForwardResult {
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;
  /// Activations of the last hidden layer.
  Eigen::VectorXd embedding;
};

/// Numerically stable softmax of a logit vector.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Scalar shift = logits.maxCoeff();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> e = (logits.array() - shift).exp().matrix();
  return e / e.sum();
}

/// He-style initialization: weights ~ N(0, 2 / fan_in), zero biases.
ClassifierModel init_network(const NetworkSpec& spec, std::uint64_t seed);

ForwardResult forward(const NetworkSpec& spec, const NetworkParams& params,
                      const Eigen::Ref<const Eigen::VectorXd>& x);
ForwardResult forward(const ClassifierModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Row i of the result holds the class probabilities of row i of `X`.
/// Computed row by row so it agrees bit-exactly with forward().
Eigen::MatrixXd predict_proba(const NetworkSpec& spec, const NetworkParams& params,
                              const Eigen::MatrixXd& X);
Eigen::MatrixXd predict_proba(const ClassifierModel& model, const Eigen::MatrixXd& X);

/// Penultimate-layer activations, one row per sample.
Eigen::MatrixXd embed(const ClassifierModel& model, const Eigen::MatrixXd& X);

/// -log(probs[label]) with the probability clamped below at 1e-12.
double cross_entropy(const Eigen::Ref<const Eigen::VectorXd>& probs, ClassId label);

/// Gradient of the mean cross-entropy over the batch (rows of X).
NetworkParams gradients(const ClassifierModel& model, const Eigen::MatrixXd& X,
                        std::span<const ClassId> labels);

/// Mean cross-entropy of the model over (X, labels).
double mean_loss(const ClassifierModel& model, const Eigen::MatrixXd& X,
                 std::span<const ClassId> labels);

struct TrainHistory {
  std::vector<double> epoch_loss;
};

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8) over shuffled mini-batches.
/// Deterministic given config.seed.
ClassifierModel train(ClassifierModel model, const Eigen::MatrixXd& X,
                      std::span<const ClassId> labels, const TrainConfig& config,
                      TrainHistory* history = nullptr);

/// 1-based argmax; ties go to the lowest index.
ClassId argmax_class(const Eigen::Ref<const Eigen::VectorXd>& probs);

ClassId predict(const ClassifierModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);
std::vector<ClassId> predict_all(const ClassifierModel& model, const Eigen::MatrixXd& X);

double accuracy(const ClassifierModel& model, const Eigen::MatrixXd& X,
                std::span<const ClassId> labels);

void save_model(std::ostream& os, const ClassifierModel& model);
ClassifierModel load_model(std::istream& is);
void save_model(const std::string& path, const ClassifierModel& model);
ClassifierModel load_model(const std::string& path);

}  // namespace osr

#endif  // OSR_NN_HPP
