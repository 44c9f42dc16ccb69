#ifndef OSR_PERTURBATION_HPP
#define OSR_PERTURBATION_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "osr/common.hpp"
#include "osr/nn.hpp"

namespace osr {

struct PerturbConfig {
  int num_models = 7;
  double noise_scale = 0.3;
  std::uint64_t master_seed = 0;

  void validate() const;
};

/// B parameter-perturbed copies of a trained model.
struct PerturbedEnsemble {
  ClassifierModel base;
  std::vector<NetworkParams> members;
  PerturbConfig config;

  std::size_t size() const { return members.size(); }
};

/// Population standard deviation (divisor n) of a non-empty coefficient set.
template <typename Derived>
typename Derived::Scalar population_std(const Eigen::DenseBase<Derived>& theta) {
  using Scalar = typename Derived::Scalar;
  if (theta.size() == 0) throw InvalidArgument("population_std: empty parameter vector");
  const Scalar n = static_cast<Scalar>(theta.size());
  const Scalar mean = theta.sum() / n;
  const Scalar ss = (theta.derived().array() - mean).square().sum();
  return std::sqrt(ss / n);
}

/// Noise standard deviation for one layer: lambda times the population std of
/// the layer's flattened parameters.
template <typename Derived>
typename Derived::Scalar layer_sigma(const Eigen::DenseBase<Derived>& theta,
                                     typename Derived::Scalar lambda) {
  if (theta.size() == 0) throw InvalidArgument("layer_sigma: empty layer");
  if (!(lambda >= 0)) throw InvalidArgument("layer_sigma: lambda must be non-negative");
  return lambda * population_std(theta);
}

/// Weights (row-major) followed by the bias.
Eigen::VectorXd flatten_layer(const DenseLayer& layer);

/// I.i.d. N(0, sigma^2) draws, reproducible from stream_seed.
Eigen::VectorXd sample_layer_noise(Eigen::Index length, double sigma, std::uint64_t stream_seed);

/// Seed of the noise stream for (member, layer); members are 0-based.
std::uint64_t noise_stream_seed(std::uint64_t master_seed, std::size_t member, std::size_t layer);

/// Builds one perturbed parameter set.
NetworkParams perturb_member(const NetworkParams& base, double noise_scale,
                             std::uint64_t master_seed, std::size_t member);

PerturbedEnsemble make_ensemble(const ClassifierModel& model, const PerturbConfig& config);

}  // namespace osr

#endif  // OSR_PERTURBATION_HPP
