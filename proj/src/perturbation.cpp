#include "osr/perturbation.hpp"

#include <random>

namespace osr {

void PerturbConfig::validate() const {
  if (num_models < 1) throw InvalidArgument("perturb: num_models must be at least 1");
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) {
    throw InvalidArgument("perturb: noise_scale must be finite and non-negative");
  }
}

Eigen::VectorXd flatten_layer(const DenseLayer& layer) {
  Eigen::VectorXd flat(layer.num_parameters());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) flat[k++] = layer.weight(r, c);
  }
  flat.tail(layer.bias.size()) = layer.bias;
  return flat;
}

Eigen::VectorXd sample_layer_noise(Eigen::Index length, double sigma, std::uint64_t stream_seed) {
  if (length <= 0) throw InvalidArgument("sample_layer_noise: length must be positive");
  if (!(sigma >= 0.0)) throw InvalidArgument("sample_layer_noise: sigma must be non-negative");
  if (sigma == 0.0) return Eigen::VectorXd::Zero(length);
  std::mt19937_64 rng(stream_seed);
  std::normal_distribution<double> normal(0.0, sigma);
  Eigen::VectorXd out(length);
  for (Eigen::Index i = 0; i < length; ++i) out[i] = normal(rng);
  return out;
}

std::uint64_t noise_stream_seed(std::uint64_t master_seed, std::size_t member, std::size_t layer) {
  return derive_seed(master_seed, member, layer);
}

NetworkParams perturb_member(const NetworkParams& base, double noise_scale,
                             std::uint64_t master_seed, std::size_t member) {
  NetworkParams out = base;
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    DenseLayer& layer = out.layers[l];
    const double sigma = layer_sigma(flatten_layer(base.layers[l]), noise_scale);
    if (sigma == 0.0) continue;
    const Eigen::VectorXd noise = sample_layer_noise(
        layer.num_parameters(), sigma, noise_stream_seed(master_seed, member, l));
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) += noise[k++];
    }
    layer.bias += noise.tail(layer.bias.size());
  }
  return out;
}

PerturbedEnsemble make_ensemble(const ClassifierModel& model, const PerturbConfig& config) {
  config.validate();
  PerturbedEnsemble ensemble{model, {}, config};
  ensemble.members.reserve(static_cast<std::size_t>(config.num_models));
  for (int i = 0; i < config.num_models; ++i) {
    ensemble.members.push_back(perturb_member(model.params, config.noise_scale,
                                              config.master_seed, static_cast<std::size_t>(i)));
  }
  return ensemble;
}

}  // namespace osr
