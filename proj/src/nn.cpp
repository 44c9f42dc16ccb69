#include "osr/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "osr/serialize.hpp"

namespace osr {
namespace {

constexpr double kProbFloor = 1e-12;

void check_labels(std::span<const ClassId> labels, int num_classes) {
  for (ClassId y : labels) {
    if (y < 1 || y > num_classes) {
      throw InvalidArgument("label " + std::to_string(y) + " outside 1.." +
                            std::to_string(num_classes));
    }
  }
}

// Activations for a batch stored column-wise (one sample per column).
struct BatchPass {
  std::vector<Eigen::MatrixXd> pre;   // z_l = W_l a_{l-1} + b_l
  std::vector<Eigen::MatrixXd> post;  // a_0 = input, a_l = relu(z_l)
  Eigen::MatrixXd probs;
};

BatchPass batch_forward(const NetworkParams& params, const Eigen::MatrixXd& inputs) {
  BatchPass pass;
  const std::size_t n_layers = params.layers.size();
  pass.post.reserve(n_layers);
  pass.pre.reserve(n_layers);
  pass.post.push_back(inputs);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& layer = params.layers[l];
    Eigen::MatrixXd z = layer.weight * pass.post.back();
    z.colwise() += layer.bias;
    pass.pre.push_back(z);
    if (l + 1 < n_layers) pass.post.push_back(z.cwiseMax(0.0));
  }
  const Eigen::MatrixXd& logits = pass.pre.back();
  pass.probs.resize(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) pass.probs.col(c) = softmax(logits.col(c));
  return pass;
}

NetworkParams zeros_like(const NetworkParams& params) {
  NetworkParams out;
  out.layers.reserve(params.layers.size());
  for (const auto& layer : params.layers) {
    out.layers.push_back({Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()),
                          Eigen::VectorXd::Zero(layer.bias.size())});
  }
  return out;
}

// Gradient of the mean cross-entropy for a column-major batch; returns the loss.
double batch_gradients(const NetworkParams& params, const Eigen::MatrixXd& inputs,
                       std::span<const ClassId> labels, NetworkParams& grad) {
  const BatchPass pass = batch_forward(params, inputs);
  const auto n = static_cast<double>(inputs.cols());

  double loss = 0.0;
  Eigen::MatrixXd delta = pass.probs;
  for (Eigen::Index c = 0; c < inputs.cols(); ++c) {
    const Eigen::Index k = labels[static_cast<std::size_t>(c)] - 1;
    loss -= std::log(std::max(pass.probs(k, c), kProbFloor));
    delta(k, c) -= 1.0;
  }
  delta /= n;

  for (std::size_t l = params.layers.size(); l-- > 0;) {
    grad.layers[l].weight.noalias() = delta * pass.post[l].transpose();
    grad.layers[l].bias = delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd back = params.layers[l].weight.transpose() * delta;
    delta = back.cwiseProduct((pass.pre[l - 1].array() > 0.0).cast<double>().matrix());
  }
  return loss / n;
}

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& X, std::span<const Eigen::Index> rows) {
  Eigen::MatrixXd out(X.cols(), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = X.row(rows[i]).transpose();
  }
  return out;
}

}  // namespace

void NetworkSpec::validate() const {
  if (input_dim <= 0) throw InvalidArgument("network: input_dim must be positive");
  if (hidden_dims.empty()) throw InvalidArgument("network: hidden_dims must be non-empty");
  for (auto h : hidden_dims) {
    if (h <= 0) throw InvalidArgument("network: hidden_dims entries must be positive");
  }
  if (num_classes < 2) throw InvalidArgument("network: num_classes must be at least 2");
}

bool NetworkParams::same_shape(const NetworkParams& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& a = layers[l];
    const auto& b = other.layers[l];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
        a.bias.size() != b.bias.size()) {
      return false;
    }
  }
  return true;
}

bool NetworkParams::all_finite() const {
  return std::all_of(layers.begin(), layers.end(), [](const DenseLayer& l) {
    return l.weight.allFinite() && l.bias.allFinite();
  });
}

Eigen::Index NetworkParams::num_parameters() const {
  Eigen::Index n = 0;
  for (const auto& l : layers) n += l.num_parameters();
  return n;
}

bool NetworkParams::conforms_to(const NetworkSpec& spec) const {
  if (layers.size() != spec.hidden_dims.size() + 1) return false;
  Eigen::Index fan_in = spec.input_dim;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Eigen::Index fan_out =
        l < spec.hidden_dims.size() ? spec.hidden_dims[l] : spec.num_classes;
    if (layers[l].weight.rows() != fan_out || layers[l].weight.cols() != fan_in ||
        layers[l].bias.size() != fan_out) {
      return false;
    }
    fan_in = fan_out;
  }
  return true;
}

bool NetworkParams::identical_to(const NetworkParams& other) const {
  if (!same_shape(other)) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& a = layers[l];
    const auto& b = other.layers[l];
    if (std::memcmp(a.weight.data(), b.weight.data(), sizeof(double) * a.weight.size()) != 0 ||
        std::memcmp(a.bias.data(), b.bias.data(), sizeof(double) * a.bias.size()) != 0) {
      return false;
    }
  }
  return true;
}

void TrainConfig::validate() const {
  if (epochs <= 0) throw InvalidArgument("train: epochs must be positive");
  if (batch_size <= 0) throw InvalidArgument("train: batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("train: learning_rate must be finite and non-negative");
  }
}

ClassifierModel init_network(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  ClassifierModel model{spec, {}, seed};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Eigen::Index fan_in = spec.input_dim;
  for (std::size_t l = 0; l <= spec.hidden_dims.size(); ++l) {
    const Eigen::Index fan_out =
        l < spec.hidden_dims.size() ? spec.hidden_dims[l] : spec.num_classes;
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    DenseLayer layer{Eigen::MatrixXd(fan_out, fan_in), Eigen::VectorXd::Zero(fan_out)};
    // Row-major fill so the draw order matches the checkpoint layout.
    for (Eigen::Index r = 0; r < fan_out; ++r) {
      for (Eigen::Index c = 0; c < fan_in; ++c) layer.weight(r, c) = scale * normal(rng);
    }
    model.params.layers.push_back(std::move(layer));
    fan_in = fan_out;
  }
  return model;
}

ForwardResult forward(const NetworkSpec& spec, const NetworkParams& params,
                      const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != spec.input_dim) {
    throw DimensionMismatch("forward: expected input of length " +
                            std::to_string(spec.input_dim) + ", got " +
                            std::to_string(x.size()));
  }
  ForwardResult out;
  Eigen::VectorXd a = x;
  const std::size_t n_layers = params.layers.size();
  for (std::size_t l = 0; l + 1 < n_layers; ++l) {
    const auto& layer = params.layers[l];
    Eigen::VectorXd z = layer.weight * a + layer.bias;
    a = z.cwiseMax(0.0);
  }
  out.embedding = a;
  out.logits = params.layers.back().weight * a + params.layers.back().bias;
  out.probs = softmax(out.logits);
  return out;
}

ForwardResult forward(const ClassifierModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  return forward(model.spec, model.params, x);
}

Eigen::MatrixXd predict_proba(const NetworkSpec& spec, const NetworkParams& params,
                              const Eigen::MatrixXd& X) {
  Eigen::MatrixXd out(X.rows(), spec.num_classes);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    out.row(i) = forward(spec, params, X.row(i).transpose()).probs.transpose();
  }
  return out;
}

Eigen::MatrixXd predict_proba(const ClassifierModel& model, const Eigen::MatrixXd& X) {
  return predict_proba(model.spec, model.params, X);
}

Eigen::MatrixXd embed(const ClassifierModel& model, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd out(X.rows(), model.spec.embedding_dim());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    out.row(i) = forward(model, X.row(i).transpose()).embedding.transpose();
  }
  return out;
}

double cross_entropy(const Eigen::Ref<const Eigen::VectorXd>& probs, ClassId label) {
  if (label < 1 || label > probs.size()) {
    throw InvalidArgument("cross_entropy: label " + std::to_string(label) + " outside 1.." +
                          std::to_string(probs.size()));
  }
  return -std::log(std::max(probs[label - 1], kProbFloor));
}

NetworkParams gradients(const ClassifierModel& model, const Eigen::MatrixXd& X,
                        std::span<const ClassId> labels) {
  if (X.rows() == 0) throw InvalidArgument("gradients: empty batch");
  if (static_cast<std::size_t>(X.rows()) != labels.size()) {
    throw DimensionMismatch("gradients: feature rows and labels differ in length");
  }
  if (X.cols() != model.spec.input_dim) {
    throw DimensionMismatch("gradients: feature width does not match input_dim");
  }
  check_labels(labels, model.spec.num_classes);
  NetworkParams grad = zeros_like(model.params);
  batch_gradients(model.params, X.transpose(), labels, grad);
  return grad;
}

double mean_loss(const ClassifierModel& model, const Eigen::MatrixXd& X,
                 std::span<const ClassId> labels) {
  check_labels(labels, model.spec.num_classes);
  double total = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    total += cross_entropy(forward(model, X.row(i).transpose()).probs,
                           labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(X.rows());
}

ClassifierModel train(ClassifierModel model, const Eigen::MatrixXd& X,
                      std::span<const ClassId> labels, const TrainConfig& config,
                      TrainHistory* history) {
  config.validate();
  model.spec.validate();
  if (X.rows() == 0) throw InvalidArgument("train: empty dataset");
  if (static_cast<std::size_t>(X.rows()) != labels.size()) {
    throw DimensionMismatch("train: feature rows and labels differ in length");
  }
  if (X.cols() != model.spec.input_dim) {
    throw DimensionMismatch("train: feature width does not match input_dim");
  }
  check_labels(labels, model.spec.num_classes);

  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;

  NetworkParams& params = model.params;
  NetworkParams grad = zeros_like(params);
  NetworkParams m = zeros_like(params);
  NetworkParams v = zeros_like(params);

  std::mt19937_64 rng(config.seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(X.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::vector<ClassId> batch_labels;
  long step = 0;
  const double lr = config.learning_rate;

  auto adam_update = [&](auto& p, auto& g, auto& m1, auto& m2, double c1, double c2) {
    m1 = beta1 * m1 + (1.0 - beta1) * g;
    m2 = beta2 * m2 + (1.0 - beta2) * g.cwiseProduct(g);
    p.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::span<const Eigen::Index> rows(order.data() + start, stop - start);
      batch_labels.clear();
      for (auto r : rows) batch_labels.push_back(labels[static_cast<std::size_t>(r)]);

      const double loss = batch_gradients(params, gather_columns(X, rows), batch_labels, grad);
      epoch_loss += loss * static_cast<double>(rows.size());

      ++step;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (std::size_t l = 0; l < params.layers.size(); ++l) {
        adam_update(params.layers[l].weight, grad.layers[l].weight, m.layers[l].weight,
                    v.layers[l].weight, c1, c2);
        adam_update(params.layers[l].bias, grad.layers[l].bias, m.layers[l].bias,
                    v.layers[l].bias, c1, c2);
      }
    }
    if (history) history->epoch_loss.push_back(epoch_loss / static_cast<double>(X.rows()));
  }
  model.train_seed = config.seed;
  return model;
}

ClassId argmax_class(const Eigen::Ref<const Eigen::VectorXd>& probs) {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < probs.size(); ++k) {
    if (probs[k] > probs[best]) best = k;
  }
  return static_cast<ClassId>(best + 1);
}

ClassId predict(const ClassifierModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  return argmax_class(forward(model, x).probs);
}

std::vector<ClassId> predict_all(const ClassifierModel& model, const Eigen::MatrixXd& X) {
  std::vector<ClassId> out;
  out.reserve(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) out.push_back(predict(model, X.row(i).transpose()));
  return out;
}

double accuracy(const ClassifierModel& model, const Eigen::MatrixXd& X,
                std::span<const ClassId> labels) {
  if (X.rows() == 0) return 0.0;
  const auto pred = predict_all(model, X);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// Format:
//   osr-model 1
//   seed <u64>
//   spec <input_dim> <num_hidden> <h_1> ... <h_n> <num_classes>
//   layer <index> then weight matrix and bias vector
void save_model(std::ostream& os, const ClassifierModel& model) {
  os << "osr-model 1\n";
  os << "seed " << model.train_seed << '\n';
  os << "spec " << model.spec.input_dim << ' ' << model.spec.hidden_dims.size();
  for (auto h : model.spec.hidden_dims) os << ' ' << h;
  os << ' ' << model.spec.num_classes << '\n';
  for (std::size_t l = 0; l < model.params.layers.size(); ++l) {
    os << "layer " << l << '\n';
    io::write_matrix(os, model.params.layers[l].weight);
    io::write_vector(os, model.params.layers[l].bias);
  }
}

ClassifierModel load_model(std::istream& is) {
  io::expect_token(is, "osr-model");
  const int version = io::read_value<int>(is, "model version");
  if (version != 1) throw ParseError("model: unsupported version " + std::to_string(version));
  ClassifierModel model;
  io::expect_token(is, "seed");
  model.train_seed = io::read_value<std::uint64_t>(is, "seed");
  io::expect_token(is, "spec");
  model.spec.input_dim = io::read_value<Eigen::Index>(is, "input_dim");
  const auto n_hidden = io::read_value<std::size_t>(is, "hidden count");
  if (n_hidden > 4096) throw ParseError("model: implausible hidden layer count");
  model.spec.hidden_dims.resize(n_hidden);
  for (auto& h : model.spec.hidden_dims) h = io::read_value<Eigen::Index>(is, "hidden dim");
  model.spec.num_classes = io::read_value<int>(is, "num_classes");
  try {
    model.spec.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("model: ") + e.what());
  }
  for (std::size_t l = 0; l <= n_hidden; ++l) {
    io::expect_token(is, "layer");
    if (io::read_value<std::size_t>(is, "layer index") != l) {
      throw ParseError("model: layers out of order");
    }
    DenseLayer layer;
    layer.weight = io::read_matrix(is);
    layer.bias = io::read_vector(is);
    model.params.layers.push_back(std::move(layer));
  }
  if (!model.params.conforms_to(model.spec)) {
    throw ParseError("model: parameter shapes do not match the stored spec");
  }
  return model;
}

void save_model(const std::string& path, const ClassifierModel& model) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  save_model(os, model);
}

ClassifierModel load_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open model checkpoint '" + path + "'");
  return load_model(is);
}

}  // namespace osr
