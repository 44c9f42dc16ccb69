#include "osr/isda.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>

#include <Eigen/Eigenvalues>

#include "osr/serialize.hpp"

namespace osr {
namespace {

constexpr double kMinSubclassMass = 1e-8;
constexpr double kLogTwoPi = 1.8378770664093454836;

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& X, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(idx[i]);
  return out;
}

void fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
  Eigen::Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  if (v[arg] < 0.0) v = -v;
}

}  // namespace

std::string_view to_string(FeatureSource source) {
  return source == FeatureSource::raw ? "raw" : "embedding";
}

FeatureSource parse_feature_source(std::string_view text) {
  if (text == "embedding") return FeatureSource::embedding;
  if (text == "raw") return FeatureSource::raw;
  throw InvalidArgument("unknown feature source '" + std::string(text) +
                        "' (expected embedding or raw)");
}

GnbModel fit_gnb(const Eigen::MatrixXd& Z, std::span<const int> labels, double var_smoothing) {
  if (static_cast<std::size_t>(Z.rows()) != labels.size()) {
    throw DimensionMismatch("gnb: feature rows and labels differ in length");
  }
  std::array<std::vector<Eigen::Index>, 2> members;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw InvalidArgument("gnb: labels must be 0 or 1");
    members[static_cast<std::size_t>(labels[i])].push_back(static_cast<Eigen::Index>(i));
  }
  if (members[0].empty() || members[1].empty()) {
    throw InvalidArgument("gnb: both classes must be present");
  }

  const Eigen::RowVectorXd overall_mean = Z.colwise().mean();
  const double max_var = ((Z.rowwise() - overall_mean).array().square().colwise().sum() /
                          static_cast<double>(Z.rows()))
                             .maxCoeff();
  GnbModel gnb;
  gnb.epsilon = var_smoothing * max_var;
  if (!(gnb.epsilon > 0.0)) gnb.epsilon = var_smoothing;
  gnb.means.resize(2, Z.cols());
  gnb.variances.resize(2, Z.cols());
  for (int c = 0; c < 2; ++c) {
    const Eigen::MatrixXd Zc = rows_of(Z, members[static_cast<std::size_t>(c)]);
    const Eigen::RowVectorXd mean = Zc.colwise().mean();
    gnb.means.row(c) = mean;
    gnb.variances.row(c) = ((Zc.rowwise() - mean).array().square().colwise().sum() /
                            static_cast<double>(Zc.rows()))
                               .matrix()
                               .array() +
                           gnb.epsilon;
    gnb.priors[c] = static_cast<double>(Zc.rows()) / static_cast<double>(Z.rows());
  }
  return gnb;
}

Eigen::Vector2d gnb_joint_log_likelihood(const GnbModel& gnb,
                                         const Eigen::Ref<const Eigen::VectorXd>& z) {
  if (z.size() != gnb.dim()) throw DimensionMismatch("gnb: input dimension mismatch");
  Eigen::Vector2d jll;
  for (int c = 0; c < 2; ++c) {
    const auto var = gnb.variances.row(c).transpose().array();
    const auto diff = z.array() - gnb.means.row(c).transpose().array();
    jll[c] = std::log(gnb.priors[c]) -
             0.5 * ((kLogTwoPi + var.log()).sum() + (diff.square() / var).sum());
  }
  return jll;
}

Eigen::Vector2d gnb_posterior(const GnbModel& gnb, const Eigen::Ref<const Eigen::VectorXd>& z) {
  const Eigen::Vector2d jll = gnb_joint_log_likelihood(gnb, z);
  const double m = jll.maxCoeff();
  const Eigen::Vector2d e = (jll.array() - m).exp().matrix();
  return e / e.sum();
}

ScatterMatrices scatter_matrices(const Eigen::MatrixXd& X, const Eigen::MatrixXd& resp) {
  if (resp.rows() != X.rows()) {
    throw DimensionMismatch("scatter: responsibilities and features differ in row count");
  }
  const Eigen::Index d = X.cols();
  ScatterMatrices s{Eigen::MatrixXd::Zero(d, d), Eigen::MatrixXd::Zero(d, d)};
  const Eigen::VectorXd mass = resp.rowwise().sum();
  const Eigen::RowVectorXd global_mean = (mass.transpose() * X) / mass.sum();
  for (Eigen::Index j = 0; j < resp.cols(); ++j) {
    const double nj = resp.col(j).sum();
    if (nj < kMinSubclassMass) continue;
    const Eigen::RowVectorXd mj = (resp.col(j).transpose() * X) / nj;
    const Eigen::MatrixXd centered = X.rowwise() - mj;
    s.within.noalias() += centered.transpose() * resp.col(j).asDiagonal() * centered;
    const Eigen::VectorXd gap = (mj - global_mean).transpose();
    s.between.noalias() += nj * gap * gap.transpose();
  }
  s.within = 0.5 * (s.within + s.within.transpose()).eval();
  s.between = 0.5 * (s.between + s.between.transpose()).eval();
  return s;
}

Eigen::MatrixXd fit_projection(const Eigen::MatrixXd& within, const Eigen::MatrixXd& between,
                               double gamma, Eigen::Index d) {
  const Eigen::Index dim = within.rows();
  if (within.cols() != dim || between.rows() != dim || between.cols() != dim) {
    throw DimensionMismatch("projection: scatter matrices must be square and equal in size");
  }
  if (!(gamma > 0.0)) throw InvalidArgument("projection: gamma must be positive");
  if (d < 1) {
    throw InvalidArgument(
        "projection: discriminant dimension is 0 (a single subclass); skip the projection");
  }
  d = std::min(d, dim);

  if (between.cwiseAbs().maxCoeff() == 0.0) {
    warn("projection: between-subclass scatter is zero; returning coordinate axes");
    return Eigen::MatrixXd::Identity(dim, d);
  }

  const Eigen::MatrixXd regularized =
      within + gamma * Eigen::MatrixXd::Identity(dim, dim);
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(between, regularized);
  if (solver.info() != Eigen::Success) throw Error("projection: eigen decomposition failed");

  // Eigenvalues come back ascending.
  Eigen::MatrixXd W(dim, d);
  for (Eigen::Index k = 0; k < d; ++k) {
    W.col(k) = solver.eigenvectors().col(dim - 1 - k).normalized();
    fix_sign(W.col(k));
  }
  return W;
}

void IsdaConfig::validate() const {
  if (h1 < 1) throw InvalidArgument("isda: h1 must be at least 1");
  if (h2 < 1) throw InvalidArgument("isda: h2 must be at least 1");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw InvalidArgument("isda: gamma must be positive and finite");
  }
}

int IsdaModel::total_subclasses() const {
  int total = 0;
  for (int c : subclass_counts) total += c;
  return total;
}

IsdaModel fit_isda(const Eigen::MatrixXd& X, std::span<const int> labels,
                   std::span<const ClassId> class_ids, const IsdaConfig& config) {
  config.validate();
  const auto n = static_cast<std::size_t>(X.rows());
  if (labels.size() != n || class_ids.size() != n) {
    throw DimensionMismatch("isda: features, labels and class ids differ in length");
  }

  std::map<ClassId, std::vector<Eigen::Index>> known_groups;
  std::vector<Eigen::Index> unknown_rows;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    if (labels[i] == 0) {
      known_groups[class_ids[i]].push_back(row);
    } else if (labels[i] == 1) {
      unknown_rows.push_back(row);
    } else {
      throw InvalidArgument("isda: labels must be 0 or 1");
    }
  }
  if (known_groups.empty() || unknown_rows.empty()) {
    throw InvalidArgument("isda: both known and unknown samples are required");
  }

  IsdaModel model;
  model.h1 = config.h1;
  model.h2 = config.h2;
  model.feature_source = config.feature_source;

  struct Block {
    const std::vector<Eigen::Index>* rows;
    int components;
  };
  std::vector<Block> blocks;
  for (const auto& [cls, rows] : known_groups) {
    int h = config.h2;
    if (static_cast<int>(rows.size()) < h) {
      warn("isda: known class " + std::to_string(cls) + " has " + std::to_string(rows.size()) +
           " samples; reducing its subclasses from " + std::to_string(h));
      h = static_cast<int>(rows.size());
    }
    blocks.push_back({&rows, h});
  }
  {
    int h = config.h1;
    if (static_cast<int>(unknown_rows.size()) < h) {
      warn("isda: unknown pool has " + std::to_string(unknown_rows.size()) +
           " samples; reducing h1 from " + std::to_string(h));
      h = static_cast<int>(unknown_rows.size());
    }
    blocks.push_back({&unknown_rows, h});
  }

  int total = 0;
  for (const auto& b : blocks) total += b.components;
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(X.rows(), total);
  int offset = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& rows = *blocks[b].rows;
    const int h = blocks[b].components;
    const GmmModel gmm = fit_gmm(rows_of(X, rows), h, derive_seed(config.seed, b));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      resp.block(rows[i], offset, 1, h) = responsibilities(gmm, X.row(rows[i]).transpose()).transpose();
    }
    model.subclass_counts.push_back(h);
    offset += h;
  }

  const ScatterMatrices scatter = scatter_matrices(X, resp);
  const Eigen::Index dim = X.cols();
  const double trace = scatter.within.trace();
  const double ridge = trace > 0.0 ? config.gamma * trace / static_cast<double>(dim) : config.gamma;
  const Eigen::Index d = std::min<Eigen::Index>(dim, total - 1);
  model.projection = fit_projection(scatter.within, scatter.between, ridge, d);

  const Eigen::MatrixXd Z = X * model.projection;
  model.gnb = fit_gnb(Z, labels);
  return model;
}

IsdaPrediction predict_isda(const IsdaModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != model.feature_dim()) throw DimensionMismatch("isda: input dimension mismatch");
  const Eigen::VectorXd z = model.projection.transpose() * x;
  const Eigen::Vector2d jll = gnb_joint_log_likelihood(model.gnb, z);
  const Eigen::Vector2d post = gnb_posterior(model.gnb, z);
  return {jll[1] > jll[0] ? 1 : 0, post[1]};
}

void save_isda(std::ostream& os, const IsdaModel& model) {
  os << "isda " << model.h1 << ' ' << model.h2 << ' ' << to_string(model.feature_source) << '\n';
  os << model.subclass_counts.size();
  for (int c : model.subclass_counts) os << ' ' << c;
  os << '\n';
  io::write_matrix(os, model.projection);
  os << "gnb\n";
  io::write_vector(os, model.gnb.priors);
  io::write_matrix(os, model.gnb.means);
  io::write_matrix(os, model.gnb.variances);
  io::write_real(os, model.gnb.epsilon);
  os << '\n';
}

IsdaModel load_isda(std::istream& is) {
  io::expect_token(is, "isda");
  IsdaModel model;
  model.h1 = io::read_value<int>(is, "h1");
  model.h2 = io::read_value<int>(is, "h2");
  model.feature_source = parse_feature_source(io::read_value<std::string>(is, "feature source"));
  const auto count = io::read_value<std::size_t>(is, "subclass count");
  if (count > 100000) throw ParseError("isda: implausible subclass count");
  model.subclass_counts.resize(count);
  for (auto& c : model.subclass_counts) c = io::read_value<int>(is, "subclass size");
  model.projection = io::read_matrix(is);
  io::expect_token(is, "gnb");
  const Eigen::VectorXd priors = io::read_vector(is);
  if (priors.size() != 2) throw ParseError("isda: gnb priors must have two entries");
  model.gnb.priors = priors;
  model.gnb.means = io::read_matrix(is);
  model.gnb.variances = io::read_matrix(is);
  model.gnb.epsilon = io::read_real(is);
  if (model.gnb.means.rows() != 2 || model.gnb.variances.rows() != 2 ||
      model.gnb.means.cols() != model.projection.cols() ||
      model.gnb.variances.cols() != model.projection.cols()) {
    throw ParseError("isda: inconsistent gnb shapes");
  }
  return model;
}

}  // namespace osr
