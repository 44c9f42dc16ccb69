#include "osr/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "osr/serialize.hpp"

namespace osr {
namespace {

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

Eigen::MatrixXd seed_means(const Eigen::MatrixXd& X, int H, std::uint64_t seed) {
  const Eigen::Index n = X.rows();
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd means(H, X.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  means.row(0) = X.row(pick(rng));

  Eigen::VectorXd d2 = (X.rowwise() - means.row(0)).rowwise().squaredNorm();
  for (int h = 1; h < H; ++h) {
    const double total = d2.sum();
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    means.row(h) = X.row(chosen);
    d2 = d2.cwiseMin((X.rowwise() - means.row(h)).rowwise().squaredNorm());
  }
  return means;
}

// Fills `resp` (n x H) and returns the total log-likelihood.
double e_step(const GmmModel& gmm, const Eigen::MatrixXd& X, Eigen::MatrixXd& resp) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Eigen::VectorXd logp = component_log_densities(gmm, X.row(i).transpose());
    const double lse = log_sum_exp(logp);
    resp.row(i) = (logp.array() - lse).exp().matrix().transpose();
    ll += lse;
  }
  return ll;
}

void m_step(GmmModel& gmm, const Eigen::MatrixXd& X, const Eigen::MatrixXd& resp, double floor) {
  const auto n = static_cast<double>(X.rows());
  for (Eigen::Index h = 0; h < gmm.num_components(); ++h) {
    const double nk = resp.col(h).sum();
    gmm.weights[h] = nk / n;
    if (nk <= 0.0) continue;  // empty component keeps its location; weight is zero
    const Eigen::RowVectorXd mean = (resp.col(h).transpose() * X) / nk;
    const Eigen::MatrixXd centered = X.rowwise() - mean;
    const Eigen::RowVectorXd var =
        (resp.col(h).transpose() * centered.array().square().matrix()) / nk;
    gmm.means.row(h) = mean;
    gmm.variances.row(h) = var.cwiseMax(floor);
  }
}

}  // namespace

GmmModel fit_gmm(const Eigen::MatrixXd& X, int num_components, std::uint64_t seed,
                 const GmmOptions& options, std::vector<double>* ll_trace) {
  if (num_components < 1) throw InvalidArgument("fit_gmm: number of components must be positive");
  if (X.rows() < num_components) {
    throw InvalidArgument("fit_gmm: " + std::to_string(X.rows()) +
                          " samples cannot support " + std::to_string(num_components) +
                          " components");
  }
  if (X.cols() == 0) throw InvalidArgument("fit_gmm: zero-dimensional data");

  GmmModel gmm;
  gmm.weights = Eigen::VectorXd::Constant(num_components, 1.0 / num_components);
  gmm.means = seed_means(X, num_components, seed);
  const Eigen::RowVectorXd mean = X.colwise().mean();
  const Eigen::RowVectorXd data_var =
      ((X.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(X.rows()))
          .matrix()
          .cwiseMax(options.variance_floor);
  gmm.variances = data_var.replicate(num_components, 1);

  Eigen::MatrixXd resp(X.rows(), num_components);
  double previous = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    const double ll = e_step(gmm, X, resp);
    if (ll_trace) ll_trace->push_back(ll);
    if (iter > 0 && ll - previous < options.tolerance) break;
    previous = ll;
    m_step(gmm, X, resp, options.variance_floor);
  }
  return gmm;
}

Eigen::VectorXd component_log_densities(const GmmModel& gmm,
                                        const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != gmm.dim()) throw DimensionMismatch("gmm: input dimension mismatch");
  constexpr double log_two_pi = 1.8378770664093454836;  // log(2 pi)
  Eigen::VectorXd out(gmm.num_components());
  for (Eigen::Index h = 0; h < gmm.num_components(); ++h) {
    const auto var = gmm.variances.row(h).transpose().array();
    const auto diff = x.array() - gmm.means.row(h).transpose().array();
    const double quad = (diff.square() / var).sum();
    const double log_det = var.log().sum();
    out[h] = std::log(gmm.weights[h]) -
             0.5 * (static_cast<double>(x.size()) * log_two_pi + log_det + quad);
  }
  return out;
}

Eigen::VectorXd responsibilities(const GmmModel& gmm, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::VectorXd logp = component_log_densities(gmm, x);
  return (logp.array() - log_sum_exp(logp)).exp().matrix();
}

Eigen::MatrixXd responsibility_matrix(const GmmModel& gmm, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd out(X.rows(), gmm.num_components());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    out.row(i) = responsibilities(gmm, X.row(i).transpose()).transpose();
  }
  return out;
}

double log_likelihood(const GmmModel& gmm, const Eigen::MatrixXd& X) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    ll += log_sum_exp(component_log_densities(gmm, X.row(i).transpose()));
  }
  return ll;
}

void save_gmm(std::ostream& os, const GmmModel& gmm) {
  os << "gmm\n";
  io::write_vector(os, gmm.weights);
  io::write_matrix(os, gmm.means);
  io::write_matrix(os, gmm.variances);
}

GmmModel load_gmm(std::istream& is) {
  io::expect_token(is, "gmm");
  GmmModel gmm;
  gmm.weights = io::read_vector(is);
  gmm.means = io::read_matrix(is);
  gmm.variances = io::read_matrix(is);
  if (gmm.means.rows() != gmm.weights.size() || gmm.variances.rows() != gmm.weights.size() ||
      gmm.variances.cols() != gmm.means.cols()) {
    throw ParseError("gmm: inconsistent shapes");
  }
  return gmm;
}

}  // namespace osr
