#include "racer/gp.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "racer/linalg.hpp"

namespace racer::gp {

double kernel_se(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const HyperDim& h) {
  const double q = ((a - b).array().square() / h.length2.array()).sum();
  return h.sigma_f2 * std::exp(-0.5 * q);
}

bool Dataset::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) return false;
  const int nz = input_dim(), nd = output_dim();
  out << nz << " " << nd << "\n";
  char buf[32];
  for (int i = 0; i < size(); ++i) {
    for (int j = 0; j < nz + nd; ++j) {
      const double v = (j < nz) ? Z(i, j) : Y(i, j - nz);
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << buf << (j + 1 < nz + nd ? " " : "\n");
    }
  }
  return static_cast<bool>(out);
}

std::optional<Dataset> Dataset::load(const std::string& path, std::string* error) {
  std::ifstream in(path);
  auto fail = [&](const std::string& msg) -> std::optional<Dataset> {
    if (error) *error = path + ": " + msg;
    return std::nullopt;
  };
  if (!in) return fail("cannot open file");
  int nz = 0, nd = 0;
  if (!(in >> nz >> nd) || nz <= 0 || nd <= 0) return fail("bad header");
  std::vector<double> vals;
  double v;
  while (in >> v) {
    if (!std::isfinite(v)) return fail("non-finite value");
    vals.push_back(v);
  }
  if (!in.eof()) return fail("unparseable value");
  if (vals.empty() || vals.size() % (nz + nd) != 0)
    return fail("row count does not match header");
  const int m = static_cast<int>(vals.size()) / (nz + nd);
  Dataset ds;
  ds.Z.resize(m, nz);
  ds.Y.resize(m, nd);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < nz; ++j) ds.Z(i, j) = vals[i * (nz + nd) + j];
    for (int j = 0; j < nd; ++j) ds.Y(i, j) = vals[i * (nz + nd) + nz + j];
  }
  return ds;
}

Model Model::fit(Dataset data, Hyper hyper) {
  const int m = data.size();
  const int nz = data.input_dim();
  const int nd = data.output_dim();
  if (m < 1) throw std::invalid_argument("gp: empty dataset");
  if (static_cast<int>(hyper.size()) != nd)
    throw std::invalid_argument("gp: one hyperparameter set per output dimension");
  for (const HyperDim& h : hyper)
    if (!h.valid(nz)) throw std::invalid_argument("gp: invalid hyperparameters");
  if (!data.Z.allFinite() || !data.Y.allFinite())
    throw std::invalid_argument("gp: non-finite data");

  Model model;
  model.chol_.resize(nd);
  model.weights_.resize(nd);
  model.jitter_.resize(nd);
  for (int d = 0; d < nd; ++d) {
    const HyperDim& h = hyper[d];
    Eigen::MatrixXd K(m, m);
    for (int i = 0; i < m; ++i) {
      K(i, i) = h.sigma_f2 + h.sigma_n2;
      for (int j = 0; j < i; ++j) {
        K(i, j) = kernel_se(data.Z.row(i), data.Z.row(j), h);
        K(j, i) = K(i, j);
      }
    }
    const double jit = linalg::chol_with_jitter(K, model.chol_[d], 1e-10 * h.sigma_f2,
                                                1e-4 * h.sigma_f2);
    if (jit < 0)
      throw std::runtime_error("gp: covariance not positive definite at max jitter");
    model.jitter_[d] = jit;
    model.weights_[d] = model.chol_[d].triangularView<Eigen::Lower>().solve(data.Y.col(d));
    model.chol_[d].transpose().triangularView<Eigen::Upper>().solveInPlace(
        model.weights_[d]);
  }
  model.data_ = std::move(data);
  model.hyper_ = std::move(hyper);
  return model;
}

Prediction Model::predict(const Eigen::VectorXd& z) const {
  const int m = data_.size();
  const int nz = data_.input_dim();
  const int nd = data_.output_dim();
  Prediction out;
  out.mean.resize(nd);
  out.var.resize(nd);
  out.dmean_dz.resize(nd, nz);
  Eigen::VectorXd k(m);
  for (int d = 0; d < nd; ++d) {
    const HyperDim& h = hyper_[d];
    for (int i = 0; i < m; ++i) k(i) = kernel_se(z, data_.Z.row(i), h);
    out.mean(d) = k.dot(weights_[d]);
    // d mean / dz = sum_j alpha_j k_j (z_j - z) / length2
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(nz);
    for (int i = 0; i < m; ++i)
      grad += weights_[d](i) * k(i) * (data_.Z.row(i).transpose() - z).cwiseQuotient(h.length2);
    out.dmean_dz.row(d) = grad.transpose();
    const Eigen::VectorXd li = chol_[d].triangularView<Eigen::Lower>().solve(k);
    // Latent posterior variance, floored to keep sqrt and ratios valid.
    out.var(d) = std::max(h.sigma_f2 - li.squaredNorm(), 1e-18 * h.sigma_f2);
  }
  return out;
}

double Model::log_marginal_likelihood() const {
  const int m = data_.size();
  double lml = 0;
  for (int d = 0; d < data_.output_dim(); ++d) {
    lml += -0.5 * data_.Y.col(d).dot(weights_[d]) -
           chol_[d].diagonal().array().log().sum() -
           0.5 * m * std::log(2 * M_PI);
  }
  return lml;
}

namespace {

// Evidence for one output dimension; nullopt when the factorization fails.
std::optional<double> evidence_1d(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y,
                                  const HyperDim& h) {
  const int m = static_cast<int>(Z.rows());
  Eigen::MatrixXd K(m, m);
  for (int i = 0; i < m; ++i) {
    K(i, i) = h.sigma_f2 + h.sigma_n2;
    for (int j = 0; j < i; ++j) {
      K(i, j) = kernel_se(Z.row(i), Z.row(j), h);
      K(j, i) = K(i, j);
    }
  }
  Eigen::MatrixXd L;
  if (linalg::chol_with_jitter(K, L, 1e-10 * h.sigma_f2, 1e-4 * h.sigma_f2) < 0)
    return std::nullopt;
  Eigen::VectorXd alpha = L.triangularView<Eigen::Lower>().solve(y);
  L.transpose().triangularView<Eigen::Upper>().solveInPlace(alpha);
  return -0.5 * y.dot(alpha) - L.diagonal().array().log().sum() -
         0.5 * m * std::log(2 * M_PI);
}

}  // namespace

Hyper fit_hyperparameters(const Dataset& data, const Hyper& init, int budget) {
  const int nz = data.input_dim();
  Hyper best = init;
  for (int d = 0; d < data.output_dim(); ++d) {
    const Eigen::VectorXd y = data.Y.col(d);
    HyperDim cur = init[d];

    // Parameter vector in log space: [sigma_f2, length2 (nz), sigma_n2].
    auto pack = [&](const HyperDim& h) {
      Eigen::VectorXd t(nz + 2);
      t(0) = std::log(h.sigma_f2);
      for (int i = 0; i < nz; ++i) t(1 + i) = std::log(h.length2(i));
      t(nz + 1) = std::log(h.sigma_n2);
      return t;
    };
    auto unpack = [&](const Eigen::VectorXd& t) {
      HyperDim h;
      h.sigma_f2 = std::exp(std::clamp(t(0), -46.0, 46.0));
      h.length2.resize(nz);
      for (int i = 0; i < nz; ++i)
        h.length2(i) = std::exp(std::clamp(t(1 + i), -46.0, 46.0));
      h.sigma_n2 = std::exp(std::clamp(t(nz + 1), -46.0, 46.0));
      return h;
    };

    Eigen::VectorXd theta = pack(cur);
    std::optional<double> f = evidence_1d(data.Z, y, cur);
    if (!f) continue;  // keep init for this dimension
    int evals = 1;
    Eigen::VectorXd step = Eigen::VectorXd::Constant(nz + 2, 0.5);
    while (evals < budget && step.maxCoeff() > 1e-3) {
      bool any_accept = false;
      for (int j = 0; j < nz + 2 && evals < budget; ++j) {
        for (const double dir : {+1.0, -1.0}) {
          if (evals >= budget) break;
          Eigen::VectorXd trial = theta;
          trial(j) += dir * step(j);
          const std::optional<double> ft = evidence_1d(data.Z, y, unpack(trial));
          ++evals;
          if (ft && *ft > *f) {
            theta = trial;
            f = ft;
            any_accept = true;
            break;
          }
        }
      }
      if (!any_accept) step *= 0.5;
    }
    best[d] = unpack(theta);
  }
  return best;
}

}  // namespace racer::gp
