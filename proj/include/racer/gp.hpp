#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace racer::gp {

/// Squared-exponential kernel hyperparameters for one output dimension.
struct HyperDim {
  double sigma_f2 = 1.0;       // signal variance
  Eigen::VectorXd length2;     // squared length scale per input dimension
  double sigma_n2 = 1e-4;      // observation noise variance

  bool valid(int nz) const {
    return sigma_f2 > 0 && sigma_n2 > 0 && length2.size() == nz &&
           (length2.array() > 0).all();
  }
};

using Hyper = std::vector<HyperDim>;  // one entry per output dimension

struct Dataset {
  Eigen::MatrixXd Z;  // M x nz inputs
  Eigen::MatrixXd Y;  // M x nd outputs

  int size() const { return static_cast<int>(Z.rows()); }
  int input_dim() const { return static_cast<int>(Z.cols()); }
  int output_dim() const { return static_cast<int>(Y.cols()); }

  /// Columnar text: first line "nz nd", then one row of nz+nd values per
  /// data point, full double precision.
  bool save(const std::string& path) const;
  static std::optional<Dataset> load(const std::string& path, std::string* error);
};

/// k(a, b) = sigma_f^2 * exp(-1/2 * sum_i (a_i - b_i)^2 / length2_i)
double kernel_se(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const HyperDim& h);

struct Prediction {
  Eigen::VectorXd mean;      // nd
  Eigen::VectorXd var;       // nd, latent (noise-free) posterior variance
  Eigen::MatrixXd dmean_dz;  // nd x nz
};

/// Exact GP posterior, one independent GP per output dimension.
class Model {
 public:
  /// Assembles per-dimension Gram matrices, adds escalating jitter if
  /// needed (1e-10*sigma_f2 up to 1e-4*sigma_f2), and caches Cholesky
  /// factors and weight vectors. Throws std::runtime_error if a Gram
  /// matrix is not positive definite at max jitter.
  static Model fit(Dataset data, Hyper hyper);

  Prediction predict(const Eigen::VectorXd& z) const;

  /// Summed Gaussian log evidence over output dimensions.
  double log_marginal_likelihood() const;

  const Dataset& data() const { return data_; }
  const Hyper& hyper() const { return hyper_; }
  const Eigen::MatrixXd& chol(int dim) const { return chol_[dim]; }
  const Eigen::VectorXd& weights(int dim) const { return weights_[dim]; }
  double jitter(int dim) const { return jitter_[dim]; }

 private:
  Dataset data_;
  Hyper hyper_;
  std::vector<Eigen::MatrixXd> chol_;     // per dim: lower factor of K + sigma_n2*I
  std::vector<Eigen::VectorXd> weights_;  // per dim: (K + sigma_n2*I)^-1 y
  std::vector<double> jitter_;
};

/// Derivative-free log-space coordinate descent on the marginal likelihood,
/// independently per output dimension. budget = likelihood evaluations per
/// dimension; the result never has lower evidence than init.
Hyper fit_hyperparameters(const Dataset& data, const Hyper& init, int budget);

}  // namespace racer::gp
