#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "decelgp/blocks.hpp"
#include "decelgp/common.hpp"
#include "decelgp/kernel.hpp"

namespace decelgp {

/// Cholesky factor L of K + sigma^2 I + jitter I, reusable across solves.
class CholeskyFactor {
 public:
  explicit CholeskyFactor(Eigen::LLT<Matrix> llt) : llt_(std::move(llt)) {}

  Eigen::Index size() const { return llt_.rows(); }
  Matrix lower() const { return llt_.matrixL(); }
  Vector solve(const Vector& b) const { return llt_.solve(b); }
  Matrix solve(const Matrix& b) const { return llt_.solve(b); }
  /// L^{-1} B
  Matrix solve_lower(const Matrix& b) const { return llt_.matrixL().solve(b); }
  double log_det() const;
  Matrix inverse() const;

 private:
  Eigen::LLT<Matrix> llt_;
};

/// Factor K + (sigma^2 + jitter) I. Throws FactorizationError if the matrix is
/// not numerically positive definite.
CholeskyFactor factorize(const Matrix& k, double sigma, double jitter);
/// Same with jitter = 1e-8 * max diag(K), i.e. 1e-8 tau^2 for a Gram matrix.
CholeskyFactor factorize(const Matrix& k, double sigma);

struct PosteriorResult {
  Vector mean;
  std::optional<Matrix> covariance;
};

/// Posterior of F* given targets y at the training inputs:
///   mean = K*x (K + s^2 I)^-1 y,   cov = K** - K*x (K + s^2 I)^-1 Kx*.
/// Negative variances within 1e-10 tau^2 of zero are clamped to zero; larger
/// ones raise NumericError.
PosteriorResult posterior(std::span<const InputVector> train, const Vector& y,
                          std::span<const InputVector> test, const Hyperparameters& theta,
                          const TimeWeight& w = {}, bool want_cov = false,
                          int t = kFullHorizon);

/// Log marginal likelihood value and, optionally, its gradient with respect
/// to (log sigma, log tau, log l_1..l_6).
struct LmlValue {
  double value = 0.0;
  std::optional<Vector> gradient;
};

LmlValue log_marginal_likelihood(std::span<const InputVector> train, const Vector& y,
                                 const Hyperparameters& theta, const TimeWeight& w = {},
                                 bool want_grad = false, int t = kFullHorizon);

/// Sum of per-column log marginal likelihoods for the columns of `targets`
/// (n x B), sharing a single factorization of K + s^2 I built from the
/// precomputed distances. Gradient by the trace identity
///   dL/dp = 1/2 tr((sum_b a_b a_b^T - B A^-1) dA/dp),  A = K + s^2 I + eps I.
LmlValue lml_shared(const ChannelDistances& dist, const Matrix& targets,
                    const Hyperparameters& theta, bool want_grad);

/// One factorized evaluation of lml_shared; the gradient is computed only
/// when asked for, reusing the factorization.
class LmlTerm {
 public:
  /// Throws FactorizationError like factorize().
  LmlTerm(const ChannelDistances& dist, const Matrix& targets, const Hyperparameters& theta);

  double value() const { return value_; }
  Vector gradient() const;

 private:
  const ChannelDistances* dist_;
  Hyperparameters theta_;
  Matrix k_;
  CholeskyFactor factor_;
  Matrix alpha_;
  double value_ = 0.0;
};

/// Fitted regression model: one hyperparameter set per time block and the
/// precomputed weight vectors alpha^t = (K + s^2 I)^-1 Y^t.
struct GpModel {
  int horizon = 0;
  BlockScheme blocks;
  std::vector<Hyperparameters> theta;
  std::vector<bool> fit_warnings;
  TimeWeight weight;
  ChannelScaling scaling;
  std::vector<std::uint64_t> train_ids;
  std::vector<InputVector> train_inputs;
  /// n_ob x (T+1); column t is alpha^t.
  Matrix alpha;
  std::string data_digest;

  const Hyperparameters& theta_at(int t) const { return theta[blocks.block_of(t)]; }
  /// Throws SchemaError when dimensions disagree.
  void validate() const;
};

/// n_test x (T+1) posterior-mean profiles; column t uses the theta of t's block.
Matrix predict_profile(const GpModel& model, std::span<const InputVector> test);

/// n_test x (T+1) posterior variances S*^t (diagonal only). Refactorizes the
/// training Gram matrix per block.
Matrix predict_variance(const GpModel& model, std::span<const InputVector> test);

inline constexpr int kModelFormatVersion = 1;

std::string model_to_json(const GpModel& model);
GpModel model_from_json(const std::string& text);
void save_model(const GpModel& model, const std::string& path);
GpModel load_model(const std::string& path);

}  // namespace decelgp
