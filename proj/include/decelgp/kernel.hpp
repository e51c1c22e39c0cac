#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "decelgp/common.hpp"
#include "decelgp/dataset.hpp"

namespace decelgp {

/// GP hyperparameters theta = (sigma, tau, l_1..l_6), all strictly positive.
struct Hyperparameters {
  double noise_std = 1.0;  // sigma
  double amplitude = 1.0;  // tau
  std::array<double, kChannels> length_scales{1, 1, 1, 1, 1, 1};

  /// Throws ArgumentError unless every field is finite and > 0.
  void validate() const;
  bool valid() const;

  /// (log sigma, log tau, log l_1, ..., log l_6)
  Vector to_log() const;
  static Hyperparameters from_log(const Vector& log_params);

  friend bool operator==(const Hyperparameters&, const Hyperparameters&) = default;
};

inline constexpr int kNumHyperparameters = 2 + static_cast<int>(kChannels);

/// Diagonal jitter added before every factorization, relative to tau^2.
inline constexpr double kJitterFactor = 1e-8;

/// Time weighting of the per-channel semi-norm.
///
/// Uniform weights reproduce the plain squared Frobenius distance. The causal
/// box at time t keeps samples t' <= t only. Custom weights are a fixed
/// non-negative vector used at every t.
class TimeWeight {
 public:
  enum class Mode { Uniform, CausalBox, Custom };

  TimeWeight() = default;
  static TimeWeight uniform() { return {}; }
  static TimeWeight causal_box() { return TimeWeight(Mode::CausalBox, {}); }
  static TimeWeight custom(Vector weights);

  Mode mode() const { return mode_; }
  bool time_invariant() const { return mode_ != Mode::CausalBox; }
  const Vector& custom_weights() const { return weights_; }

  /// Weight w^t(t') for t' in [0, horizon].
  Vector at(int t, int horizon) const;

  std::string name() const;
  static TimeWeight parse(const std::string& name);

  friend bool operator==(const TimeWeight& a, const TimeWeight& b);

 private:
  TimeWeight(Mode mode, Vector weights) : mode_(mode), weights_(std::move(weights)) {}

  Mode mode_ = Mode::Uniform;
  Vector weights_;
};

/// Optional per-channel affine standardization applied before the kernel.
struct ChannelScaling {
  std::array<double, kChannels> offset{};
  std::array<double, kChannels> scale{1, 1, 1, 1, 1, 1};

  bool is_identity() const;
  /// z-score each channel over all entries of all landings; zero spread
  /// leaves the scale at 1.
  static ChannelScaling fit(std::span<const InputVector> inputs);
  InputVector apply(const InputVector& x) const;
  std::vector<InputVector> apply(std::span<const InputVector> xs) const;

  friend bool operator==(const ChannelScaling&, const ChannelScaling&) = default;
};

/// Sentinel time meaning "the final sample", i.e. the whole trajectory.
inline constexpr int kFullHorizon = -1;

/// sum_{t'} w(t') (a_k(t') - b_k(t'))^2 for channel k in [0, 6).
double channel_sq_dist(const InputVector& a, const InputVector& b, std::size_t channel,
                       const TimeWeight& w = {}, int t = kFullHorizon);

/// tau^2 exp(-sum_k d_k / (2 l_k)).
double kernel_eval(const InputVector& a, const InputVector& b, const Hyperparameters& theta,
                   const TimeWeight& w = {}, int t = kFullHorizon);

/// Kernel value from precomputed channel distances; shared by every code
/// path so Gram entries and pointwise evaluation agree bit for bit.
double kernel_from_distances(const std::array<double, kChannels>& d,
                             const Hyperparameters& theta);

/// Per-channel pairwise squared distances between two input sets, computed
/// once and reused across hyperparameter values.
struct ChannelDistances {
  std::array<Matrix, kChannels> d;
  /// Set by the single-set constructor; d[k] is then symmetric.
  bool symmetric = false;

  Eigen::Index rows() const { return d[0].rows(); }
  Eigen::Index cols() const { return d[0].cols(); }

  /// Kernel matrix for theta (no noise, no jitter).
  Matrix kernel(const Hyperparameters& theta) const;
};

ChannelDistances channel_distances(std::span<const InputVector> x1,
                                   std::span<const InputVector> x2, const TimeWeight& w = {},
                                   int t = kFullHorizon);
/// Symmetric variant; fills the upper triangle and mirrors it.
ChannelDistances channel_distances(std::span<const InputVector> x, const TimeWeight& w = {},
                                   int t = kFullHorizon);

/// Symmetric n x n Gram matrix with diagonal tau^2.
Matrix gram(std::span<const InputVector> x, const Hyperparameters& theta,
            const TimeWeight& w = {}, int t = kFullHorizon);

/// n1 x n2 cross-covariance matrix.
Matrix cross_gram(std::span<const InputVector> x1, std::span<const InputVector> x2,
                  const Hyperparameters& theta, const TimeWeight& w = {},
                  int t = kFullHorizon);

}  // namespace decelgp
