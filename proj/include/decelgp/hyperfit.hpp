#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "decelgp/blocks.hpp"
#include "decelgp/dataset.hpp"
#include "decelgp/gp_core.hpp"
#include "decelgp/kernel.hpp"

namespace decelgp {

class FlatConfig;

/// Multi-restart gradient ascent on the block log marginal likelihood in
/// log-parameter space.
struct OptimizerConfig {
  int max_iters = 200;
  int restarts = 3;
  /// Initial step length in log-parameter space (along the unit gradient).
  double init_step = 0.5;
  /// Stop once the relative LML improvement of an accepted step falls below this.
  double convergence_tol = 1e-6;
  int max_halvings = 30;
  std::uint64_t seed = 0;

  void validate() const;
  static OptimizerConfig from_config(const FlatConfig& cfg);
  static OptimizerConfig from_config(const FlatConfig& cfg, OptimizerConfig defaults);
};

/// Sum over t in `block` of the per-t log marginal likelihoods. With a
/// time-invariant weight the Gram matrix is factorized once for the block.
LmlValue block_lml(std::span<const InputVector> train, const Matrix& targets,
                   const TimeBlock& block, const Hyperparameters& theta,
                   const TimeWeight& w = {}, bool want_grad = false);

struct InitResult {
  Hyperparameters theta;
  bool degenerate = false;
};

/// Median-heuristic starting point: l_k is the median pairwise squared
/// distance of channel k, tau^2 the variance of the block's targets and
/// sigma^2 = 0.1 tau^2. Zero medians fall back to 1, zero variance to
/// tau^2 = 1; all-identical inputs fall back to (l = 1, tau^2 = 1,
/// sigma^2 = 0.1) and set `degenerate`. Needs at least two landings.
InitResult init_hyperparameters(std::span<const InputVector> train, const Matrix& targets,
                                const TimeBlock& block, const TimeWeight& w = {});

struct BlockFit {
  Hyperparameters theta;
  double lml = 0.0;
  double init_lml = 0.0;
  /// Set when no restart improved on its starting point, or the start was degenerate.
  bool warning = false;
  int iterations = 0;
  /// Accepted LML values of each restart, starting with its initial value.
  std::vector<std::vector<double>> traces;
};

BlockFit fit_block(std::span<const InputVector> train, const Matrix& targets,
                   const TimeBlock& block, const OptimizerConfig& cfg,
                   const TimeWeight& w = {});

struct FitOptions {
  OptimizerConfig optimizer;
  TimeWeight weight;
  /// z-score each input channel before the kernel (off by default).
  bool standardize = false;
  unsigned threads = 1;
};

/// Fits every block independently, then stores alpha^t for all t using the
/// theta of t's block. Requires targets on every landing.
GpModel fit_model(const FlightDatabase& db, const BlockScheme& scheme,
                  const FitOptions& options, std::vector<BlockFit>* fits = nullptr);

}  // namespace decelgp
