#include "decelgp/hyperfit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "decelgp/config.hpp"

namespace decelgp {

// ---------------------------------------------------------------------------
// Block partition

BlockScheme::BlockScheme(std::vector<int> end_times) {
  int first = 0;
  for (int end : end_times) {
    if (end < first) throw ArgumentError("block end times must be strictly increasing from 0");
    blocks_.push_back({first, end});
    first = end + 1;
  }
}

std::vector<int> BlockScheme::end_times() const {
  std::vector<int> out;
  out.reserve(blocks_.size());
  for (const auto& b : blocks_) out.push_back(b.last);
  return out;
}

std::size_t BlockScheme::block_of(int t) const {
  auto it = std::lower_bound(blocks_.begin(), blocks_.end(), t,
                             [](const TimeBlock& b, int v) { return b.last < v; });
  if (t < 0 || it == blocks_.end()) throw ArgumentError("time outside block scheme");
  return static_cast<std::size_t>(it - blocks_.begin());
}

BlockScheme block_scheme(int horizon, int n_blocks) {
  if (horizon < 0) throw ArgumentError("horizon must be non-negative");
  if (n_blocks < 1 || n_blocks > horizon + 1) {
    throw ArgumentError("number of blocks must lie in [1, " + std::to_string(horizon + 1) + "]");
  }
  std::vector<int> ends;
  ends.reserve(static_cast<std::size_t>(n_blocks));
  if (n_blocks == horizon + 1) {
    for (int t = 0; t <= horizon; ++t) ends.push_back(t);
  } else {
    const long long T = horizon;
    const long long N = n_blocks;
    for (long long m = 1; m <= N; ++m) ends.push_back(static_cast<int>((2 * m * T + N) / (2 * N)));
  }
  return BlockScheme(std::move(ends));
}

// ---------------------------------------------------------------------------

void OptimizerConfig::validate() const {
  if (max_iters < 1 || restarts < 1 || max_halvings < 1)
    throw ArgumentError("optimizer counts must be positive");
  if (!(init_step > 0.0) || !(convergence_tol > 0.0))
    throw ArgumentError("optimizer step and tolerance must be positive");
}

OptimizerConfig OptimizerConfig::from_config(const FlatConfig& c) { return from_config(c, {}); }

OptimizerConfig OptimizerConfig::from_config(const FlatConfig& c, OptimizerConfig d) {
  d.max_iters = static_cast<int>(c.get_int("max_iters", d.max_iters));
  d.restarts = static_cast<int>(c.get_int("restarts", d.restarts));
  d.init_step = c.get_double("init_step", d.init_step);
  d.convergence_tol = c.get_double("convergence_tol", d.convergence_tol);
  d.max_halvings = static_cast<int>(c.get_int("max_halvings", d.max_halvings));
  d.validate();
  return d;
}

namespace {

void check_block(const Matrix& targets, const TimeBlock& block) {
  if (block.first < 0 || block.last < block.first || block.last >= targets.cols())
    throw ArgumentError("block outside the target horizon");
}

// LML summed over one block. Time-invariant weights need a single distance
// set (possibly shared with other blocks); the causal weight needs one per t.
class BlockObjective {
 public:
  BlockObjective(std::span<const InputVector> train, const Matrix& targets,
                 const TimeBlock& block, const TimeWeight& w,
                 const ChannelDistances* shared = nullptr) {
    check_block(targets, block);
    if (w.time_invariant()) {
      if (shared) {
        dist_.push_back(shared);
      } else {
        owned_.push_back(channel_distances(train, w));
      }
      targets_.push_back(targets.middleCols(block.first, block.length()));
    } else {
      for (int t = block.first; t <= block.last; ++t) {
        owned_.push_back(channel_distances(train, w, t));
        targets_.push_back(targets.col(t));
      }
    }
    for (const auto& d : owned_) dist_.push_back(&d);
  }
  BlockObjective(const BlockObjective&) = delete;
  BlockObjective& operator=(const BlockObjective&) = delete;

  LmlValue operator()(const Hyperparameters& theta, bool want_grad) const {
    const Point pt = at(theta);
    LmlValue total;
    total.value = pt.value;
    if (want_grad) total.gradient = pt.gradient();
    return total;
  }

  /// Factorized evaluation whose gradient is only formed on request.
  struct Point {
    std::vector<LmlTerm> terms;
    double value = 0.0;

    Vector gradient() const {
      Vector g = Vector::Zero(kNumHyperparameters);
      for (const auto& t : terms) g += t.gradient();
      return g;
    }
  };

  Point at(const Hyperparameters& theta) const {
    Point pt;
    pt.terms.reserve(dist_.size());
    for (std::size_t i = 0; i < dist_.size(); ++i) {
      pt.terms.emplace_back(*dist_[i], targets_[i], theta);
      pt.value += pt.terms.back().value();
    }
    return pt;
  }

  const ChannelDistances& first_distances() const { return *dist_.front(); }

 private:
  std::vector<ChannelDistances> owned_;
  std::vector<const ChannelDistances*> dist_;
  std::vector<Matrix> targets_;
};

InitResult init_from_distances(const ChannelDistances& dist, const Matrix& targets,
                               const TimeBlock& block) {
  const Eigen::Index n = dist.rows();
  if (n < 2) throw ArgumentError("hyperparameter initialization needs at least two landings");
  InitResult out;
  bool all_identical = true;
  std::vector<double> pairs;
  pairs.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (std::size_t k = 0; k < kChannels; ++k) {
    pairs.clear();
    for (Eigen::Index j = 1; j < n; ++j)
      for (Eigen::Index i = 0; i < j; ++i) pairs.push_back(dist.d[k](i, j));
    const auto mid = pairs.begin() + static_cast<std::ptrdiff_t>(pairs.size() / 2);
    std::nth_element(pairs.begin(), mid, pairs.end());
    double median = *mid;
    if (pairs.size() % 2 == 0) {
      const double lower = *std::max_element(pairs.begin(), mid);
      median = 0.5 * (median + lower);
    }
    if (*std::max_element(pairs.begin(), pairs.end()) > 0.0) all_identical = false;
    out.theta.length_scales[k] = median > 0.0 ? median : 1.0;
  }

  const auto block_targets = targets.middleCols(block.first, block.length());
  const double mean = block_targets.mean();
  const double var = (block_targets.array() - mean).square().mean();
  double tau2 = var > 0.0 && std::isfinite(var) ? var : 1.0;
  if (all_identical) {
    out.degenerate = true;
    out.theta.length_scales.fill(1.0);
    tau2 = 1.0;
  }
  out.theta.amplitude = std::sqrt(tau2);
  out.theta.noise_std = std::sqrt(0.1 * tau2);
  return out;
}

// Log-space box around the base initialization.
constexpr double kLogBoxHalfWidth = 20.0;

BlockFit optimize(const BlockObjective& objective, const InitResult& init,
                  const TimeBlock& block, const OptimizerConfig& cfg) {
  cfg.validate();
  const Vector base = init.theta.to_log();
  const Vector lo = base.array() - kLogBoxHalfWidth;
  const Vector hi = base.array() + kLogBoxHalfWidth;

  using Point = BlockObjective::Point;
  auto evaluate = [&](const Vector& p) -> std::optional<Point> {
    try {
      auto v = objective.at(Hyperparameters::from_log(p));
      if (!std::isfinite(v.value)) return std::nullopt;
      return v;
    } catch (const NumericError&) {
      return std::nullopt;  // treated as -infinity
    }
  };

  BlockFit best;
  best.lml = -std::numeric_limits<double>::infinity();
  best.theta = init.theta;
  bool any_improved = false;
  bool have_best = false;

  std::mt19937_64 rng(derive_seed(cfg.seed, "restarts", static_cast<std::uint64_t>(block.first),
                                  static_cast<std::uint64_t>(block.last)));
  std::uniform_real_distribution<double> factor(std::log(1.0 / 3.0), std::log(3.0));

  for (int r = 0; r < cfg.restarts; ++r) {
    Vector p = base;
    if (r > 0) {
      for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += factor(rng);
    }
    std::vector<double> trace;
    auto current = evaluate(p);
    if (r == 0) best.init_lml = current ? current->value : -std::numeric_limits<double>::infinity();
    if (!current) {
      best.traces.push_back(std::move(trace));
      continue;
    }
    trace.push_back(current->value);

    double step = cfg.init_step;
    for (int it = 0; it < cfg.max_iters; ++it) {
      const Vector g = current->gradient();
      const double gnorm = g.norm();
      if (!(gnorm > 0.0) || !std::isfinite(gnorm)) break;
      const Vector dir = g / gnorm;

      std::optional<Point> accepted;
      Vector trial;
      for (int h = 0; h <= cfg.max_halvings; ++h) {
        trial = (p + step * dir).cwiseMax(lo).cwiseMin(hi);
        if (trial == p) break;
        auto v = evaluate(trial);
        if (v && v->value > current->value) {
          accepted = std::move(v);
          break;
        }
        step *= 0.5;
      }
      if (!accepted) break;

      const double gain = accepted->value - current->value;
      const double scale = std::max(std::abs(current->value), 1.0);
      p = trial;
      current = std::move(accepted);
      trace.push_back(current->value);
      ++best.iterations;
      if (gain <= cfg.convergence_tol * scale) break;
      step = std::min(2.0 * step, 4.0 * cfg.init_step);
    }

    if (trace.size() > 1) any_improved = true;
    if (!have_best || current->value > best.lml) {
      best.lml = current->value;
      best.theta = Hyperparameters::from_log(p);
      have_best = true;
    }
    best.traces.push_back(std::move(trace));
  }

  if (!have_best) {
    best.theta = init.theta;
    best.lml = best.init_lml;
  }
  best.warning = !any_improved || init.degenerate;
  return best;
}

}  // namespace

LmlValue block_lml(std::span<const InputVector> train, const Matrix& targets,
                   const TimeBlock& block, const Hyperparameters& theta, const TimeWeight& w,
                   bool want_grad) {
  if (targets.rows() != static_cast<Eigen::Index>(train.size()))
    throw ArgumentError("targets rows differ from training set size");
  return BlockObjective(train, targets, block, w)(theta, want_grad);
}

InitResult init_hyperparameters(std::span<const InputVector> train, const Matrix& targets,
                                const TimeBlock& block, const TimeWeight& w) {
  check_block(targets, block);
  if (train.size() < 2) throw ArgumentError("hyperparameter initialization needs at least two landings");
  return init_from_distances(channel_distances(train, w, w.time_invariant() ? kFullHorizon : block.last),
                             targets, block);
}

BlockFit fit_block(std::span<const InputVector> train, const Matrix& targets,
                   const TimeBlock& block, const OptimizerConfig& cfg, const TimeWeight& w) {
  if (targets.rows() != static_cast<Eigen::Index>(train.size()))
    throw ArgumentError("targets rows differ from training set size");
  const BlockObjective objective(train, targets, block, w);
  const auto init = w.time_invariant()
                        ? init_from_distances(objective.first_distances(), targets, block)
                        : init_hyperparameters(train, targets, block, w);
  return optimize(objective, init, block, cfg);
}

GpModel fit_model(const FlightDatabase& db, const BlockScheme& scheme, const FitOptions& options,
                  std::vector<BlockFit>* fits) {
  if (db.empty()) throw ArgumentError("cannot fit a model on an empty database");
  if (scheme.horizon() != db.horizon())
    throw ArgumentError("block scheme horizon differs from database horizon");
  options.optimizer.validate();

  const auto raw_inputs = db.inputs();
  const Matrix targets = db.targets();

  GpModel model;
  model.horizon = db.horizon();
  model.blocks = scheme;
  model.weight = options.weight;
  model.scaling = options.standardize ? ChannelScaling::fit(raw_inputs) : ChannelScaling{};
  model.train_inputs = raw_inputs;
  model.data_digest = db.digest();
  for (const auto& l : db.landings()) model.train_ids.push_back(l.id);

  const auto inputs = model.scaling.apply(raw_inputs);
  const bool invariant = options.weight.time_invariant();
  ChannelDistances shared;
  if (invariant) shared = channel_distances(inputs, options.weight);

  std::vector<BlockFit> block_fits(scheme.size());
  parallel_for(scheme.size(), options.threads, [&](std::size_t m) {
    const BlockObjective objective(inputs, targets, scheme[m], options.weight,
                                   invariant ? &shared : nullptr);
    const auto init = invariant ? init_from_distances(shared, targets, scheme[m])
                                : init_hyperparameters(inputs, targets, scheme[m], options.weight);
    block_fits[m] = optimize(objective, init, scheme[m], options.optimizer);
  });

  for (const auto& f : block_fits) {
    model.theta.push_back(f.theta);
    model.fit_warnings.push_back(f.warning);
  }

  model.alpha.resize(targets.rows(), targets.cols());
  if (invariant) {
    parallel_for(scheme.size(), options.threads, [&](std::size_t m) {
      const auto& th = model.theta[m];
      const auto factor = factorize(shared.kernel(th), th.noise_std,
                                    kJitterFactor * th.amplitude * th.amplitude);
      const TimeBlock& b = scheme[m];
      model.alpha.middleCols(b.first, b.length()) =
          factor.solve(Matrix(targets.middleCols(b.first, b.length())));
    });
  } else {
    parallel_for(static_cast<std::size_t>(model.horizon + 1), options.threads, [&](std::size_t i) {
      const int t = static_cast<int>(i);
      const auto& th = model.theta_at(t);
      const auto factor = factorize(channel_distances(inputs, options.weight, t).kernel(th),
                                    th.noise_std, kJitterFactor * th.amplitude * th.amplitude);
      model.alpha.col(t) = factor.solve(Vector(targets.col(t)));
    });
  }

  if (fits) *fits = std::move(block_fits);
  return model;
}

}  // namespace decelgp
