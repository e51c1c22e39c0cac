#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "decelgp/blocks.hpp"
#include "decelgp/dataset.hpp"
#include "decelgp/gp_core.hpp"
#include "decelgp/hyperfit.hpp"

namespace decelgp {

/// Shared surface of every comparison model: fit on a database with targets,
/// then map test inputs to n_test x (T+1) deceleration profiles.
class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual void fit(const FlightDatabase& train) = 0;
  /// Throws std::logic_error before fit().
  virtual Matrix predict(std::span<const Landing> test) const = 0;
  virtual std::string label() const = 0;
};

using RegressorFactory = std::function<std::unique_ptr<Regressor>()>;

/// Which inputs the per-timestep baselines see.
enum class FeatureMode {
  /// (m, e, v^t, p^t, b^t, delta^t) at time t only.
  PerTime,
  /// The whole flattened 6 (T+1) trajectory at every t.
  FullTrajectory,
};

const char* to_string(FeatureMode mode);
FeatureMode parse_feature_mode(const std::string& name);

/// n x p design for time t (no intercept column).
Matrix design_matrix(std::span<const Landing> landings, int t, FeatureMode mode);

// ---------------------------------------------------------------------------
// Linear regression

struct LrState {
  FeatureMode features = FeatureMode::PerTime;
  int horizon = 0;
  /// coefficients[t] = (intercept, slopes...)
  std::vector<Vector> coefficients;
  /// Set for every t whose design was rank deficient (minimum-norm solution).
  std::vector<bool> rank_deficient;
};

LrState lr_fit(const FlightDatabase& db, FeatureMode features = FeatureMode::PerTime);
Matrix lr_predict(const LrState& state, std::span<const Landing> test);

// ---------------------------------------------------------------------------
// CART

inline constexpr std::size_t kLeafMin = 5;

/// Binary regression tree stored in preorder: an internal node's left child
/// is the next node, `right` indexes the right child.
class CartTree {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    int right = -1;
    double threshold = 0.0;  // x[feature] <= threshold goes left
    double value = 0.0;      // mean target of the node's samples
    std::uint32_t count = 0;
  };

  const std::vector<Node>& nodes() const { return nodes_; }
  std::vector<Node>& mutable_nodes() { return nodes_; }
  std::size_t leaf_count() const;
  double predict(std::span<const double> row) const;
  /// Index of the leaf reached by `row`.
  std::size_t leaf_of(std::span<const double> row) const;

 private:
  std::vector<Node> nodes_;
};

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double sse = 0.0;  // total left + right SSE
};

/// Best (feature, threshold) over all features and all midpoints between
/// consecutive distinct sorted values, minimizing total SSE; ties go to the
/// lowest feature, then the lowest threshold. feature = -1 if no split exists.
SplitChoice best_split(const Matrix& x, const Vector& y, std::span<const std::size_t> rows);

/// Greedy CART on the given rows of (x, y); rows may repeat (bootstrap).
/// Nodes with fewer than leaf_min rows, or with no SSE-reducing split, are leaves.
CartTree cart_fit(const Matrix& x, const Vector& y, std::span<const std::size_t> rows,
                  std::size_t leaf_min = kLeafMin);
CartTree cart_fit(const Matrix& x, const Vector& y, std::size_t leaf_min = kLeafMin);
double cart_predict(const CartTree& tree, std::span<const double> row);

// ---------------------------------------------------------------------------
// Random forest

struct ForestConfig {
  int n_trees = 500;
  std::uint64_t seed = 0;
  FeatureMode features = FeatureMode::PerTime;
  /// Test hook: fit every tree on the full sample instead of a bootstrap.
  bool bootstrap = true;
  unsigned threads = 1;
};

struct ForestState {
  ForestConfig config;
  int horizon = 0;
  /// trees[t][i]
  std::vector<std::vector<CartTree>> trees;
};

ForestState rf_fit(const FlightDatabase& db, const ForestConfig& cfg);
Matrix rf_predict(const ForestState& state, std::span<const Landing> test);

// ---------------------------------------------------------------------------
// Regressor adapters

class LinearRegressor : public Regressor {
 public:
  explicit LinearRegressor(FeatureMode features = FeatureMode::PerTime) : features_(features) {}
  void fit(const FlightDatabase& train) override;
  Matrix predict(std::span<const Landing> test) const override;
  std::string label() const override;
  const LrState& state() const;

 private:
  FeatureMode features_;
  std::optional<LrState> state_;
};

class ForestRegressor : public Regressor {
 public:
  explicit ForestRegressor(ForestConfig cfg) : cfg_(cfg) {}
  void fit(const FlightDatabase& train) override;
  Matrix predict(std::span<const Landing> test) const override;
  std::string label() const override;
  const ForestState& state() const;

 private:
  ForestConfig cfg_;
  std::optional<ForestState> state_;
};

class GpRegressor : public Regressor {
 public:
  GpRegressor(int n_blocks, FitOptions options) : n_blocks_(n_blocks), options_(options) {}
  void fit(const FlightDatabase& train) override;
  Matrix predict(std::span<const Landing> test) const override;
  std::string label() const override;
  const GpModel& model() const;

 private:
  int n_blocks_;
  FitOptions options_;
  std::optional<GpModel> model_;
};

std::vector<InputVector> inputs_of(std::span<const Landing> landings);

}  // namespace decelgp
