#include "decelgp/baselines.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

#include <Eigen/QR>

namespace decelgp {

const char* to_string(FeatureMode mode) {
  return mode == FeatureMode::PerTime ? "per_time" : "full";
}

FeatureMode parse_feature_mode(const std::string& name) {
  if (name == "per_time") return FeatureMode::PerTime;
  if (name == "full") return FeatureMode::FullTrajectory;
  throw ArgumentError("unknown feature mode '" + name + "' (expected per_time|full)");
}

std::vector<InputVector> inputs_of(std::span<const Landing> landings) {
  std::vector<InputVector> out;
  out.reserve(landings.size());
  for (const auto& l : landings) out.push_back(l.input());
  return out;
}

Matrix design_matrix(std::span<const Landing> landings, int t, FeatureMode mode) {
  const auto n = static_cast<Eigen::Index>(landings.size());
  if (mode == FeatureMode::PerTime) {
    Matrix x(n, static_cast<Eigen::Index>(kChannels));
    for (Eigen::Index i = 0; i < n; ++i) {
      const Landing& l = landings[static_cast<std::size_t>(i)];
      if (t < 0 || t > l.horizon()) throw ArgumentError("time outside landing horizon");
      x(i, 0) = l.mass;
      x(i, 1) = l.kinetic_energy;
      x(i, 2) = l.speed[t];
      x(i, 3) = l.thrust[t];
      x(i, 4) = l.brake[t];
      x(i, 5) = l.drag[t];
    }
    return x;
  }
  if (landings.empty()) return Matrix(0, 0);
  const Eigen::Index len = landings.front().speed.size();
  Matrix x(n, static_cast<Eigen::Index>(kChannels) * len);
  for (Eigen::Index i = 0; i < n; ++i) {
    const InputVector in = landings[static_cast<std::size_t>(i)].input();
    if (in.cols() != len) throw ArgumentError("landings have different horizons");
    for (Eigen::Index k = 0; k < in.rows(); ++k) x.row(i).segment(k * len, len) = in.row(k);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Linear regression

LrState lr_fit(const FlightDatabase& db, FeatureMode features) {
  if (db.empty()) throw ArgumentError("cannot fit linear regression on an empty database");
  const Matrix y = db.targets();
  LrState state;
  state.features = features;
  state.horizon = db.horizon();
  const std::span<const Landing> landings(db.landings());
  for (int t = 0; t <= db.horizon(); ++t) {
    const Matrix x = design_matrix(landings, t, features);
    Matrix a(x.rows(), x.cols() + 1);
    a.col(0).setOnes();
    a.rightCols(x.cols()) = x;
    // scale columns to unit max-abs before the rank decision
    Vector scale = a.cwiseAbs().colwise().maxCoeff().transpose();
    for (Eigen::Index j = 0; j < scale.size(); ++j)
      if (!(scale[j] > 0.0)) scale[j] = 1.0;
    const Matrix as = a * scale.cwiseInverse().asDiagonal();
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(as);
    Vector coef = cod.solve(Vector(y.col(t)));
    coef = coef.cwiseQuotient(scale);
    state.coefficients.push_back(std::move(coef));
    state.rank_deficient.push_back(cod.rank() < as.cols());
  }
  return state;
}

Matrix lr_predict(const LrState& state, std::span<const Landing> test) {
  Matrix out(static_cast<Eigen::Index>(test.size()), state.horizon + 1);
  for (int t = 0; t <= state.horizon; ++t) {
    const Matrix x = design_matrix(test, t, state.features);
    const Vector& c = state.coefficients[static_cast<std::size_t>(t)];
    out.col(t) = (x * c.tail(c.size() - 1)).array() + c[0];
  }
  return out;
}

// ---------------------------------------------------------------------------
// CART

std::size_t CartTree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.feature < 0; }));
}

std::size_t CartTree::leaf_of(std::span<const double> row) const {
  std::size_t i = 0;
  while (nodes_[i].feature >= 0) {
    const Node& n = nodes_[i];
    i = row[static_cast<std::size_t>(n.feature)] <= n.threshold ? i + 1
                                                                : static_cast<std::size_t>(n.right);
  }
  return i;
}

double CartTree::predict(std::span<const double> row) const { return nodes_[leaf_of(row)].value; }

double cart_predict(const CartTree& tree, std::span<const double> row) { return tree.predict(row); }

namespace {

double midpoint(double a, double b) {
  const double m = a + 0.5 * (b - a);
  return m < b ? m : a;
}

/// Row indices of one node, sorted by each feature (ties by row index).
using SortedRows = std::vector<std::vector<std::size_t>>;

SortedRows sort_rows(const Matrix& x, std::vector<std::size_t> rows) {
  std::sort(rows.begin(), rows.end());
  SortedRows out(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    auto& v = out[static_cast<std::size_t>(f)];
    v = rows;
    std::stable_sort(v.begin(), v.end(), [&](std::size_t a, std::size_t b) {
      return x(static_cast<Eigen::Index>(a), f) < x(static_cast<Eigen::Index>(b), f);
    });
  }
  return out;
}

/// Rows [begin, end) of every per-feature list form one node.
struct NodeRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

double node_mean(const Vector& y, const std::vector<std::size_t>& rows, NodeRange r) {
  double s = 0.0;
  for (std::size_t i = r.begin; i < r.end; ++i) s += y[static_cast<Eigen::Index>(rows[i])];
  return s / static_cast<double>(r.size());
}

// Candidates within this fraction of the node SSE count as ties; the first one wins.
constexpr double kSplitTieTol = 1e-12;

SplitChoice split_sorted(const Matrix& x, const Vector& y, const SortedRows& sorted,
                         NodeRange node, std::vector<double>& cy) {
  SplitChoice best;
  if (sorted.empty()) return best;
  const std::size_t n = node.size();
  if (n < 2) return best;
  const double mean = node_mean(y, sorted.front(), node);

  cy.resize(n);
  bool found = false;
  for (std::size_t f = 0; f < sorted.size(); ++f) {
    const std::size_t* rows = sorted[f].data() + node.begin;
    const double* col = x.col(static_cast<Eigen::Index>(f)).data();
    if (col[rows[0]] == col[rows[n - 1]]) continue;

    double total_s = 0.0, total_q = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      cy[i] = y[static_cast<Eigen::Index>(rows[i])] - mean;
      total_s += cy[i];
      total_q += cy[i] * cy[i];
    }
    double sl = 0.0, ql = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      sl += cy[i];
      ql += cy[i] * cy[i];
      const double a = col[rows[i]], b = col[rows[i + 1]];
      if (a == b) continue;
      const auto nl = static_cast<double>(i + 1);
      const auto nr = static_cast<double>(n - i - 1);
      const double sr = total_s - sl;
      const double sse_l = std::max(0.0, ql - sl * sl / nl);
      const double sse_r = std::max(0.0, (total_q - ql) - sr * sr / nr);
      const double sse = sse_l + sse_r;
      if (!found || sse < best.sse - kSplitTieTol * total_q) {
        found = true;
        best.feature = static_cast<int>(f);
        best.threshold = midpoint(a, b);
        best.sse = sse;
      }
    }
  }
  return best;
}

class CartBuilder {
 public:
  CartBuilder(const Matrix& x, const Vector& y, std::size_t leaf_min, SortedRows& sorted,
              CartTree& tree)
      : x_(x), y_(y), leaf_min_(leaf_min), sorted_(sorted), nodes_(tree.mutable_nodes()) {}

  void build(NodeRange node) {
    const std::size_t idx = nodes_.size();
    nodes_.emplace_back();
    const double mean = node_mean(y_, sorted_.front(), node);
    nodes_[idx].value = mean;
    nodes_[idx].count = static_cast<std::uint32_t>(node.size());
    if (node.size() < leaf_min_) return;

    double node_sse = 0.0;
    for (std::size_t i = node.begin; i < node.end; ++i) {
      const double d = y_[static_cast<Eigen::Index>(sorted_.front()[i])] - mean;
      node_sse += d * d;
    }
    const SplitChoice split = split_sorted(x_, y_, sorted_, node, cy_);
    if (split.feature < 0 || !(split.sse < node_sse)) return;

    const double* col = x_.col(split.feature).data();
    std::size_t mid = node.begin;
    for (auto& rows : sorted_) {
      scratch_.clear();
      std::size_t out = node.begin;
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t r = rows[i];
        if (col[r] <= split.threshold) {
          rows[out++] = r;
        } else {
          scratch_.push_back(r);
        }
      }
      std::copy(scratch_.begin(), scratch_.end(), rows.begin() + static_cast<std::ptrdiff_t>(out));
      mid = out;
    }
    nodes_[idx].feature = split.feature;
    nodes_[idx].threshold = split.threshold;
    build({node.begin, mid});
    nodes_[idx].right = static_cast<int>(nodes_.size());
    build({mid, node.end});
  }

 private:
  const Matrix& x_;
  const Vector& y_;
  std::size_t leaf_min_;
  SortedRows& sorted_;
  std::vector<CartTree::Node>& nodes_;
  std::vector<std::size_t> scratch_;
  std::vector<double> cy_;
};

CartTree cart_from_sorted(const Matrix& x, const Vector& y, SortedRows& sorted,
                          std::size_t leaf_min) {
  CartTree tree;
  CartBuilder(x, y, std::max<std::size_t>(leaf_min, 2), sorted, tree)
      .build({0, sorted.front().size()});
  return tree;
}

}  // namespace

SplitChoice best_split(const Matrix& x, const Vector& y, std::span<const std::size_t> rows) {
  if (x.cols() == 0 || rows.empty()) return {};
  const SortedRows sorted = sort_rows(x, std::vector<std::size_t>(rows.begin(), rows.end()));
  std::vector<double> cy;
  return split_sorted(x, y, sorted, {0, rows.size()}, cy);
}

CartTree cart_fit(const Matrix& x, const Vector& y, std::span<const std::size_t> rows,
                  std::size_t leaf_min) {
  if (rows.empty()) throw ArgumentError("cart_fit needs at least one sample");
  if (x.rows() != y.size()) throw ArgumentError("design and target sizes differ");
  if (x.cols() == 0) throw ArgumentError("cart_fit needs at least one feature");
  SortedRows sorted = sort_rows(x, std::vector<std::size_t>(rows.begin(), rows.end()));
  return cart_from_sorted(x, y, sorted, leaf_min);
}

CartTree cart_fit(const Matrix& x, const Vector& y, std::size_t leaf_min) {
  std::vector<std::size_t> rows(static_cast<std::size_t>(x.rows()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return cart_fit(x, y, rows, leaf_min);
}

// ---------------------------------------------------------------------------
// Random forest

ForestState rf_fit(const FlightDatabase& db, const ForestConfig& cfg) {
  if (db.empty()) throw ArgumentError("cannot fit a forest on an empty database");
  if (cfg.n_trees < 1) throw ArgumentError("n_trees must be at least 1");
  const Matrix y = db.targets();
  const std::span<const Landing> landings(db.landings());
  const std::size_t n = db.size();

  ForestState state;
  state.config = cfg;
  state.horizon = db.horizon();
  state.trees.resize(static_cast<std::size_t>(db.horizon() + 1));

  parallel_for(state.trees.size(), cfg.threads, [&](std::size_t ti) {
    const int t = static_cast<int>(ti);
    const Matrix x = design_matrix(landings, t, cfg.features);
    const Vector yt = y.col(t);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const SortedRows order = sort_rows(x, all);

    auto& trees = state.trees[ti];
    trees.reserve(static_cast<std::size_t>(cfg.n_trees));
    std::vector<std::size_t> count(n);
    SortedRows sorted(order.size());
    for (int k = 0; k < cfg.n_trees; ++k) {
      if (cfg.bootstrap) {
        std::fill(count.begin(), count.end(), 0);
        std::mt19937_64 rng(derive_seed(cfg.seed, "rf", ti, static_cast<std::uint64_t>(k)));
        for (std::size_t i = 0; i < n; ++i) ++count[static_cast<std::size_t>(rng() % n)];
      } else {
        std::fill(count.begin(), count.end(), 1);
      }
      for (std::size_t f = 0; f < order.size(); ++f) {
        sorted[f].clear();
        for (auto r : order[f]) sorted[f].insert(sorted[f].end(), count[r], r);
      }
      trees.push_back(cart_from_sorted(x, yt, sorted, kLeafMin));
    }
  });
  return state;
}

Matrix rf_predict(const ForestState& state, std::span<const Landing> test) {
  Matrix out(static_cast<Eigen::Index>(test.size()), state.horizon + 1);
  std::vector<double> row;
  for (int t = 0; t <= state.horizon; ++t) {
    const Matrix x = design_matrix(test, t, state.config.features);
    const auto& trees = state.trees[static_cast<std::size_t>(t)];
    row.resize(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) row[static_cast<std::size_t>(j)] = x(i, j);
      double sum = 0.0;
      for (const auto& tree : trees) sum += tree.predict(row);
      out(i, t) = sum / static_cast<double>(trees.size());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adapters

void LinearRegressor::fit(const FlightDatabase& train) { state_ = lr_fit(train, features_); }

Matrix LinearRegressor::predict(std::span<const Landing> test) const {
  return lr_predict(state(), test);
}

std::string LinearRegressor::label() const {
  return features_ == FeatureMode::PerTime ? "lr" : "lr-full";
}

const LrState& LinearRegressor::state() const {
  if (!state_) throw std::logic_error("linear regression used before fit");
  return *state_;
}

void ForestRegressor::fit(const FlightDatabase& train) { state_ = rf_fit(train, cfg_); }

Matrix ForestRegressor::predict(std::span<const Landing> test) const {
  return rf_predict(state(), test);
}

std::string ForestRegressor::label() const {
  return cfg_.features == FeatureMode::PerTime ? "rf" : "rf-full";
}

const ForestState& ForestRegressor::state() const {
  if (!state_) throw std::logic_error("random forest used before fit");
  return *state_;
}

void GpRegressor::fit(const FlightDatabase& train) {
  model_ = fit_model(train, block_scheme(train.horizon(), n_blocks_), options_);
}

Matrix GpRegressor::predict(std::span<const Landing> test) const {
  return predict_profile(model(), inputs_of(test));
}

std::string GpRegressor::label() const {
  std::string l = "gp-N" + std::to_string(n_blocks_);
  if (!options_.weight.time_invariant()) l += "-causal";
  return l;
}

const GpModel& GpRegressor::model() const {
  if (!model_) throw std::logic_error("GP regressor used before fit");
  return *model_;
}

}  // namespace decelgp
