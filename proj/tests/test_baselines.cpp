#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <numeric>
#include <set>

#include "decelgp/baselines.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace decelgp;

namespace {

std::vector<double> row_of(const Matrix& x, Eigen::Index i) {
  std::vector<double> r(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) r[static_cast<std::size_t>(j)] = x(i, j);
  return r;
}

/// Replaces every landing's targets with f(landing index, t).
template <class F>
FlightDatabase with_targets(const FlightDatabase& db, F f) {
  auto landings = db.landings();
  for (std::size_t i = 0; i < landings.size(); ++i)
    for (int t = 0; t <= db.horizon(); ++t) (*landings[i].decel_force)[t] = f(i, t);
  return FlightDatabase(db.horizon(), landings);
}

double sse(const Vector& y, const std::vector<std::size_t>& rows) {
  if (rows.empty()) return 0.0;
  double mean = 0.0;
  for (auto r : rows) mean += y[static_cast<Eigen::Index>(r)];
  mean /= static_cast<double>(rows.size());
  double s = 0.0;
  for (auto r : rows) s += std::pow(y[static_cast<Eigen::Index>(r)] - mean, 2);
  return s;
}

/// Exhaustive split search with the same tie rule.
SplitChoice brute_force_split(const Matrix& x, const Vector& y) {
  SplitChoice best;
  best.sse = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> all(static_cast<std::size_t>(x.rows()));
  std::iota(all.begin(), all.end(), std::size_t{0});
  const double tie = 1e-12 * sse(y, all);
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    std::set<double> values;
    for (Eigen::Index i = 0; i < x.rows(); ++i) values.insert(x(i, f));
    std::vector<double> v(values.begin(), values.end());
    for (std::size_t k = 0; k + 1 < v.size(); ++k) {
      const double thr = v[k] + (v[k + 1] - v[k]) / 2;
      std::vector<std::size_t> left, right;
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        (x(i, f) <= thr ? left : right).push_back(static_cast<std::size_t>(i));
      const double s = sse(y, left) + sse(y, right);
      if (s < best.sse - tie) best = {static_cast<int>(f), thr, s};
    }
  }
  return best;
}

/// Rows reaching each node when every training row is routed from the root.
std::vector<std::vector<std::size_t>> route(const CartTree& tree, const Matrix& x) {
  std::vector<std::vector<std::size_t>> at(tree.nodes().size());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto r = row_of(x, i);
    std::size_t n = 0;
    for (;;) {
      at[n].push_back(static_cast<std::size_t>(i));
      const auto& node = tree.nodes()[n];
      if (node.feature < 0) break;
      n = r[static_cast<std::size_t>(node.feature)] <= node.threshold
              ? n + 1
              : static_cast<std::size_t>(node.right);
    }
  }
  return at;
}

}  // namespace

TEST_CASE("per-time design matrix") {
  const auto db = testing::small_db(3, 5, 1);
  const Matrix d = design_matrix(db.landings(), 2, FeatureMode::PerTime);
  CHECK(d.rows() == 3);
  CHECK(d.cols() == 6);
  CHECK(d(1, 0) == db[1].mass);
  CHECK(d(1, 1) == db[1].kinetic_energy);
  CHECK(d(1, 2) == db[1].speed[2]);
  CHECK(d(1, 3) == db[1].thrust[2]);
  CHECK(d(1, 4) == db[1].brake[2]);
  CHECK(d(1, 5) == db[1].drag[2]);
  const Matrix full = design_matrix(db.landings(), 2, FeatureMode::FullTrajectory);
  CHECK(full.cols() == 36);
  CHECK(parse_feature_mode(to_string(FeatureMode::FullTrajectory)) ==
        FeatureMode::FullTrajectory);
  CHECK_THROWS_AS(parse_feature_mode("splines"), ArgumentError);
}

TEST_CASE("linear regression recovers an exactly linear model") {
  const auto base = testing::small_db(20, 12, 2);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  std::vector<Vector> coef;
  for (int t = 0; t <= 12; ++t) {
    Vector c(7);
    c << n(rng), n(rng) * 1e-4, n(rng) * 1e-7, n(rng), n(rng) * 1e-2, n(rng) * 1e-2, n(rng) * 1e-3;
    coef.push_back(c);
  }
  auto truth = [&](const Landing& l, int t) {
    const auto& c = coef[static_cast<std::size_t>(t)];
    return c[0] + c[1] * l.mass + c[2] * l.kinetic_energy + c[3] * l.speed[t] +
           c[4] * l.thrust[t] + c[5] * l.brake[t] + c[6] * l.drag[t];
  };
  const auto db = with_targets(base, [&](std::size_t i, int t) { return truth(base[i], t); });
  const auto state = lr_fit(db);
  const Matrix fitted = lr_predict(state, db.landings());
  const Matrix y = db.targets();
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index t = 0; t < y.cols(); ++t)
      CHECK(std::abs(fitted(i, t) - y(i, t)) < 1e-8 * std::max(1.0, std::abs(y(i, t))));

  const auto test = testing::small_db(5, 12, 99);
  const Matrix pred = lr_predict(state, test.landings());
  for (std::size_t i = 0; i < 5; ++i)
    for (int t = 0; t <= 12; ++t) {
      const double expect = truth(test[i], t);
      CHECK(std::abs(pred(static_cast<Eigen::Index>(i), t) - expect) <
            1e-8 * std::max(1.0, std::abs(expect)));
    }
}

TEST_CASE("linear regression of constant targets") {
  const auto db = with_targets(testing::small_db(15, 6, 4), [](std::size_t, int) { return 7.25; });
  const auto state = lr_fit(db);
  const Matrix pred = lr_predict(state, testing::small_db(4, 6, 5).landings());
  CHECK((pred.array() - 7.25).abs().maxCoeff() < 1e-9);
  for (int t = 3; t <= 6; ++t) {
    const auto& c = state.coefficients[static_cast<std::size_t>(t)];
    CHECK(c[0] == doctest::Approx(7.25).epsilon(1e-9));
    const Matrix d = design_matrix(db.landings(), t, FeatureMode::PerTime);
    for (Eigen::Index j = 1; j < c.size(); ++j)
      CHECK(std::abs(c[j]) * d.col(j - 1).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("linear regression residuals are orthogonal to the design") {
  const auto db = testing::small_db(20, 15, 6);
  const auto state = lr_fit(db);
  const Matrix fitted = lr_predict(state, db.landings());
  const Matrix y = db.targets();
  for (int t = 0; t <= 15; ++t) {
    const Vector r = y.col(t) - fitted.col(t);
    Matrix a(20, 7);
    a.col(0).setOnes();
    a.rightCols(6) = design_matrix(db.landings(), t, FeatureMode::PerTime);
    for (Eigen::Index j = 0; j < 7; ++j) {
      const double norm = a.col(j).norm() * r.norm();
      if (norm == 0.0) continue;
      CHECK(std::abs(a.col(j).dot(r)) / norm < 1e-8);
    }
  }
}

TEST_CASE("rank-deficient designs are flagged and still fit") {
  auto landings = testing::small_db(12, 8, 7).landings();
  for (auto& l : landings) l.mass = 60000.0;
  const FlightDatabase db(8, landings);
  const auto state = lr_fit(db);
  for (bool flag : state.rank_deficient) CHECK(flag);
  const Matrix fitted = lr_predict(state, db.landings());
  const Matrix y = db.targets();
  for (int t = 0; t <= 8; ++t) {
    const Vector r = y.col(t) - fitted.col(t);
    const Matrix a = design_matrix(db.landings(), t, FeatureMode::PerTime);
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double norm = a.col(j).norm() * r.norm();
      if (norm == 0.0) continue;
      CHECK(std::abs(a.col(j).dot(r)) / norm < 1e-8);
    }
  }
  const auto full = lr_fit(testing::small_db(20, 8, 7));
  CHECK_FALSE(full.rank_deficient[8]);
}

TEST_CASE("fewer than five samples make a single leaf") {
  Matrix x(4, 2);
  x << 1, 5, 2, 6, 3, 7, 4, 8;
  Vector y(4);
  y << 1, 2, 3, 10;
  const auto tree = cart_fit(x, y);
  REQUIRE(tree.nodes().size() == 1);
  CHECK(tree.leaf_count() == 1);
  const std::vector<double> probe{2.5, 0.0};
  CHECK(cart_predict(tree, probe) == 4.0);
}

TEST_CASE("a step function is split at the step") {
  Matrix x(10, 1);
  Vector y(10);
  for (int i = 0; i < 10; ++i) {
    x(i, 0) = i;
    y[i] = i < 5 ? 1.0 : 3.0;
  }
  const auto split = best_split(x, y, std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(split.feature == 0);
  CHECK(split.threshold == 4.5);
  CHECK(split.sse == 0.0);
  const auto tree = cart_fit(x, y);
  CHECK(tree.nodes()[0].feature == 0);
  CHECK(tree.nodes()[0].threshold == 4.5);
  CHECK(tree.leaf_count() == 2);
  for (int i = 0; i < 10; ++i) CHECK(cart_predict(tree, row_of(x, i)) == y[i]);
}

TEST_CASE("best split matches exhaustive enumeration") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0, 1);
  std::uniform_int_distribution<int> small(0, 3);
  std::vector<std::size_t> rows{0, 1, 2, 3, 4, 5, 6, 7};
  for (int trial = 0; trial < 300; ++trial) {
    Matrix x(8, 2);
    Vector y(8);
    for (int i = 0; i < 8; ++i) {
      x(i, 0) = trial % 2 ? small(rng) : n(rng);
      x(i, 1) = trial % 3 ? small(rng) : n(rng);
      y[i] = trial % 5 ? n(rng) : small(rng);
    }
    const auto got = best_split(x, y, rows);
    const auto want = brute_force_split(x, y);
    if (want.feature < 0) {
      CHECK(got.feature == -1);
      continue;
    }
    INFO("trial " << trial << " got sse " << got.sse << " want " << want.sse);
    CHECK(got.feature == want.feature);
    CHECK(got.threshold == want.threshold);
    CHECK(got.sse == doctest::Approx(want.sse).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("tree splits reduce SSE and routing matches the stored leaves") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index rows = 30 + 10 * trial;
    const Matrix x = testing::random_matrix(rows, 3, rng);
    Vector y(rows);
    for (Eigen::Index i = 0; i < rows; ++i)
      y[i] = std::sin(2 * x(i, 0)) + (x(i, 1) > 0 ? 1.0 : 0.0) + 0.1 * n(rng);
    const auto tree = cart_fit(x, y);
    const auto at = route(tree, x);
    const auto& nodes = tree.nodes();
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      REQUIRE_FALSE(at[k].empty());
      CHECK(nodes[k].count == at[k].size());
      double mean = 0.0;
      for (auto r : at[k]) mean += y[static_cast<Eigen::Index>(r)];
      mean /= static_cast<double>(at[k].size());
      CHECK(nodes[k].value == doctest::Approx(mean).epsilon(1e-12).scale(1.0));
      if (nodes[k].feature >= 0) {
        CHECK(at[k].size() >= kLeafMin);
        const auto& l = at[k + 1];
        const auto& r = at[static_cast<std::size_t>(nodes[k].right)];
        CHECK(l.size() + r.size() == at[k].size());
        CHECK(sse(y, l) + sse(y, r) < sse(y, at[k]));
      }
    }
  }
}

TEST_CASE("bootstrap rows may repeat") {
  Matrix x(6, 1);
  x << 0, 1, 2, 3, 4, 5;
  Vector y(6);
  y << 0, 0, 0, 5, 5, 5;
  const std::vector<std::size_t> rows{0, 0, 1, 3, 3, 3, 4};
  const auto tree = cart_fit(x, y, rows);
  CHECK(tree.nodes()[0].count == 7);
  CHECK(tree.nodes()[0].threshold == 2.0);
  CHECK_THROWS_AS(cart_fit(x, y, std::vector<std::size_t>{}), ArgumentError);
}

TEST_CASE("forest without bootstrap equals a single CART tree") {
  const auto db = testing::small_db(25, 6, 10);
  ForestConfig cfg;
  cfg.n_trees = 1;
  cfg.bootstrap = false;
  const auto forest = rf_fit(db, cfg);
  const auto test = testing::small_db(4, 6, 11);
  const Matrix pred = rf_predict(forest, test.landings());
  const Matrix y = db.targets();
  for (int t = 0; t <= 6; ++t) {
    const auto tree = cart_fit(design_matrix(db.landings(), t, FeatureMode::PerTime),
                               Vector(y.col(t)));
    const Matrix d = design_matrix(test.landings(), t, FeatureMode::PerTime);
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(pred(i, t) == cart_predict(tree, row_of(d, i)));
  }
}

TEST_CASE("forest of constant targets predicts the constant exactly") {
  const auto db = with_targets(testing::small_db(12, 4, 12), [](std::size_t, int) { return 3.5; });
  ForestConfig cfg;
  cfg.n_trees = 20;
  const Matrix pred = rf_predict(rf_fit(db, cfg), testing::small_db(3, 4, 13).landings());
  CHECK((pred.array() == 3.5).all());
}

TEST_CASE("forest prediction is the mean of its trees") {
  const auto db = testing::small_db(20, 5, 14);
  ForestConfig cfg;
  cfg.n_trees = 10;
  cfg.seed = 3;
  const auto forest = rf_fit(db, cfg);
  const auto test = testing::small_db(3, 5, 15);
  const Matrix pred = rf_predict(forest, test.landings());
  for (int t = 0; t <= 5; ++t) {
    const Matrix d = design_matrix(test.landings(), t, FeatureMode::PerTime);
    const auto& trees = forest.trees[static_cast<std::size_t>(t)];
    REQUIRE(trees.size() == 10);
    for (Eigen::Index i = 0; i < 3; ++i) {
      double sum = 0.0;
      for (const auto& tree : trees) sum += tree.predict(row_of(d, i));
      CHECK(std::abs(pred(i, t) - sum / 10.0) <= 1e-12 * std::max(1.0, std::abs(pred(i, t))));
    }
  }
}

TEST_CASE("forest is deterministic for a seed and any thread count") {
  const auto db = testing::small_db(15, 4, 16);
  ForestConfig cfg;
  cfg.n_trees = 8;
  cfg.seed = 21;
  const auto test = testing::small_db(3, 4, 17);
  const Matrix a = rf_predict(rf_fit(db, cfg), test.landings());
  cfg.threads = 3;
  const Matrix b = rf_predict(rf_fit(db, cfg), test.landings());
  CHECK(a == b);
  cfg.seed = 22;
  const Matrix c = rf_predict(rf_fit(db, cfg), test.landings());
  CHECK_FALSE(a == c);
}

TEST_CASE("regressor adapters") {
  const auto db = testing::small_db(12, 5, 18);
  const auto test = testing::small_db(2, 5, 19);

  LinearRegressor lr;
  CHECK(lr.label() == "lr");
  CHECK_THROWS_AS(lr.predict(test.landings()), std::logic_error);
  lr.fit(db);
  CHECK(lr.predict(test.landings()) == lr_predict(lr.state(), test.landings()));
  CHECK(LinearRegressor(FeatureMode::FullTrajectory).label() == "lr-full");

  ForestConfig cfg;
  cfg.n_trees = 3;
  ForestRegressor rf(cfg);
  CHECK(rf.label() == "rf");
  CHECK_THROWS_AS(rf.predict(test.landings()), std::logic_error);
  rf.fit(db);
  CHECK(rf.predict(test.landings()).cols() == 6);

  FitOptions opts;
  opts.optimizer.max_iters = 10;
  opts.optimizer.restarts = 1;
  GpRegressor gp(2, opts);
  CHECK(gp.label() == "gp-N2");
  CHECK_THROWS_AS(gp.predict(test.landings()), std::logic_error);
  gp.fit(db);
  CHECK(gp.predict(test.landings()) == predict_profile(gp.model(), inputs_of(test.landings())));
  opts.weight = TimeWeight::causal_box();
  CHECK(GpRegressor(1, opts).label() == "gp-N1-causal");
}
