#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "decelgp/blocks.hpp"
#include "decelgp/gp_core.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace decelgp;

namespace {

double jitter_of(const Hyperparameters& th) {
  return kJitterFactor * th.amplitude * th.amplitude;
}

/// A + (sigma^2 + jitter) I, inverted densely.
Matrix dense_inverse(const Matrix& k, const Hyperparameters& th) {
  Matrix a = k;
  a.diagonal().array() += th.noise_std * th.noise_std + jitter_of(th);
  return a.inverse();
}

GpModel random_model(std::mt19937_64& rng, std::size_t n, int horizon, int n_blocks,
                     Matrix* targets) {
  GpModel m;
  m.horizon = horizon;
  m.blocks = block_scheme(horizon, n_blocks);
  m.train_inputs = testing::random_inputs(n, horizon, rng);
  for (std::size_t i = 0; i < n; ++i) m.train_ids.push_back(100 + i);
  for (int b = 0; b < n_blocks; ++b) {
    m.theta.push_back(testing::random_theta(rng, horizon));
    m.fit_warnings.push_back(b % 2 == 1);
  }
  *targets = testing::random_matrix(static_cast<Eigen::Index>(n), horizon + 1, rng);
  m.alpha.resize(static_cast<Eigen::Index>(n), horizon + 1);
  for (int t = 0; t <= horizon; ++t) {
    const auto& th = m.theta_at(t);
    const auto f = factorize(gram(m.train_inputs, th), th.noise_std);
    m.alpha.col(t) = f.solve(Vector(targets->col(t)));
  }
  m.data_digest = "0123456789abcdef";
  return m;
}

}  // namespace

TEST_CASE("factorize examples") {
  const auto one = factorize(Matrix::Constant(1, 1, 1.0), 0.0, 0.0);
  CHECK(one.lower()(0, 0) == 1.0);
  const auto two = factorize(Matrix::Identity(2, 2), 1.0, 0.0);
  const Matrix l = two.lower();
  CHECK(l(0, 0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(l(1, 1) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(l(1, 0) == 0.0);
  CHECK(l(0, 1) == 0.0);
  const auto jittered = factorize(Matrix::Identity(2, 2), 1.0);
  CHECK(jittered.lower()(0, 0) == doctest::Approx(std::sqrt(2.0 + 1e-8)).epsilon(1e-15));
}

TEST_CASE("factor reconstructs K + sigma^2 I + jitter") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix b = testing::random_matrix(5, 5, rng);
    const Matrix k = b * b.transpose();
    const double sigma = 0.3;
    const double eps = 1e-8 * k.diagonal().maxCoeff();
    const auto f = factorize(k, sigma);
    Matrix target = k;
    target.diagonal().array() += sigma * sigma + eps;
    const Matrix l = f.lower();
    CHECK((l * l.transpose() - target).cwiseAbs().maxCoeff() < 1e-12 * target.norm());
    CHECK(f.log_det() == doctest::Approx(std::log(target.determinant())).epsilon(1e-10));
    CHECK((f.inverse() - target.inverse()).norm() < 1e-9 * target.inverse().norm());
  }
}

TEST_CASE("inverse of a large factor matches a dense inverse") {
  std::mt19937_64 rng(2);
  const Matrix b = testing::random_matrix(90, 90, rng);
  Matrix k = b * b.transpose() / 90.0;
  const auto f = factorize(k, 0.5);
  k.diagonal().array() += 0.25 + 1e-8 * k.diagonal().maxCoeff();
  const Matrix inv = k.inverse();
  const Matrix got = f.inverse();
  CHECK((got - inv).norm() < 1e-10 * inv.norm());
  CHECK(got == got.transpose());
}

TEST_CASE("non positive definite matrices raise a factorization error") {
  Matrix k(2, 2);
  k << 1, 2, 2, 1;
  CHECK_THROWS_AS(factorize(k, 0.0), FactorizationError);
  CHECK_THROWS_AS(factorize(Matrix::Zero(2, 3), 0.0), ArgumentError);
}

TEST_CASE("single landing posterior and likelihood closed forms") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = testing::random_inputs(1, 4, rng);
    const auto th = testing::random_theta(rng, 4);
    const double y = std::normal_distribution<double>(0, 3)(rng);
    const double tau2 = th.amplitude * th.amplitude;
    const double s = tau2 + th.noise_std * th.noise_std + jitter_of(th);

    const auto post = posterior(x, Vector::Constant(1, y), x, th);
    CHECK(post.mean[0] == doctest::Approx(tau2 / s * y).epsilon(1e-14));

    const auto lml = log_marginal_likelihood(x, Vector::Constant(1, y), th);
    const double expect = -0.5 * y * y / s - 0.5 * std::log(s) -
                          0.5 * std::log(2 * std::numbers::pi);
    CHECK(lml.value == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("posterior matches the dense inverse formulas") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = trial < 10 ? 4 : 5 + static_cast<std::size_t>(trial % 16);
    const auto xs = testing::random_inputs(n, 6, rng);
    const auto zs = testing::random_inputs(2, 6, rng);
    const auto th = testing::random_theta(rng, 6);
    const Vector y = testing::random_matrix(static_cast<Eigen::Index>(n), 1, rng);
    const TimeWeight w = trial % 3 == 0 ? TimeWeight::causal_box() : TimeWeight::uniform();
    const int t = trial % 3 == 0 ? 3 : kFullHorizon;

    const Matrix ainv = dense_inverse(gram(xs, th, w, t), th);
    const Matrix ks = cross_gram(zs, xs, th, w, t);
    const Vector mean = ks * ainv * y;
    const Matrix cov = gram(zs, th, w, t) - ks * ainv * ks.transpose();

    const auto post = posterior(xs, y, zs, th, w, true, t);
    REQUIRE(post.covariance.has_value());
    CHECK((post.mean - mean).cwiseAbs().maxCoeff() < 1e-8 * std::max(1.0, mean.norm()));
    CHECK((*post.covariance - cov).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("posterior covariance is symmetric, PSD and below tau^2") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 15; ++trial) {
    const std::size_t n = 3 + static_cast<std::size_t>(trial);
    const auto xs = testing::random_inputs(n, 5, rng);
    const auto zs = testing::random_inputs(1 + static_cast<std::size_t>(trial) % 20, 5, rng);
    const auto th = testing::random_theta(rng, 5);
    const Vector y = testing::random_matrix(static_cast<Eigen::Index>(n), 1, rng);
    const auto post = posterior(xs, y, zs, th, {}, true);
    const Matrix& s = *post.covariance;
    CHECK((s - s.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
    CHECK(s.diagonal().maxCoeff() <= th.amplitude * th.amplitude + 1e-10);
    CHECK(s.diagonal().minCoeff() >= 0.0);
  }
}

TEST_CASE("posterior mean interpolates training data as sigma vanishes") {
  std::mt19937_64 rng(6);
  const auto xs = testing::random_inputs(8, 10, rng);
  auto th = testing::random_theta(rng, 10);
  th.noise_std = 1e-6;
  const Vector y = testing::random_matrix(8, 1, rng);
  const auto post = posterior(xs, y, xs, th);
  for (Eigen::Index i = 0; i < y.size(); ++i) CHECK(testing::rel_err(post.mean[i], y[i]) < 1e-3);
}

TEST_CASE("posterior mean is linear in the targets") {
  std::mt19937_64 rng(7);
  const auto xs = testing::random_inputs(9, 5, rng);
  const auto zs = testing::random_inputs(4, 5, rng);
  const auto th = testing::random_theta(rng, 5);
  const Vector y1 = testing::random_matrix(9, 1, rng);
  const Vector y2 = testing::random_matrix(9, 1, rng);
  const double a = 1.7, b = -0.4;
  const Vector lhs = posterior(xs, a * y1 + b * y2, zs, th).mean;
  const Vector rhs = a * posterior(xs, y1, zs, th).mean + b * posterior(xs, y2, zs, th).mean;
  CHECK((lhs - rhs).norm() <= 1e-10 * rhs.norm());
}

TEST_CASE("likelihood gradient matches central differences") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto xs = testing::random_inputs(6, 8, rng);
    const auto th = testing::random_theta(rng, 8);
    const Vector y = testing::random_matrix(6, 1, rng);
    const TimeWeight w = trial % 2 ? TimeWeight::causal_box() : TimeWeight::uniform();
    const int t = trial % 2 ? 4 : kFullHorizon;
    const auto lml = log_marginal_likelihood(xs, y, th, w, true, t);
    REQUIRE(lml.gradient.has_value());
    const Vector p = th.to_log();
    const double h = 1e-5;
    for (int j = 0; j < kNumHyperparameters; ++j) {
      Vector up = p, down = p;
      up[j] += h;
      down[j] -= h;
      const double fd = (log_marginal_likelihood(xs, y, Hyperparameters::from_log(up), w,
                                                 false, t).value -
                         log_marginal_likelihood(xs, y, Hyperparameters::from_log(down), w,
                                                 false, t).value) /
                        (2 * h);
      CHECK(testing::rel_err((*lml.gradient)[j], fd) < 1e-5);
    }
  }
}

TEST_CASE("doubling the targets scales only the quadratic term") {
  std::mt19937_64 rng(9);
  const auto xs = testing::random_inputs(7, 6, rng);
  const auto th = testing::random_theta(rng, 6);
  const Vector y = testing::random_matrix(7, 1, rng);
  const auto f = factorize(gram(xs, th), th.noise_std);
  const double quad = -0.5 * y.dot(f.solve(y));
  const double v1 = log_marginal_likelihood(xs, y, th).value;
  const double v2 = log_marginal_likelihood(xs, Vector(2 * y), th).value;
  CHECK(v2 - v1 == doctest::Approx(3 * quad).epsilon(1e-10));
}

TEST_CASE("shared likelihood sums independent columns") {
  std::mt19937_64 rng(10);
  const auto xs = testing::random_inputs(6, 5, rng);
  const auto th = testing::random_theta(rng, 5);
  const Matrix y = testing::random_matrix(6, 3, rng);
  const auto dist = channel_distances(xs);
  const auto shared = lml_shared(dist, y, th, true);
  double sum = 0.0;
  Vector grad = Vector::Zero(kNumHyperparameters);
  for (Eigen::Index c = 0; c < 3; ++c) {
    const auto one = log_marginal_likelihood(xs, Vector(y.col(c)), th, {}, true);
    sum += one.value;
    grad += *one.gradient;
  }
  CHECK(shared.value == doctest::Approx(sum).epsilon(1e-12));
  CHECK((*shared.gradient - grad).norm() < 1e-10 * grad.norm());

  const LmlTerm term(dist, y, th);
  CHECK(term.value() == shared.value);
  CHECK(term.gradient() == *shared.gradient);
}

TEST_CASE("predict_profile equals per-time posterior means") {
  std::mt19937_64 rng(11);
  Matrix y;
  const auto model = random_model(rng, 5, 9, 3, &y);
  model.validate();
  const auto zs = testing::random_inputs(3, 9, rng);
  const Matrix got = predict_profile(model, zs);
  CHECK(got.rows() == 3);
  CHECK(got.cols() == 10);
  for (int t = 0; t <= 9; ++t) {
    const Vector expect = posterior(model.train_inputs, Vector(y.col(t)), zs, model.theta_at(t)).mean;
    CHECK((got.col(t) - expect).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, expect.norm()));
  }
  const Matrix var = predict_variance(model, zs);
  for (int t = 0; t <= 9; ++t) {
    const auto post = posterior(model.train_inputs, Vector(y.col(t)), zs, model.theta_at(t), {},
                                true);
    const Vector d = post.covariance->diagonal();
    CHECK((var.col(t) - d).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("predict_profile recovers a stored training landing") {
  std::mt19937_64 rng(12);
  GpModel m;
  Matrix y;
  m = random_model(rng, 6, 100, 1, &y);
  m.theta[0].noise_std = 1e-6;
  const auto& th = m.theta[0];
  const auto f = factorize(gram(m.train_inputs, th), th.noise_std);
  for (int t = 0; t <= 100; ++t) m.alpha.col(t) = f.solve(Vector(y.col(t)));
  const std::vector<InputVector> probe{m.train_inputs[2], m.train_inputs[4]};
  const Matrix got = predict_profile(m, probe);
  CHECK(got.rows() == 2);
  CHECK(got.cols() == 101);
  for (int t = 0; t <= 100; ++t) {
    CHECK(testing::rel_err(got(0, t), y(2, t)) < 1e-3);
    CHECK(testing::rel_err(got(1, t), y(4, t)) < 1e-3);
  }
}

TEST_CASE("predict rejects a horizon mismatch") {
  std::mt19937_64 rng(13);
  Matrix y;
  const auto model = random_model(rng, 4, 6, 2, &y);
  const auto zs = testing::random_inputs(1, 7, rng);
  CHECK_THROWS_AS(predict_profile(model, zs), ArgumentError);
}

TEST_CASE("model JSON round trip") {
  std::mt19937_64 rng(14);
  Matrix y;
  auto model = random_model(rng, 4, 12, 3, &y);
  model.weight = TimeWeight::causal_box();
  model.scaling.offset[2] = 0.1;
  model.scaling.scale[2] = 3.0;
  const auto text = model_to_json(model);
  const auto back = model_from_json(text);
  CHECK(model_to_json(back) == text);
  CHECK(back.blocks == model.blocks);
  CHECK(back.theta == model.theta);
  CHECK(back.fit_warnings == model.fit_warnings);
  CHECK(back.weight == model.weight);
  CHECK(back.scaling == model.scaling);
  CHECK(back.train_ids == model.train_ids);
  CHECK(back.alpha == model.alpha);
  CHECK(back.data_digest == model.data_digest);
  for (std::size_t i = 0; i < model.train_inputs.size(); ++i)
    CHECK(back.train_inputs[i] == model.train_inputs[i]);
  CHECK(text.find("\"format_version\":1") != std::string::npos);

  const auto dir = testing::scratch_dir("gp_core_model");
  save_model(model, (dir / "m.json").string());
  CHECK(model_to_json(load_model((dir / "m.json").string())) == text);

  CHECK_THROWS_AS(model_from_json("{"), SchemaError);
  auto bumped = text;
  bumped.replace(bumped.find("\"format_version\":1"), 18, "\"format_version\":2");
  CHECK_THROWS_AS(model_from_json(bumped), SchemaError);
}
