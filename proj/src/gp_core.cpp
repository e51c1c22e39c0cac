#include "decelgp/gp_core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace decelgp {

namespace {

constexpr double kNegativeVarianceTolerance = 1e-10;

double clamp_variance(double v, double amplitude_sq) {
  if (v >= 0.0) return v;
  if (v >= -kNegativeVarianceTolerance * amplitude_sq) return 0.0;
  throw NumericError("negative posterior variance " + format_double(v) +
                     " beyond round-off tolerance");
}

}  // namespace

double CholeskyFactor::log_det() const {
  return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

Matrix CholeskyFactor::inverse() const {
  // L^{-1} is lower triangular, so each column panel only needs the trailing
  // part of L; then A^{-1} = L^{-T} L^{-1}.
  const Eigen::Index n = size();
  const auto l = llt_.matrixLLT();
  constexpr Eigen::Index kPanel = 32;
  Matrix linv = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; j += kPanel) {
    const Eigen::Index w = std::min(kPanel, n - j);
    auto panel = linv.block(j, j, n - j, w);
    panel.topRows(w).setIdentity();
    l.bottomRightCorner(n - j, n - j).triangularView<Eigen::Lower>().solveInPlace(panel);
  }
  Matrix inv = Matrix::Zero(n, n);
  inv.selfadjointView<Eigen::Lower>().rankUpdate(linv.transpose());
  inv.triangularView<Eigen::StrictlyUpper>() = inv.transpose();
  return inv;
}

CholeskyFactor factorize(const Matrix& k, double sigma, double jitter) {
  if (k.rows() != k.cols()) throw ArgumentError("factorize requires a square matrix");
  Matrix a = k;
  a.diagonal().array() += sigma * sigma + jitter;
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success || !llt.matrixLLT().diagonal().allFinite() ||
      (llt.matrixLLT().diagonal().array() <= 0.0).any()) {
    throw FactorizationError("matrix is not positive definite after jitter");
  }
  return CholeskyFactor(std::move(llt));
}

CholeskyFactor factorize(const Matrix& k, double sigma) {
  const double jitter = k.size() == 0 ? 0.0 : kJitterFactor * k.diagonal().maxCoeff();
  return factorize(k, sigma, jitter);
}

PosteriorResult posterior(std::span<const InputVector> train, const Vector& y,
                          std::span<const InputVector> test, const Hyperparameters& theta,
                          const TimeWeight& w, bool want_cov, int t) {
  theta.validate();
  if (static_cast<Eigen::Index>(train.size()) != y.size())
    throw ArgumentError("target length differs from training set size");
  const double tau2 = theta.amplitude * theta.amplitude;
  const Matrix k = gram(train, theta, w, t);
  const auto factor = factorize(k, theta.noise_std, kJitterFactor * tau2);
  const Matrix k_star = cross_gram(test, train, theta, w, t);

  PosteriorResult out;
  out.mean = k_star * factor.solve(y);
  if (want_cov) {
    const Matrix v = factor.solve_lower(k_star.transpose());
    Matrix s = gram(test, theta, w, t) - v.transpose() * v;
    s = 0.5 * (s + s.transpose()).eval();
    for (Eigen::Index i = 0; i < s.rows(); ++i) s(i, i) = clamp_variance(s(i, i), tau2);
    out.covariance = std::move(s);
  }
  return out;
}

LmlTerm::LmlTerm(const ChannelDistances& dist, const Matrix& targets,
                 const Hyperparameters& theta)
    : dist_(&dist),
      theta_(theta),
      k_((theta.validate(), dist.kernel(theta))),
      factor_(factorize(k_, theta.noise_std, kJitterFactor * theta.amplitude * theta.amplitude)),
      alpha_(factor_.solve(targets)) {
  if (targets.rows() != dist.rows())
    throw ArgumentError("targets rows differ from training set size");
  const auto columns = static_cast<double>(targets.cols());
  value_ = -0.5 * targets.cwiseProduct(alpha_).sum() - 0.5 * columns * factor_.log_det() -
           0.5 * columns * static_cast<double>(dist.rows()) * std::log(2.0 * std::numbers::pi);
  if (!std::isfinite(value_)) throw FactorizationError("non-finite log marginal likelihood");
}

Vector LmlTerm::gradient() const {
  const auto columns = static_cast<double>(alpha_.cols());
  const double sigma2 = theta_.noise_std * theta_.noise_std;
  const double jitter = kJitterFactor * theta_.amplitude * theta_.amplitude;
  Matrix w = alpha_ * alpha_.transpose();
  w.noalias() -= columns * factor_.inverse();
  const Matrix wk = w.cwiseProduct(k_);
  Vector g(kNumHyperparameters);
  g[0] = sigma2 * w.trace();
  g[1] = wk.sum() + jitter * w.trace();
  for (std::size_t c = 0; c < kChannels; ++c) {
    g[static_cast<Eigen::Index>(c) + 2] =
        wk.cwiseProduct(dist_->d[c]).sum() / (4.0 * theta_.length_scales[c]);
  }
  return g;
}

LmlValue lml_shared(const ChannelDistances& dist, const Matrix& targets,
                    const Hyperparameters& theta, bool want_grad) {
  if (targets.rows() != dist.rows())
    throw ArgumentError("targets rows differ from training set size");
  const LmlTerm term(dist, targets, theta);
  LmlValue out;
  out.value = term.value();
  if (want_grad) out.gradient = term.gradient();
  return out;
}

LmlValue log_marginal_likelihood(std::span<const InputVector> train, const Vector& y,
                                 const Hyperparameters& theta, const TimeWeight& w,
                                 bool want_grad, int t) {
  if (static_cast<Eigen::Index>(train.size()) != y.size())
    throw ArgumentError("target length differs from training set size");
  return lml_shared(channel_distances(train, w, t), y, theta, want_grad);
}

// ---------------------------------------------------------------------------
// Fitted model

void GpModel::validate() const {
  const auto cols = static_cast<Eigen::Index>(horizon) + 1;
  if (blocks.size() == 0 || blocks.horizon() != horizon)
    throw SchemaError("model blocks do not cover the horizon");
  if (theta.size() != blocks.size()) throw SchemaError("one theta per block required");
  if (!fit_warnings.empty() && fit_warnings.size() != blocks.size())
    throw SchemaError("one fit warning flag per block required");
  for (const auto& th : theta)
    if (!th.valid()) throw SchemaError("model hyperparameters must be positive");
  if (train_ids.size() != train_inputs.size())
    throw SchemaError("train ids and inputs differ in count");
  if (alpha.rows() != static_cast<Eigen::Index>(train_inputs.size()) || alpha.cols() != cols)
    throw SchemaError("alpha dimensions inconsistent with training set");
  for (const auto& x : train_inputs)
    if (x.cols() != cols) throw SchemaError("training input horizon mismatch");
}

namespace {

void check_test_horizon(const GpModel& model, std::span<const InputVector> test) {
  for (const auto& x : test)
    if (x.cols() != model.horizon + 1)
      throw ArgumentError("input horizon " + std::to_string(x.cols() - 1) +
                          " differs from model horizon " + std::to_string(model.horizon));
}

}  // namespace

Matrix predict_profile(const GpModel& model, std::span<const InputVector> test) {
  check_test_horizon(model, test);
  const auto n_test = static_cast<Eigen::Index>(test.size());
  Matrix out(n_test, model.horizon + 1);
  if (n_test == 0) return out;
  const auto train = model.scaling.apply(model.train_inputs);
  const auto xs = model.scaling.apply(test);

  if (model.weight.time_invariant()) {
    const auto dist = channel_distances(xs, train, model.weight);
    for (std::size_t m = 0; m < model.blocks.size(); ++m) {
      const TimeBlock& b = model.blocks[m];
      const Matrix k_star = dist.kernel(model.theta[m]);
      out.middleCols(b.first, b.length()).noalias() =
          k_star * model.alpha.middleCols(b.first, b.length());
    }
  } else {
    for (int t = 0; t <= model.horizon; ++t) {
      const Matrix k_star = channel_distances(xs, train, model.weight, t).kernel(model.theta_at(t));
      out.col(t).noalias() = k_star * model.alpha.col(t);
    }
  }
  return out;
}

Matrix predict_variance(const GpModel& model, std::span<const InputVector> test) {
  check_test_horizon(model, test);
  const auto n_test = static_cast<Eigen::Index>(test.size());
  Matrix out(n_test, model.horizon + 1);
  if (n_test == 0) return out;
  const auto train = model.scaling.apply(model.train_inputs);
  const auto xs = model.scaling.apply(test);

  auto variances = [&](const ChannelDistances& dtrain, const ChannelDistances& dcross,
                       const Hyperparameters& th) {
    const double tau2 = th.amplitude * th.amplitude;
    const auto factor = factorize(dtrain.kernel(th), th.noise_std, kJitterFactor * tau2);
    const Matrix v = factor.solve_lower(dcross.kernel(th).transpose());
    Vector var = (tau2 - v.colwise().squaredNorm().array()).matrix().transpose();
    for (Eigen::Index i = 0; i < var.size(); ++i) var[i] = clamp_variance(var[i], tau2);
    return var;
  };

  if (model.weight.time_invariant()) {
    const auto dtrain = channel_distances(train, model.weight);
    const auto dcross = channel_distances(xs, train, model.weight);
    for (std::size_t m = 0; m < model.blocks.size(); ++m) {
      const TimeBlock& b = model.blocks[m];
      const Vector var = variances(dtrain, dcross, model.theta[m]);
      for (int t = b.first; t <= b.last; ++t) out.col(t) = var;
    }
  } else {
    for (int t = 0; t <= model.horizon; ++t) {
      out.col(t) = variances(channel_distances(train, model.weight, t),
                             channel_distances(xs, train, model.weight, t), model.theta_at(t));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

using nlohmann::json;

json vec_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vector json_vec(const json& a) {
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

}  // namespace

std::string model_to_json(const GpModel& model) {
  model.validate();
  json j;
  j["format_version"] = kModelFormatVersion;
  j["horizon"] = model.horizon;
  j["blocks"] = json::array();
  for (const auto& b : model.blocks.blocks()) j["blocks"].push_back({b.first, b.last});
  j["theta"] = json::array();
  for (const auto& th : model.theta) {
    j["theta"].push_back({{"noise_std", th.noise_std},
                          {"amplitude", th.amplitude},
                          {"length_scales", th.length_scales}});
  }
  j["fit_warnings"] = json::array();
  for (bool w : model.fit_warnings) j["fit_warnings"].push_back(w);
  j["weight"] = {{"mode", model.weight.name()},
                 {"weights", vec_json(model.weight.custom_weights())}};
  j["scaling"] = {{"offset", model.scaling.offset}, {"scale", model.scaling.scale}};
  j["data_digest"] = model.data_digest;
  j["train_ids"] = model.train_ids;
  j["train_inputs"] = json::array();
  for (const auto& x : model.train_inputs) {
    json rows = json::array();
    for (Eigen::Index k = 0; k < x.rows(); ++k) rows.push_back(vec_json(x.row(k).transpose()));
    j["train_inputs"].push_back(std::move(rows));
  }
  j["alpha"] = json::array();
  for (Eigen::Index t = 0; t < model.alpha.cols(); ++t)
    j["alpha"].push_back(vec_json(model.alpha.col(t)));
  return j.dump() + "\n";
}

GpModel model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != kModelFormatVersion)
      throw SchemaError("unsupported model format_version");
    GpModel m;
    m.horizon = j.at("horizon").get<int>();
    std::vector<int> ends;
    for (const auto& b : j.at("blocks")) ends.push_back(b.at(1).get<int>());
    m.blocks = BlockScheme(ends);
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
      const auto& b = j.at("blocks")[i];
      if (b.at(0).get<int>() != m.blocks[i].first) throw SchemaError("blocks are not contiguous");
    }
    for (const auto& th : j.at("theta")) {
      Hyperparameters h;
      h.noise_std = th.at("noise_std").get<double>();
      h.amplitude = th.at("amplitude").get<double>();
      h.length_scales = th.at("length_scales").get<std::array<double, kChannels>>();
      m.theta.push_back(h);
    }
    for (const auto& w : j.at("fit_warnings")) m.fit_warnings.push_back(w.get<bool>());
    const auto mode = j.at("weight").at("mode").get<std::string>();
    m.weight = mode == "custom" ? TimeWeight::custom(json_vec(j.at("weight").at("weights")))
                                : TimeWeight::parse(mode);
    m.scaling.offset = j.at("scaling").at("offset").get<std::array<double, kChannels>>();
    m.scaling.scale = j.at("scaling").at("scale").get<std::array<double, kChannels>>();
    m.data_digest = j.at("data_digest").get<std::string>();
    m.train_ids = j.at("train_ids").get<std::vector<std::uint64_t>>();
    const auto cols = static_cast<Eigen::Index>(m.horizon) + 1;
    for (const auto& rows : j.at("train_inputs")) {
      if (rows.size() != kChannels) throw SchemaError("training input must have 6 channels");
      InputVector x(static_cast<int>(kChannels), cols);
      for (std::size_t k = 0; k < kChannels; ++k) {
        const Vector r = json_vec(rows[k]);
        if (r.size() != cols) throw SchemaError("training input horizon mismatch");
        x.row(static_cast<Eigen::Index>(k)) = r.transpose();
      }
      m.train_inputs.push_back(std::move(x));
    }
    const auto& alpha = j.at("alpha");
    m.alpha.resize(static_cast<Eigen::Index>(m.train_inputs.size()), cols);
    if (static_cast<Eigen::Index>(alpha.size()) != cols) throw SchemaError("alpha has wrong length");
    for (Eigen::Index t = 0; t < cols; ++t) {
      const Vector a = json_vec(alpha[static_cast<std::size_t>(t)]);
      if (a.size() != m.alpha.rows()) throw SchemaError("alpha column has wrong length");
      m.alpha.col(t) = a;
    }
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed model file: ") + e.what());
  } catch (const ArgumentError& e) {
    throw SchemaError(std::string("malformed model file: ") + e.what());
  }
}

void save_model(const GpModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw SchemaError("cannot write " + path);
  out << model_to_json(model);
  if (!out) throw SchemaError("write failed for " + path);
}

GpModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

}  // namespace decelgp
