#include "decelgp/kernel.hpp"

#include <cmath>

namespace decelgp {

void Hyperparameters::validate() const {
  if (!valid()) throw ArgumentError("hyperparameters must be finite and strictly positive");
}

bool Hyperparameters::valid() const {
  auto ok = [](double x) { return std::isfinite(x) && x > 0.0; };
  if (!ok(noise_std) || !ok(amplitude)) return false;
  for (double l : length_scales)
    if (!ok(l)) return false;
  return true;
}

Vector Hyperparameters::to_log() const {
  Vector v(kNumHyperparameters);
  v[0] = std::log(noise_std);
  v[1] = std::log(amplitude);
  for (std::size_t k = 0; k < kChannels; ++k)
    v[static_cast<Eigen::Index>(k) + 2] = std::log(length_scales[k]);
  return v;
}

Hyperparameters Hyperparameters::from_log(const Vector& p) {
  if (p.size() != kNumHyperparameters) throw ArgumentError("expected 8 log-hyperparameters");
  Hyperparameters h;
  h.noise_std = std::exp(p[0]);
  h.amplitude = std::exp(p[1]);
  for (std::size_t k = 0; k < kChannels; ++k)
    h.length_scales[k] = std::exp(p[static_cast<Eigen::Index>(k) + 2]);
  return h;
}

// ---------------------------------------------------------------------------

TimeWeight TimeWeight::custom(Vector weights) {
  for (Eigen::Index i = 0; i < weights.size(); ++i)
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i]))
      throw ArgumentError("time weights must be finite and non-negative");
  return TimeWeight(Mode::Custom, std::move(weights));
}

Vector TimeWeight::at(int t, int horizon) const {
  const auto n = static_cast<Eigen::Index>(horizon) + 1;
  switch (mode_) {
    case Mode::Uniform:
      return Vector::Ones(n);
    case Mode::CausalBox: {
      const int last = t == kFullHorizon ? horizon : t;
      Vector w = Vector::Zero(n);
      w.head(static_cast<Eigen::Index>(last) + 1).setOnes();
      return w;
    }
    case Mode::Custom:
      if (weights_.size() != n) throw ArgumentError("custom weight length differs from horizon");
      return weights_;
  }
  return Vector::Ones(n);
}

std::string TimeWeight::name() const {
  switch (mode_) {
    case Mode::Uniform: return "uniform";
    case Mode::CausalBox: return "causal";
    case Mode::Custom: return "custom";
  }
  return "uniform";
}

TimeWeight TimeWeight::parse(const std::string& name) {
  if (name == "uniform") return uniform();
  if (name == "causal") return causal_box();
  throw ArgumentError("unknown kernel weight mode '" + name + "' (expected uniform|causal)");
}

bool operator==(const TimeWeight& a, const TimeWeight& b) {
  if (a.mode_ != b.mode_) return false;
  if (a.mode_ != TimeWeight::Mode::Custom) return true;
  return a.weights_.size() == b.weights_.size() && a.weights_ == b.weights_;
}

// ---------------------------------------------------------------------------

bool ChannelScaling::is_identity() const {
  for (std::size_t k = 0; k < kChannels; ++k)
    if (offset[k] != 0.0 || scale[k] != 1.0) return false;
  return true;
}

ChannelScaling ChannelScaling::fit(std::span<const InputVector> inputs) {
  ChannelScaling s;
  if (inputs.empty()) return s;
  for (std::size_t k = 0; k < kChannels; ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    double sum = 0.0;
    double count = 0.0;
    for (const auto& x : inputs) {
      sum += x.row(row).sum();
      count += static_cast<double>(x.cols());
    }
    const double mean = sum / count;
    double ss = 0.0;
    for (const auto& x : inputs) ss += (x.row(row).array() - mean).square().sum();
    const double sd = std::sqrt(ss / count);
    s.offset[k] = mean;
    s.scale[k] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

InputVector ChannelScaling::apply(const InputVector& x) const {
  if (is_identity()) return x;
  InputVector out(x.rows(), x.cols());
  for (std::size_t k = 0; k < kChannels; ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    out.row(row) = (x.row(row).array() - offset[k]) / scale[k];
  }
  return out;
}

std::vector<InputVector> ChannelScaling::apply(std::span<const InputVector> xs) const {
  std::vector<InputVector> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(apply(x));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Resolved weighting for one evaluation time: either the first `len` samples
// with unit weight (uniform and causal box) or an explicit weight vector.
struct ResolvedWeight {
  Eigen::Index len = 0;
  const Vector* weights = nullptr;
  Vector storage;
};

ResolvedWeight resolve(const TimeWeight& w, int t, Eigen::Index cols) {
  ResolvedWeight r;
  const int horizon = static_cast<int>(cols) - 1;
  if (t != kFullHorizon && (t < 0 || t > horizon))
    throw ArgumentError("evaluation time outside the horizon");
  switch (w.mode()) {
    case TimeWeight::Mode::Uniform:
      r.len = cols;
      break;
    case TimeWeight::Mode::CausalBox:
      r.len = static_cast<Eigen::Index>(t == kFullHorizon ? horizon : t) + 1;
      break;
    case TimeWeight::Mode::Custom:
      r.storage = w.at(t, horizon);
      r.len = cols;
      r.weights = &r.storage;
      break;
  }
  return r;
}

double sq_dist(const InputVector& a, const InputVector& b, Eigen::Index k,
               const ResolvedWeight& w) {
  if (w.weights) {
    return (w.weights->array().transpose() * (a.row(k) - b.row(k)).array().square()).sum();
  }
  return (a.row(k).head(w.len) - b.row(k).head(w.len)).squaredNorm();
}

void check_same_shape(const InputVector& a, const InputVector& b) {
  if (a.cols() != b.cols()) throw ArgumentError("inputs have different horizons");
}

}  // namespace

double channel_sq_dist(const InputVector& a, const InputVector& b, std::size_t channel,
                       const TimeWeight& w, int t) {
  if (channel >= kChannels) throw ArgumentError("channel index out of range");
  check_same_shape(a, b);
  return sq_dist(a, b, static_cast<Eigen::Index>(channel), resolve(w, t, a.cols()));
}

double kernel_from_distances(const std::array<double, kChannels>& d,
                             const Hyperparameters& theta) {
  double s = 0.0;
  for (std::size_t k = 0; k < kChannels; ++k) s += d[k] / (2.0 * theta.length_scales[k]);
  return theta.amplitude * theta.amplitude * std::exp(-s);
}

double kernel_eval(const InputVector& a, const InputVector& b, const Hyperparameters& theta,
                   const TimeWeight& w, int t) {
  check_same_shape(a, b);
  const auto rw = resolve(w, t, a.cols());
  std::array<double, kChannels> d{};
  for (std::size_t k = 0; k < kChannels; ++k)
    d[k] = sq_dist(a, b, static_cast<Eigen::Index>(k), rw);
  return kernel_from_distances(d, theta);
}

Matrix ChannelDistances::kernel(const Hyperparameters& theta) const {
  Matrix out(rows(), cols());
  std::array<double, kChannels> e{};
  for (Eigen::Index j = 0; j < cols(); ++j) {
    const Eigen::Index end = symmetric ? j + 1 : rows();
    for (Eigen::Index i = 0; i < end; ++i) {
      for (std::size_t k = 0; k < kChannels; ++k) e[k] = d[k](i, j);
      out(i, j) = kernel_from_distances(e, theta);
      if (symmetric) out(j, i) = out(i, j);
    }
  }
  return out;
}

ChannelDistances channel_distances(std::span<const InputVector> x1,
                                   std::span<const InputVector> x2, const TimeWeight& w,
                                   int t) {
  ChannelDistances cd;
  const auto n1 = static_cast<Eigen::Index>(x1.size());
  const auto n2 = static_cast<Eigen::Index>(x2.size());
  for (auto& m : cd.d) m.resize(n1, n2);
  if (n1 == 0 || n2 == 0) return cd;
  const Eigen::Index cols = x1.front().cols();
  const auto rw = resolve(w, t, cols);
  for (Eigen::Index j = 0; j < n2; ++j) {
    const auto& b = x2[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < n1; ++i) {
      const auto& a = x1[static_cast<std::size_t>(i)];
      check_same_shape(a, b);
      for (std::size_t k = 0; k < kChannels; ++k)
        cd.d[k](i, j) = sq_dist(a, b, static_cast<Eigen::Index>(k), rw);
    }
  }
  return cd;
}

ChannelDistances channel_distances(std::span<const InputVector> x, const TimeWeight& w,
                                   int t) {
  ChannelDistances cd;
  cd.symmetric = true;
  const auto n = static_cast<Eigen::Index>(x.size());
  for (auto& m : cd.d) m.resize(n, n);
  if (n == 0) return cd;
  const auto rw = resolve(w, t, x.front().cols());
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& b = x[static_cast<std::size_t>(j)];
    for (std::size_t k = 0; k < kChannels; ++k) cd.d[k](j, j) = 0.0;
    for (Eigen::Index i = 0; i < j; ++i) {
      const auto& a = x[static_cast<std::size_t>(i)];
      check_same_shape(a, b);
      for (std::size_t k = 0; k < kChannels; ++k) {
        const double v = sq_dist(a, b, static_cast<Eigen::Index>(k), rw);
        cd.d[k](i, j) = v;
        cd.d[k](j, i) = v;
      }
    }
  }
  return cd;
}

Matrix gram(std::span<const InputVector> x, const Hyperparameters& theta, const TimeWeight& w,
            int t) {
  if (x.empty()) throw ArgumentError("gram requires at least one input");
  return channel_distances(x, w, t).kernel(theta);
}

Matrix cross_gram(std::span<const InputVector> x1, std::span<const InputVector> x2,
                  const Hyperparameters& theta, const TimeWeight& w, int t) {
  if (x1.empty() || x2.empty()) throw ArgumentError("cross_gram requires non-empty inputs");
  return channel_distances(x1, x2, w, t).kernel(theta);
}

}  // namespace decelgp
