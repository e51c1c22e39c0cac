#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "decelgp/dataset.hpp"
#include "decelgp/kernel.hpp"

namespace testing {

using decelgp::InputVector;
using decelgp::Matrix;
using decelgp::Vector;

inline InputVector random_input(int horizon, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  InputVector x(decelgp::kChannels, horizon + 1);
  for (Eigen::Index k = 0; k < x.rows(); ++k)
    for (Eigen::Index t = 0; t < x.cols(); ++t) x(k, t) = n(rng);
  return x;
}

inline std::vector<InputVector> random_inputs(std::size_t n, int horizon, std::mt19937_64& rng,
                                              double scale = 1.0) {
  std::vector<InputVector> xs;
  for (std::size_t i = 0; i < n; ++i) xs.push_back(random_input(horizon, rng, scale));
  return xs;
}

/// Moderate hyperparameters so kernels are neither diagonal nor rank one.
inline decelgp::Hyperparameters random_theta(std::mt19937_64& rng, int horizon) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  decelgp::Hyperparameters th;
  th.noise_std = 0.1 + 0.5 * u(rng);
  th.amplitude = 0.5 + 1.5 * u(rng);
  for (auto& l : th.length_scales) l = (horizon + 1) * (1.0 + 4.0 * u(rng));
  return th;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

inline decelgp::FlightDatabase small_db(std::size_t n, int horizon, std::uint64_t seed,
                                        double noise = 0.2) {
  decelgp::GeneratorConfig g;
  g.n_landings = n;
  g.horizon = horizon;
  g.seed = seed;
  g.noise_std = noise;
  return decelgp::generate_synthetic(g);
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("decelgp_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace testing
