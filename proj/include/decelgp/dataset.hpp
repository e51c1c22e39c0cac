#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "decelgp/common.hpp"

namespace decelgp {

class FlatConfig;

/// Number of input channels: mass, kinetic energy, speed, thrust, brake, drag.
inline constexpr std::size_t kChannels = 6;

enum class Channel : std::size_t { Mass = 0, KineticEnergy, Speed, Thrust, Brake, Drag };

/// Whole-landing input trajectory, one row per channel and one column per
/// second. Scalar channels (mass, kinetic energy) are repeated across columns.
using InputVector = Eigen::Matrix<double, static_cast<int>(kChannels), Eigen::Dynamic>;

/// One recorded landing. Units: mass kg, kinetic energy J, speed m/s,
/// thrust m^2/s^2 (speed squared times reverse-throttle fraction), brake
/// m/s*deg (speed times brake-lever angle), drag N, deceleration force N.
struct Landing {
  std::uint64_t id = 0;
  double mass = 0.0;
  double kinetic_energy = 0.0;
  Vector speed;
  Vector thrust;
  Vector brake;
  Vector drag;
  std::optional<Vector> decel_force;

  int horizon() const { return static_cast<int>(speed.size()) - 1; }
  bool has_target() const { return decel_force.has_value(); }
  InputVector input() const;

  friend bool operator==(const Landing& a, const Landing& b);
};

/// Ordered, immutable collection of landings sharing one horizon T.
class FlightDatabase {
 public:
  FlightDatabase() = default;
  /// Throws SchemaError if the landings violate the shared-horizon, unique-id
  /// or finiteness invariants.
  FlightDatabase(int horizon, std::vector<Landing> landings);

  int horizon() const { return horizon_; }
  std::size_t size() const { return landings_.size(); }
  bool empty() const { return landings_.empty(); }
  const Landing& operator[](std::size_t i) const { return landings_[i]; }
  const std::vector<Landing>& landings() const { return landings_; }
  bool all_have_targets() const;

  std::vector<InputVector> inputs() const;
  /// n_ob x (T+1) target matrix; throws SchemaError if a landing has none.
  Matrix targets() const;

  FlightDatabase subset(std::span<const std::size_t> positions) const;
  FlightDatabase without(std::span<const std::size_t> positions) const;

  /// FNV-1a over the exact field bits, in storage order.
  std::string digest() const;

  friend bool operator==(const FlightDatabase& a, const FlightDatabase& b) = default;

 private:
  int horizon_ = 0;
  std::vector<Landing> landings_;
};

FlightDatabase load_csv(const std::string& path);
FlightDatabase parse_csv(const std::string& text);
void save_csv(const FlightDatabase& db, const std::string& path);
std::string to_csv(const FlightDatabase& db);

inline constexpr const char* kCsvHeader =
    "landing_id,t,mass,kinetic_energy,speed,thrust,brake,drag,decel_force";

enum class BrakeProfile { Ramp, Step, Modulated };
enum class ThrottleProfile { Reverse, Idle };

/// Physics-informed synthetic landing generator settings.
///
/// Each landing integrates v(t+1) = v(t) - gamma(t)/m over 1 s steps with
///   gamma = c_d v^2 + c_b v angle + c_r v^2 throttle
/// and per-landing coefficients drawn log-uniformly from the ranges below.
struct GeneratorConfig {
  std::size_t n_landings = 200;
  std::uint64_t seed = 42;
  int horizon = 100;
  std::uint64_t first_id = 0;

  double mass_min = 55000.0, mass_max = 75000.0;        // kg
  double v0_min = 60.0, v0_max = 75.0;                  // m/s
  double drag_coef_min = 5.0, drag_coef_max = 12.0;     // N s^2/m^2
  double brake_coef_min = 28.0, brake_coef_max = 50.0;  // N s/(m deg)
  double reverse_coef_min = 5.0, reverse_coef_max = 10.0;
  double brake_angle_min = 12.0, brake_angle_max = 30.0;  // deg

  BrakeProfile brake_profile = BrakeProfile::Ramp;
  ThrottleProfile throttle_profile = ThrottleProfile::Reverse;
  double noise_std = 0.2;

  /// Second at which the pilot takes over from the initial brake setting;
  /// negative disables the regime change.
  int brake_regime_change = -1;
  /// Multiplier on every drawn brake coefficient (1 = healthy brakes).
  double brake_degradation = 1.0;

  void validate() const;
  static GeneratorConfig from_config(const FlatConfig& cfg);
  FlatConfig to_config() const;
};

/// Deterministic given cfg; landing ids are first_id, first_id+1, ...
FlightDatabase generate_synthetic(const GeneratorConfig& cfg);

/// M disjoint, sorted test index sets of n_test positions each.
struct FoldPlan {
  std::size_t n_ob = 0;
  std::vector<std::vector<std::size_t>> folds;

  std::string digest() const;
};

/// Throws ArgumentError when M * n_test > n_ob. Positions not drawn into any
/// fold stay in every training set.
FoldPlan split_folds(std::size_t n_ob, std::size_t folds, std::size_t n_test,
                     std::uint64_t seed);

}  // namespace decelgp
