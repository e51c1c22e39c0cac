#include "decelgp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "decelgp/config.hpp"

namespace decelgp {

namespace {

bool same_vector(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace

InputVector Landing::input() const {
  const Eigen::Index cols = speed.size();
  InputVector x(static_cast<int>(kChannels), cols);
  x.row(0).setConstant(mass);
  x.row(1).setConstant(kinetic_energy);
  x.row(2) = speed.transpose();
  x.row(3) = thrust.transpose();
  x.row(4) = brake.transpose();
  x.row(5) = drag.transpose();
  return x;
}

bool operator==(const Landing& a, const Landing& b) {
  if (a.id != b.id || a.mass != b.mass || a.kinetic_energy != b.kinetic_energy) return false;
  if (!same_vector(a.speed, b.speed) || !same_vector(a.thrust, b.thrust) ||
      !same_vector(a.brake, b.brake) || !same_vector(a.drag, b.drag))
    return false;
  if (a.decel_force.has_value() != b.decel_force.has_value()) return false;
  return !a.decel_force || same_vector(*a.decel_force, *b.decel_force);
}

FlightDatabase::FlightDatabase(int horizon, std::vector<Landing> landings)
    : horizon_(horizon), landings_(std::move(landings)) {
  if (horizon_ < 0) throw SchemaError("negative horizon");
  const auto len = static_cast<Eigen::Index>(horizon_) + 1;
  std::set<std::uint64_t> ids;
  for (const auto& l : landings_) {
    const std::string tag = "landing " + std::to_string(l.id);
    if (!ids.insert(l.id).second) throw SchemaError("duplicate " + tag);
    if (l.speed.size() != len || l.thrust.size() != len || l.brake.size() != len ||
        l.drag.size() != len || (l.decel_force && l.decel_force->size() != len)) {
      throw SchemaError(tag + ": channel length differs from horizon " +
                        std::to_string(horizon_));
    }
    if (!std::isfinite(l.mass) || !std::isfinite(l.kinetic_energy) || !all_finite(l.speed) ||
        !all_finite(l.thrust) || !all_finite(l.brake) || !all_finite(l.drag) ||
        (l.decel_force && !all_finite(*l.decel_force))) {
      throw SchemaError(tag + ": non-finite value");
    }
    if (!(l.mass > 0.0)) throw SchemaError(tag + ": mass must be positive");
  }
}

bool FlightDatabase::all_have_targets() const {
  return std::all_of(landings_.begin(), landings_.end(),
                     [](const Landing& l) { return l.has_target(); });
}

std::vector<InputVector> FlightDatabase::inputs() const {
  std::vector<InputVector> out;
  out.reserve(landings_.size());
  for (const auto& l : landings_) out.push_back(l.input());
  return out;
}

Matrix FlightDatabase::targets() const {
  Matrix y(static_cast<Eigen::Index>(landings_.size()), horizon_ + 1);
  for (std::size_t i = 0; i < landings_.size(); ++i) {
    if (!landings_[i].decel_force) {
      throw SchemaError("landing " + std::to_string(landings_[i].id) +
                        " has no deceleration force");
    }
    y.row(static_cast<Eigen::Index>(i)) = landings_[i].decel_force->transpose();
  }
  return y;
}

FlightDatabase FlightDatabase::subset(std::span<const std::size_t> positions) const {
  std::vector<Landing> out;
  out.reserve(positions.size());
  for (auto p : positions) {
    if (p >= landings_.size()) throw ArgumentError("subset position out of range");
    out.push_back(landings_[p]);
  }
  return FlightDatabase(horizon_, std::move(out));
}

FlightDatabase FlightDatabase::without(std::span<const std::size_t> positions) const {
  std::vector<bool> drop(landings_.size(), false);
  for (auto p : positions) {
    if (p >= landings_.size()) throw ArgumentError("position out of range");
    drop[p] = true;
  }
  std::vector<Landing> out;
  for (std::size_t i = 0; i < landings_.size(); ++i)
    if (!drop[i]) out.push_back(landings_[i]);
  return FlightDatabase(horizon_, std::move(out));
}

std::string FlightDatabase::digest() const {
  Digest d;
  d.update(static_cast<std::uint64_t>(horizon_));
  d.update(static_cast<std::uint64_t>(landings_.size()));
  auto vec = [&d](const Vector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) d.update(v[i]);
  };
  for (const auto& l : landings_) {
    d.update(l.id);
    d.update(l.mass);
    d.update(l.kinetic_energy);
    vec(l.speed);
    vec(l.thrust);
    vec(l.brake);
    vec(l.drag);
    d.update(static_cast<std::uint64_t>(l.has_target()));
    if (l.decel_force) vec(*l.decel_force);
  }
  return d.hex();
}

// ---------------------------------------------------------------------------
// CSV

namespace {

struct Row {
  std::uint64_t id;
  long long t;
  double values[6];
  std::optional<double> decel;
  std::size_t line;
};

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

}  // namespace

FlightDatabase parse_csv(const std::string& text) {
  std::string_view rest(text);
  std::size_t line_no = 0;
  std::vector<Row> rows;

  auto fail = [&](const std::string& msg) {
    throw SchemaError("row " + std::to_string(line_no) + ": " + msg);
  };

  bool header_seen = false;
  while (!rest.empty()) {
    const auto nl = rest.find('\n');
    std::string_view line = rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!header_seen) {
      if (line != kCsvHeader) fail("expected header '" + std::string(kCsvHeader) + "'");
      header_seen = true;
      continue;
    }
    if (line.empty()) {
      if (rest.empty()) break;
      fail("empty line");
    }
    const auto fields = split_commas(line);
    if (fields.size() != 9) fail("expected 9 fields, found " + std::to_string(fields.size()));
    Row r{};
    r.line = line_no;
    try {
      const long long id = parse_int(fields[0], "landing_id");
      if (id < 0) fail("negative landing_id");
      r.id = static_cast<std::uint64_t>(id);
      r.t = parse_int(fields[1], "t");
      for (int k = 0; k < 6; ++k) {
        r.values[k] = parse_double(fields[2 + static_cast<std::size_t>(k)], "channel");
        if (!std::isfinite(r.values[k])) fail("non-finite value");
      }
      if (!fields[8].empty()) {
        r.decel = parse_double(fields[8], "decel_force");
        if (!std::isfinite(*r.decel)) fail("non-finite value");
      }
    } catch (const SchemaError& e) {
      if (std::string_view(e.what()).starts_with("row ")) throw;
      fail(e.what());
    }
    rows.push_back(r);
  }
  if (!header_seen) throw SchemaError("row 1: missing header");

  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.id != b.id ? a.id < b.id : a.t < b.t;
  });

  std::vector<Landing> landings;
  int horizon = -1;
  for (std::size_t begin = 0; begin < rows.size();) {
    std::size_t end = begin;
    while (end < rows.size() && rows[end].id == rows[begin].id) ++end;
    const auto count = static_cast<Eigen::Index>(end - begin);
    line_no = rows[begin].line;
    for (std::size_t i = begin; i < end; ++i) {
      if (rows[i].t != static_cast<long long>(i - begin)) {
        line_no = rows[i].line;
        fail("landing " + std::to_string(rows[begin].id) +
             ": time index must run 0..T without gaps or repeats");
      }
    }
    if (horizon < 0) horizon = static_cast<int>(count) - 1;
    if (count != horizon + 1) {
      line_no = rows[end - 1].line;
      fail("landing " + std::to_string(rows[begin].id) + " has " + std::to_string(count) +
           " samples, expected " + std::to_string(horizon + 1));
    }
    Landing l;
    l.id = rows[begin].id;
    l.mass = rows[begin].values[0];
    l.kinetic_energy = rows[begin].values[1];
    l.speed.resize(count);
    l.thrust.resize(count);
    l.brake.resize(count);
    l.drag.resize(count);
    const bool has_decel = rows[begin].decel.has_value();
    if (has_decel) l.decel_force = Vector(count);
    for (std::size_t i = begin; i < end; ++i) {
      const auto& r = rows[i];
      line_no = r.line;
      if (r.values[0] != l.mass || r.values[1] != l.kinetic_energy)
        fail("mass and kinetic_energy must be constant within a landing");
      if (r.decel.has_value() != has_decel)
        fail("decel_force must be present on all or none of a landing's rows");
      const auto t = static_cast<Eigen::Index>(i - begin);
      l.speed[t] = r.values[2];
      l.thrust[t] = r.values[3];
      l.brake[t] = r.values[4];
      l.drag[t] = r.values[5];
      if (has_decel) (*l.decel_force)[t] = *r.decel;
    }
    landings.push_back(std::move(l));
    begin = end;
  }
  try {
    return FlightDatabase(std::max(horizon, 0), std::move(landings));
  } catch (const SchemaError& e) {
    throw SchemaError(std::string("row ") + std::to_string(line_no) + ": " + e.what());
  }
}

FlightDatabase load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

std::string to_csv(const FlightDatabase& db) {
  std::vector<std::size_t> order(db.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&db](std::size_t a, std::size_t b) { return db[a].id < db[b].id; });

  std::string out = kCsvHeader;
  out += '\n';
  for (auto i : order) {
    const Landing& l = db[i];
    const std::string prefix = std::to_string(l.id);
    const std::string scalars = format_double(l.mass) + "," + format_double(l.kinetic_energy);
    for (Eigen::Index t = 0; t < l.speed.size(); ++t) {
      out += prefix;
      out += ',';
      out += std::to_string(t);
      out += ',';
      out += scalars;
      for (const Vector* ch : {&l.speed, &l.thrust, &l.brake, &l.drag}) {
        out += ',';
        out += format_double((*ch)[t]);
      }
      out += ',';
      if (l.decel_force) out += format_double((*l.decel_force)[t]);
      out += '\n';
    }
  }
  return out;
}

void save_csv(const FlightDatabase& db, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw SchemaError("cannot write " + path);
  out << to_csv(db);
  if (!out) throw SchemaError("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Synthetic generator

void GeneratorConfig::validate() const {
  auto range = [](double lo, double hi, const char* name) {
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
      throw ArgumentError(std::string(name) + ": range must satisfy low < high");
  };
  auto positive_range = [&](double lo, double hi, const char* name) {
    range(lo, hi, name);
    if (!(lo > 0.0)) throw ArgumentError(std::string(name) + ": range must be positive");
  };
  if (n_landings == 0) throw ArgumentError("n_landings must be positive");
  if (horizon < 1) throw ArgumentError("horizon must be at least 1");
  positive_range(mass_min, mass_max, "mass");
  positive_range(v0_min, v0_max, "v0");
  positive_range(drag_coef_min, drag_coef_max, "drag_coef");
  positive_range(brake_coef_min, brake_coef_max, "brake_coef");
  positive_range(reverse_coef_min, reverse_coef_max, "reverse_coef");
  range(brake_angle_min, brake_angle_max, "brake_angle");
  if (brake_angle_min < 0.0) throw ArgumentError("brake_angle: must be non-negative");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std))
    throw ArgumentError("noise_std must be non-negative");
  if (!(brake_degradation > 0.0)) throw ArgumentError("brake_degradation must be positive");
}

namespace {

BrakeProfile parse_brake_profile(const std::string& s) {
  if (s == "ramp") return BrakeProfile::Ramp;
  if (s == "step") return BrakeProfile::Step;
  if (s == "modulated") return BrakeProfile::Modulated;
  throw ArgumentError("unknown brake_profile '" + s + "'");
}

const char* to_string(BrakeProfile p) {
  switch (p) {
    case BrakeProfile::Ramp: return "ramp";
    case BrakeProfile::Step: return "step";
    case BrakeProfile::Modulated: return "modulated";
  }
  return "ramp";
}

ThrottleProfile parse_throttle_profile(const std::string& s) {
  if (s == "reverse") return ThrottleProfile::Reverse;
  if (s == "idle") return ThrottleProfile::Idle;
  throw ArgumentError("unknown throttle_profile '" + s + "'");
}

const char* to_string(ThrottleProfile p) {
  return p == ThrottleProfile::Reverse ? "reverse" : "idle";
}

}  // namespace

GeneratorConfig GeneratorConfig::from_config(const FlatConfig& c) {
  GeneratorConfig g;
  g.n_landings = static_cast<std::size_t>(c.get_int("landings", static_cast<long long>(g.n_landings)));
  g.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(g.seed)));
  g.horizon = static_cast<int>(c.get_int("horizon", g.horizon));
  g.first_id = static_cast<std::uint64_t>(c.get_int("first_id", static_cast<long long>(g.first_id)));
  g.mass_min = c.get_double("mass_min", g.mass_min);
  g.mass_max = c.get_double("mass_max", g.mass_max);
  g.v0_min = c.get_double("v0_min", g.v0_min);
  g.v0_max = c.get_double("v0_max", g.v0_max);
  g.drag_coef_min = c.get_double("drag_coef_min", g.drag_coef_min);
  g.drag_coef_max = c.get_double("drag_coef_max", g.drag_coef_max);
  g.brake_coef_min = c.get_double("brake_coef_min", g.brake_coef_min);
  g.brake_coef_max = c.get_double("brake_coef_max", g.brake_coef_max);
  g.reverse_coef_min = c.get_double("reverse_coef_min", g.reverse_coef_min);
  g.reverse_coef_max = c.get_double("reverse_coef_max", g.reverse_coef_max);
  g.brake_angle_min = c.get_double("brake_angle_min", g.brake_angle_min);
  g.brake_angle_max = c.get_double("brake_angle_max", g.brake_angle_max);
  g.brake_profile = parse_brake_profile(c.get_string("brake_profile", to_string(g.brake_profile)));
  g.throttle_profile =
      parse_throttle_profile(c.get_string("throttle_profile", to_string(g.throttle_profile)));
  g.noise_std = c.get_double("noise_std", g.noise_std);
  g.brake_regime_change = static_cast<int>(c.get_int("brake_regime_change", g.brake_regime_change));
  g.brake_degradation = c.get_double("brake_degradation", g.brake_degradation);
  g.validate();
  return g;
}

FlatConfig GeneratorConfig::to_config() const {
  FlatConfig c;
  c.set("landings", std::to_string(n_landings));
  c.set("seed", std::to_string(seed));
  c.set("horizon", std::to_string(horizon));
  c.set("first_id", std::to_string(first_id));
  c.set("mass_min", format_double(mass_min));
  c.set("mass_max", format_double(mass_max));
  c.set("v0_min", format_double(v0_min));
  c.set("v0_max", format_double(v0_max));
  c.set("drag_coef_min", format_double(drag_coef_min));
  c.set("drag_coef_max", format_double(drag_coef_max));
  c.set("brake_coef_min", format_double(brake_coef_min));
  c.set("brake_coef_max", format_double(brake_coef_max));
  c.set("reverse_coef_min", format_double(reverse_coef_min));
  c.set("reverse_coef_max", format_double(reverse_coef_max));
  c.set("brake_angle_min", format_double(brake_angle_min));
  c.set("brake_angle_max", format_double(brake_angle_max));
  c.set("brake_profile", to_string(brake_profile));
  c.set("throttle_profile", to_string(throttle_profile));
  c.set("noise_std", format_double(noise_std));
  c.set("brake_regime_change", std::to_string(brake_regime_change));
  c.set("brake_degradation", format_double(brake_degradation));
  return c;
}

namespace {

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

Landing simulate_landing(const GeneratorConfig& cfg, std::uint64_t id) {
  std::mt19937_64 rng(derive_seed(cfg.seed, "landing", id));
  auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  auto log_uniform = [&](double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  };

  const double mass = uniform(cfg.mass_min, cfg.mass_max);
  const double v0 = uniform(cfg.v0_min, cfg.v0_max);
  const double c_drag = log_uniform(cfg.drag_coef_min, cfg.drag_coef_max);
  const double c_brake =
      log_uniform(cfg.brake_coef_min, cfg.brake_coef_max) * cfg.brake_degradation;
  const double c_reverse = log_uniform(cfg.reverse_coef_min, cfg.reverse_coef_max);

  // Brake lever: onset, ramp-in, hold level; optional pilot takeover later.
  const double brake_onset = uniform(1.0, 5.0);
  const double brake_ramp = uniform(2.0, 5.0);
  const double brake_level = uniform(cfg.brake_angle_min, cfg.brake_angle_max);
  const double mod_period = uniform(8.0, 20.0);
  const double mod_phase = uniform(0.0, 2.0 * M_PI);
  const double takeover_level = uniform(cfg.brake_angle_min, cfg.brake_angle_max);

  // Reverse throttle: spool up, hold, stow.
  const double reverse_on = uniform(1.0, 3.0);
  const double reverse_level = uniform(0.5, 1.0);
  const double reverse_off = uniform(15.0, 30.0);

  const int T = cfg.horizon;
  const auto n = static_cast<Eigen::Index>(T) + 1;
  Vector angle(n), throttle(n), speed(n), force(n);

  for (Eigen::Index t = 0; t < n; ++t) {
    const double s = static_cast<double>(t);
    double a = 0.0;
    switch (cfg.brake_profile) {
      case BrakeProfile::Ramp:
        a = brake_level * clamp01((s - brake_onset) / brake_ramp);
        break;
      case BrakeProfile::Step:
        a = s >= brake_onset ? brake_level : 0.0;
        break;
      case BrakeProfile::Modulated:
        a = brake_level * clamp01((s - brake_onset) / brake_ramp) *
            (1.0 + 0.25 * std::sin(2.0 * M_PI * s / mod_period + mod_phase));
        break;
    }
    if (cfg.brake_regime_change >= 0 && s >= cfg.brake_regime_change) {
      // three-second blend into the takeover setting
      const double w = clamp01((s - cfg.brake_regime_change + 1.0) / 3.0);
      a = (1.0 - w) * a + w * takeover_level;
    }
    angle[t] = a;

    double r = 0.0;
    if (cfg.throttle_profile == ThrottleProfile::Reverse) {
      r = reverse_level * clamp01((s - reverse_on) / 2.0) *
          clamp01(1.0 - (s - reverse_off) / 3.0);
    }
    throttle[t] = r;
  }

  speed[0] = v0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double v = speed[t];
    double gamma = c_drag * v * v + c_brake * v * angle[t] + c_reverse * v * v * throttle[t];
    // the aircraft cannot decelerate past standstill within one step
    gamma = std::min(gamma, mass * v);
    force[t] = gamma;
    if (t + 1 < n) speed[t + 1] = v - gamma / mass;
  }

  Landing l;
  l.id = id;
  l.mass = mass;
  Vector rec_speed = speed;
  Vector rec_force = force;
  if (cfg.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_std);
    for (Eigen::Index t = 0; t < n; ++t) rec_speed[t] += noise(rng);
    for (Eigen::Index t = 0; t < n; ++t) rec_force[t] += noise(rng);
  }
  l.kinetic_energy = 0.5 * mass * rec_speed[0] * rec_speed[0];
  l.speed = rec_speed;
  l.thrust = rec_speed.array().square() * throttle.array();
  l.brake = rec_speed.array() * angle.array();
  l.drag = c_drag * rec_speed.array().square();
  l.decel_force = rec_force;
  return l;
}

}  // namespace

FlightDatabase generate_synthetic(const GeneratorConfig& cfg) {
  cfg.validate();
  std::vector<Landing> landings;
  landings.reserve(cfg.n_landings);
  for (std::size_t i = 0; i < cfg.n_landings; ++i)
    landings.push_back(simulate_landing(cfg, cfg.first_id + i));
  return FlightDatabase(cfg.horizon, std::move(landings));
}

// ---------------------------------------------------------------------------
// Folds

std::string FoldPlan::digest() const {
  Digest d;
  d.update(static_cast<std::uint64_t>(n_ob));
  for (const auto& f : folds) {
    d.update(static_cast<std::uint64_t>(f.size()));
    for (auto i : f) d.update(static_cast<std::uint64_t>(i));
  }
  return d.hex();
}

FoldPlan split_folds(std::size_t n_ob, std::size_t folds, std::size_t n_test,
                     std::uint64_t seed) {
  if (folds == 0 || n_test == 0) throw ArgumentError("folds and test size must be positive");
  if (folds * n_test > n_ob) {
    throw ArgumentError("cannot draw " + std::to_string(folds) + " folds of " +
                        std::to_string(n_test) + " from " + std::to_string(n_ob) +
                        " landings");
  }
  std::vector<std::size_t> perm(n_ob);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  // Fisher-Yates with an explicit engine draw so the plan is portable.
  std::mt19937_64 rng(derive_seed(seed, "folds"));
  for (std::size_t i = n_ob; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  FoldPlan plan;
  plan.n_ob = n_ob;
  plan.folds.resize(folds);
  for (std::size_t f = 0; f < folds; ++f) {
    auto first = perm.begin() + static_cast<std::ptrdiff_t>(f * n_test);
    plan.folds[f].assign(first, first + static_cast<std::ptrdiff_t>(n_test));
    std::sort(plan.folds[f].begin(), plan.folds[f].end());
  }
  return plan;
}

}  // namespace decelgp
