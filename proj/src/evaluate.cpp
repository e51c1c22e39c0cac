#include "decelgp/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace decelgp {

using json = nlohmann::json;

void EvalRange::check(int horizon) const {
  if (first < 0 || first > last || last > horizon)
    throw ArgumentError("evaluation range " + to_string() + " outside [0, " +
                        std::to_string(horizon) + "]");
}

std::string EvalRange::to_string() const {
  return std::to_string(first) + ":" + std::to_string(last);
}

EvalRange EvalRange::parse(const std::string& text, int horizon) {
  if (text == "full") return full(horizon);
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ArgumentError("range must be 'a:b' or 'full'");
  EvalRange r;
  try {
    r.first = static_cast<int>(parse_int(std::string_view(text).substr(0, colon), "range"));
    r.last = static_cast<int>(parse_int(std::string_view(text).substr(colon + 1), "range"));
  } catch (const SchemaError& e) {
    throw ArgumentError(e.what());
  }
  r.check(horizon);
  return r;
}

double profile_error(const Vector& y, const Vector& f, EvalRange range) {
  if (y.size() != f.size()) throw ArgumentError("profile lengths differ");
  range.check(static_cast<int>(y.size()) - 1);
  const Eigen::Index len = range.last - range.first + 1;
  const double denom = y.segment(range.first, len).norm();
  if (!(denom > 0.0)) throw UndefinedMetric("measured profile has zero norm over " + range.to_string());
  return (y.segment(range.first, len) - f.segment(range.first, len)).norm() / denom;
}

double aggregate_mape(const std::vector<std::vector<double>>& errors_by_fold) {
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& fold : errors_by_fold) {
    if (fold.empty()) continue;
    double s = 0.0;
    for (double e : fold) s += e;
    sum += s / static_cast<double>(fold.size());
    ++used;
  }
  if (used == 0) throw ArgumentError("aggregate_mape needs at least one error");
  return sum / static_cast<double>(used);
}

double median_error(std::vector<double> errors) {
  if (errors.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(errors.begin(), errors.end());
  const std::size_t n = errors.size();
  return n % 2 == 1 ? errors[n / 2] : 0.5 * (errors[n / 2 - 1] + errors[n / 2]);
}

BlockMape mape_blocks(std::span<const FoldPredictions> folds, const BlockScheme& scheme) {
  BlockMape out;
  out.mape = Vector::Zero(static_cast<Eigen::Index>(scheme.size()));
  out.excluded.assign(scheme.size(), 0);
  for (std::size_t n = 0; n < scheme.size(); ++n) {
    const TimeBlock& b = scheme[n];
    std::vector<std::vector<double>> by_fold;
    for (const auto& fold : folds) {
      std::vector<double> errs;
      for (Eigen::Index i = 0; i < fold.measured.rows(); ++i) {
        try {
          errs.push_back(profile_error(fold.measured.row(i).transpose(),
                                       fold.predicted.row(i).transpose(), {b.first, b.last}));
        } catch (const UndefinedMetric&) {
          ++out.excluded[n];
        }
      }
      by_fold.push_back(std::move(errs));
    }
    const bool any = std::any_of(by_fold.begin(), by_fold.end(),
                                 [](const auto& v) { return !v.empty(); });
    out.mape[static_cast<Eigen::Index>(n)] =
        any ? aggregate_mape(by_fold) : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

std::size_t Histogram::total() const {
  std::size_t s = overflow;
  for (auto c : bins) s += c;
  return s;
}

Histogram error_histogram(std::span<const double> errors) {
  Histogram h;
  for (double e : errors) {
    if (!(e < 1.0)) {
      ++h.overflow;
      continue;
    }
    auto s = static_cast<long>(std::floor(e * 100.0));
    if (s > 0 && e < static_cast<double>(s) / 100.0) --s;
    if (s < 99 && e >= static_cast<double>(s + 1) / 100.0) ++s;
    h.bins[static_cast<std::size_t>(std::clamp(s, 0L, 99L))]++;
  }
  return h;
}

namespace {

bool same(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

bool same(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (!same(a[i], b[i])) return false;
  return true;
}

template <class E>
[[noreturn]] void rethrow_with_fold(std::size_t p, const E& e) {
  throw E("fold " + std::to_string(p) + ": " + e.what());
}

}  // namespace

bool operator==(const ProfileRecord& a, const ProfileRecord& b) {
  return a.id == b.id && same(a.measured, b.measured) && same(a.predicted, b.predicted);
}

bool operator==(const EvalReport& a, const EvalReport& b) {
  return a.model_label == b.model_label && a.fold_plan_digest == b.fold_plan_digest &&
         a.config == b.config && a.range == b.range && same(a.mape, b.mape) &&
         same(a.median_error, b.median_error) && same(a.mape_per_block, b.mape_per_block) &&
         a.block_excluded == b.block_excluded && a.histogram == b.histogram &&
         a.per_landing_error == b.per_landing_error && a.undefined == b.undefined &&
         a.training_digests == b.training_digests && a.profiles == b.profiles;
}

EvalReport cross_validate(const FlightDatabase& db, const RegressorFactory& factory,
                          const FoldPlan& plan, const CvOptions& options) {
  if (plan.n_ob != db.size()) throw ArgumentError("fold plan does not match database size");
  if (!db.all_have_targets()) throw SchemaError("cross-validation needs decel_force on every landing");
  options.range.check(db.horizon());
  const BlockScheme table = block_scheme(db.horizon(), options.table_blocks);

  const std::size_t m = plan.folds.size();
  std::vector<FoldPredictions> preds(m);
  std::vector<std::string> digests(m);
  std::vector<std::string> labels(m);

  parallel_for(m, options.threads, [&](std::size_t p) {
    try {
      const auto& test_pos = plan.folds[p];
      const FlightDatabase train = db.without(test_pos);
      const FlightDatabase test = db.subset(test_pos);
      digests[p] = train.digest();
      auto reg = factory();
      reg->fit(train);
      labels[p] = reg->label();
      FoldPredictions& fp = preds[p];
      fp.measured = test.targets();
      fp.predicted = reg->predict(test.landings());
      for (const auto& l : test.landings()) fp.ids.push_back(l.id);
      if (fp.predicted.rows() != fp.measured.rows() || fp.predicted.cols() != fp.measured.cols())
        throw ArgumentError("regressor returned a prediction of the wrong shape");
    } catch (const FactorizationError& e) {
      rethrow_with_fold(p, e);
    } catch (const NumericError& e) {
      rethrow_with_fold(p, e);
    } catch (const SchemaError& e) {
      rethrow_with_fold(p, e);
    } catch (const ArgumentError& e) {
      rethrow_with_fold(p, e);
    } catch (const std::runtime_error& e) {
      rethrow_with_fold(p, e);
    }
  });

  EvalReport r;
  r.model_label = m > 0 ? labels.front() : factory()->label();
  r.fold_plan_digest = plan.digest();
  r.range = options.range;
  r.training_digests = digests;

  std::vector<std::vector<double>> by_fold(m);
  std::vector<double> all;
  for (std::size_t p = 0; p < m; ++p) {
    const FoldPredictions& fp = preds[p];
    for (Eigen::Index i = 0; i < fp.measured.rows(); ++i) {
      const Vector y = fp.measured.row(i).transpose();
      const Vector f = fp.predicted.row(i).transpose();
      r.profiles.push_back({fp.ids[static_cast<std::size_t>(i)], y, f});
      try {
        const double e = profile_error(y, f, options.range);
        by_fold[p].push_back(e);
        all.push_back(e);
        r.per_landing_error.push_back({fp.ids[static_cast<std::size_t>(i)], p, e});
      } catch (const UndefinedMetric&) {
        ++r.undefined;
      }
    }
  }
  const bool any = !all.empty();
  r.mape = any ? aggregate_mape(by_fold) : std::numeric_limits<double>::quiet_NaN();
  r.median_error = median_error(all);
  r.histogram = error_histogram(all);
  const BlockMape bm = mape_blocks(preds, table);
  r.mape_per_block = bm.mape;
  r.block_excluded = bm.excluded;
  return r;
}

AnomalyScore anomaly_score(const GpModel& model, const Landing& landing, EvalRange range,
                           bool with_variance) {
  if (landing.horizon() != model.horizon)
    throw SchemaError("landing " + std::to_string(landing.id) + " has horizon " +
                      std::to_string(landing.horizon()) + ", model expects " +
                      std::to_string(model.horizon));
  if (!landing.has_target())
    throw SchemaError("landing " + std::to_string(landing.id) + " has no decel_force");
  const std::vector<InputVector> in{landing.input()};
  const Vector predicted = predict_profile(model, in).row(0).transpose();
  AnomalyScore s;
  s.deviation = *landing.decel_force - predicted;
  s.aggregate = profile_error(*landing.decel_force, predicted, range);
  if (with_variance) {
    const Matrix var = predict_variance(model, in);
    Vector z(s.deviation.size());
    for (int t = 0; t <= model.horizon; ++t) {
      const double sigma = model.theta_at(t).noise_std;
      z[t] = s.deviation[t] / std::sqrt(var(0, t) + sigma * sigma);
    }
    s.z_like = std::move(z);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Report files

namespace {

json number(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

double number_from(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json vector_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v[i]));
  return a;
}

Vector vector_from(const json& a) {
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = number_from(a[i]);
  return v;
}

json report_json(const EvalReport& r) {
  json j;
  j["model"] = r.model_label;
  j["fold_plan_digest"] = r.fold_plan_digest;
  j["config"] = r.config;
  j["range"] = {r.range.first, r.range.last};
  j["mape"] = number(r.mape);
  j["median_error"] = number(r.median_error);
  j["mape_per_block"] = vector_json(r.mape_per_block);
  j["block_excluded"] = r.block_excluded;
  j["histogram"] = {{"bins", r.histogram.bins}, {"overflow", r.histogram.overflow}};
  j["undefined"] = r.undefined;
  j["training_digests"] = r.training_digests;
  json errs = json::array();
  for (const auto& e : r.per_landing_error)
    errs.push_back({{"id", e.id}, {"fold", e.fold}, {"error", e.error}});
  j["per_landing_error"] = std::move(errs);
  json profs = json::array();
  for (const auto& p : r.profiles)
    profs.push_back(
        {{"id", p.id}, {"measured", vector_json(p.measured)}, {"predicted", vector_json(p.predicted)}});
  j["profiles"] = std::move(profs);
  return j;
}

EvalReport report_from(const json& j) {
  EvalReport r;
  r.model_label = j.at("model").get<std::string>();
  r.fold_plan_digest = j.at("fold_plan_digest").get<std::string>();
  r.config = j.at("config").get<std::map<std::string, std::string>>();
  r.range = {j.at("range").at(0).get<int>(), j.at("range").at(1).get<int>()};
  r.mape = number_from(j.at("mape"));
  r.median_error = number_from(j.at("median_error"));
  r.mape_per_block = vector_from(j.at("mape_per_block"));
  r.block_excluded = j.at("block_excluded").get<std::vector<std::size_t>>();
  const json& h = j.at("histogram");
  if (h.at("bins").size() != kHistogramBins) throw SchemaError("histogram must have 100 bins");
  for (std::size_t s = 0; s < kHistogramBins; ++s) r.histogram.bins[s] = h.at("bins")[s].get<std::size_t>();
  r.histogram.overflow = h.at("overflow").get<std::size_t>();
  r.undefined = j.at("undefined").get<std::size_t>();
  r.training_digests = j.at("training_digests").get<std::vector<std::string>>();
  for (const auto& e : j.at("per_landing_error"))
    r.per_landing_error.push_back(
        {e.at("id").get<std::uint64_t>(), e.at("fold").get<std::size_t>(), e.at("error").get<double>()});
  for (const auto& p : j.at("profiles"))
    r.profiles.push_back(
        {p.at("id").get<std::uint64_t>(), vector_from(p.at("measured")), vector_from(p.at("predicted"))});
  return r;
}

std::string csv_number(double v) { return std::isnan(v) ? "nan" : format_double(v); }

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SchemaError("cannot write " + path.string());
  out << content;
  if (!out) throw SchemaError("write failed for " + path.string());
}

}  // namespace

std::string reports_to_json(std::span<const EvalReport> reports) {
  json j;
  j["format_version"] = 1;
  j["reports"] = json::array();
  for (const auto& r : reports) j["reports"].push_back(report_json(r));
  return j.dump(1) + "\n";
}

std::vector<EvalReport> reports_from_json(const std::string& text) {
  std::vector<EvalReport> out;
  try {
    const json j = json::parse(text);
    if (j.at("format_version").get<int>() != 1) throw SchemaError("unsupported report format_version");
    for (const auto& r : j.at("reports")) out.push_back(report_from(r));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed report: ") + e.what());
  }
  return out;
}

std::vector<EvalReport> load_reports(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return reports_from_json(ss.str());
}

void emit_report(std::span<const EvalReport> reports, ReportFormat format,
                 const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw SchemaError("cannot create directory " + dir + ": " + ec.message());
  const fs::path base(dir);

  if (format == ReportFormat::Json) {
    write_file(base / "report.json", reports_to_json(reports));
    return;
  }

  std::string profiles = "landing_id,t,measured,predicted,model\n";
  std::string mape = "model,mape,median_error\n";
  std::string hist = "model,bin_percent,count\n";
  std::string blocks = "model,block_index,mape_n\n";
  for (const auto& r : reports) {
    const std::string& m = r.model_label;
    for (const auto& p : r.profiles) {
      const std::string id = std::to_string(p.id);
      for (Eigen::Index t = 0; t < p.measured.size(); ++t) {
        profiles += id + "," + std::to_string(t) + "," + csv_number(p.measured[t]) + "," +
                    csv_number(p.predicted[t]) + "," + m + "\n";
      }
    }
    mape += m + "," + csv_number(r.mape) + "," + csv_number(r.median_error) + "\n";
    for (std::size_t s = 0; s < kHistogramBins; ++s)
      hist += m + "," + std::to_string(s) + "," + std::to_string(r.histogram.bins[s]) + "\n";
    hist += m + ",100," + std::to_string(r.histogram.overflow) + "\n";
    for (Eigen::Index n = 0; n < r.mape_per_block.size(); ++n)
      blocks += m + "," + std::to_string(n) + "," + csv_number(r.mape_per_block[n]) + "\n";
  }
  write_file(base / "profiles.csv", profiles);
  write_file(base / "mape.csv", mape);
  write_file(base / "hist.csv", hist);
  write_file(base / "blocks.csv", blocks);
}

}  // namespace decelgp
