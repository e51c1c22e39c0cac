#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "decelgp/baselines.hpp"
#include "decelgp/blocks.hpp"
#include "decelgp/dataset.hpp"
#include "decelgp/gp_core.hpp"

namespace decelgp {

/// Raised when a relative error has a zero-norm reference profile.
class UndefinedMetric : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Inclusive time interval [first, last].
struct EvalRange {
  int first = 0;
  int last = 40;

  static EvalRange full(int horizon) { return {0, horizon}; }
  /// "a:b" or "full".
  static EvalRange parse(const std::string& text, int horizon);
  std::string to_string() const;
  void check(int horizon) const;
  friend bool operator==(const EvalRange&, const EvalRange&) = default;
};

/// ||y - f|| / ||y|| over the range.
double profile_error(const Vector& y, const Vector& f, EvalRange range);

/// Mean over folds of the mean error within each fold. Empty folds are skipped.
double aggregate_mape(const std::vector<std::vector<double>>& errors_by_fold);

double median_error(std::vector<double> errors);

/// Measured and predicted profiles of one fold's held-out landings.
struct FoldPredictions {
  std::vector<std::uint64_t> ids;
  Matrix measured;
  Matrix predicted;
};

struct BlockMape {
  Vector mape;
  /// Landings dropped from a block because their measured profile is zero there.
  std::vector<std::size_t> excluded;
};

BlockMape mape_blocks(std::span<const FoldPredictions> folds, const BlockScheme& scheme);

inline constexpr std::size_t kHistogramBins = 100;

/// Bin s counts errors in [s/100, (s+1)/100); errors >= 1 go to overflow.
struct Histogram {
  std::array<std::size_t, kHistogramBins> bins{};
  std::size_t overflow = 0;

  std::size_t total() const;
  friend bool operator==(const Histogram&, const Histogram&) = default;
};

Histogram error_histogram(std::span<const double> errors);

struct LandingError {
  std::uint64_t id = 0;
  std::size_t fold = 0;
  double error = 0.0;
  friend bool operator==(const LandingError&, const LandingError&) = default;
};

struct ProfileRecord {
  std::uint64_t id = 0;
  Vector measured;
  Vector predicted;
  friend bool operator==(const ProfileRecord& a, const ProfileRecord& b);
};

struct EvalReport {
  std::string model_label;
  std::string fold_plan_digest;
  std::map<std::string, std::string> config;
  EvalRange range;
  double mape = 0.0;
  double median_error = 0.0;
  Vector mape_per_block;
  std::vector<std::size_t> block_excluded;
  Histogram histogram;
  std::vector<LandingError> per_landing_error;
  /// Held-out landings whose measured profile is zero over the range.
  std::size_t undefined = 0;
  std::vector<std::string> training_digests;
  std::vector<ProfileRecord> profiles;

  friend bool operator==(const EvalReport& a, const EvalReport& b);
};

struct CvOptions {
  EvalRange range;
  /// Block scheme used for the per-block table, independent of the model.
  int table_blocks = 10;
  unsigned threads = 1;
};

/// Trains a fresh regressor on the complement of each fold and scores the
/// held-out landings. Fit failures are rethrown with the fold index.
EvalReport cross_validate(const FlightDatabase& db, const RegressorFactory& factory,
                          const FoldPlan& plan, const CvOptions& options);

struct AnomalyScore {
  Vector deviation;
  double aggregate = 0.0;
  std::optional<Vector> z_like;
};

/// measured - predicted per t; aggregate is the relative profile error over range.
AnomalyScore anomaly_score(const GpModel& model, const Landing& landing, EvalRange range,
                           bool with_variance = false);

enum class ReportFormat { Csv, Json };

/// profiles.csv, mape.csv, hist.csv, blocks.csv (Csv) or report.json (Json) in `dir`.
void emit_report(std::span<const EvalReport> reports, ReportFormat format,
                 const std::string& dir);

std::string reports_to_json(std::span<const EvalReport> reports);
std::vector<EvalReport> reports_from_json(const std::string& text);
std::vector<EvalReport> load_reports(const std::string& path);

}  // namespace decelgp
