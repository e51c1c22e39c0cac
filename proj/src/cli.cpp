#include "decelgp/cli.hpp"

#include <deque>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "decelgp/baselines.hpp"
#include "decelgp/config.hpp"
#include "decelgp/dataset.hpp"
#include "decelgp/evaluate.hpp"
#include "decelgp/gp_core.hpp"
#include "decelgp/hyperfit.hpp"

namespace decelgp {
namespace {

/// One flag bound to a config key; the key is the flag name with '-' -> '_'.
struct Bound {
  CLI::App* sub = nullptr;
  std::string key;
  std::string value;
  bool flag = false;
  bool set = false;
  CLI::Option* opt = nullptr;
};

class Parser {
 public:
  explicit Parser(CLI::App& app) : app_(app) {}

  CLI::App* sub(const std::string& name, const std::string& help) {
    CLI::App* s = app_.add_subcommand(name, help);
    option(s, "--config", "key=value configuration file; flags take precedence");
    option(s, "--seed", "root seed for all randomness");
    option(s, "--threads", "worker threads (output does not depend on it)");
    return s;
  }

  CLI::Option* option(CLI::App* s, const std::string& name, const std::string& help) {
    Bound& b = bound_.emplace_back();
    b.sub = s;
    b.key = key_of(name);
    b.opt = s->add_option(name, b.value, help);
    return b.opt;
  }

  CLI::Option* flag(CLI::App* s, const std::string& name, const std::string& help) {
    Bound& b = bound_.emplace_back();
    b.sub = s;
    b.key = key_of(name);
    b.flag = true;
    b.opt = s->add_flag(name, b.set, help);
    return b.opt;
  }

  /// Config file values overlaid with the flags given on the command line.
  FlatConfig resolve(CLI::App* s) const {
    FlatConfig cfg;
    for (const auto& b : bound_)
      if (b.sub == s && b.key == "config" && b.opt->count() > 0) cfg = FlatConfig::load(b.value);
    for (const auto& b : bound_) {
      if (b.sub != s || b.key == "config" || b.opt->count() == 0) continue;
      cfg.set(b.key, b.flag ? "1" : b.value);
    }
    return cfg;
  }

 private:
  static std::string key_of(const std::string& name) {
    std::string k = name.substr(2);
    for (auto& c : k)
      if (c == '-') c = '_';
    return k;
  }

  CLI::App& app_;
  std::deque<Bound> bound_;
};

std::string require(const FlatConfig& cfg, const std::string& key) {
  auto v = cfg.get(key);
  if (!v || v->empty()) throw ArgumentError("--" + key + " is required");
  return *v;
}

long long get_int(const FlatConfig& cfg, const std::string& key, long long fallback) {
  try {
    return cfg.get_int(key, fallback);
  } catch (const SchemaError& e) {
    throw ArgumentError(e.what());
  }
}

double get_double(const FlatConfig& cfg, const std::string& key, double fallback) {
  try {
    return cfg.get_double(key, fallback);
  } catch (const SchemaError& e) {
    throw ArgumentError(e.what());
  }
}

bool get_bool(const FlatConfig& cfg, const std::string& key) {
  const std::string v = cfg.get_string(key, "0");
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ArgumentError(key + ": expected 0/1 or true/false");
}

std::uint64_t get_seed(const FlatConfig& cfg) {
  const long long s = get_int(cfg, "seed", 0);
  if (s < 0) throw ArgumentError("seed must be non-negative");
  return static_cast<std::uint64_t>(s);
}

unsigned get_threads(const FlatConfig& cfg) {
  const long long n = get_int(cfg, "threads", 1);
  if (n < 1 || n > 1024) throw ArgumentError("threads must be in [1, 1024]");
  return static_cast<unsigned>(n);
}

int get_blocks(const FlatConfig& cfg, const std::string& key, int horizon) {
  const long long n = get_int(cfg, key, 10);
  if (n < 1 || n > horizon + 1)
    throw ArgumentError("--" + key + " must be in [1, " + std::to_string(horizon + 1) + "]");
  return static_cast<int>(n);
}

std::string config_digest(const FlatConfig& cfg) {
  Digest d;
  d.update(cfg.canonical());
  return d.hex();
}

FitOptions fit_options(const FlatConfig& cfg, FlatConfig& effective) {
  FitOptions o;
  try {
    o.optimizer = OptimizerConfig::from_config(cfg);
  } catch (const SchemaError& e) {
    throw ArgumentError(e.what());
  }
  o.optimizer.seed = get_seed(cfg);
  o.optimizer.validate();
  o.weight = TimeWeight::parse(cfg.get_string("weight", "uniform"));
  o.standardize = get_bool(cfg, "standardize");
  effective.set("max_iters", std::to_string(o.optimizer.max_iters));
  effective.set("restarts", std::to_string(o.optimizer.restarts));
  effective.set("init_step", format_double(o.optimizer.init_step));
  effective.set("convergence_tol", format_double(o.optimizer.convergence_tol));
  effective.set("max_halvings", std::to_string(o.optimizer.max_halvings));
  effective.set("weight", o.weight.name());
  effective.set("standardize", o.standardize ? "1" : "0");
  return o;
}

void add_fit_flags(Parser& p, CLI::App* s) {
  p.option(s, "--blocks", "number of time blocks N (default 10)");
  p.option(s, "--weight", "kernel time weight: uniform|causal");
  p.flag(s, "--standardize", "z-score input channels before the kernel");
  p.option(s, "--max-iters", "optimizer iterations per restart");
  p.option(s, "--restarts", "optimizer starts per block, the first at the median heuristic");
  p.option(s, "--init-step", "initial step length in log space");
  p.option(s, "--convergence-tol", "relative LML gain that stops a restart");
  p.option(s, "--max-halvings", "backtracking halvings per iteration");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SchemaError("cannot write " + path);
  out << content;
  if (!out) throw SchemaError("write failed for " + path);
}

// ---------------------------------------------------------------------------

int cmd_gen(const FlatConfig& cfg, std::ostream& out) {
  GeneratorConfig g;
  try {
    g = GeneratorConfig::from_config(cfg);
  } catch (const SchemaError& e) {
    throw ArgumentError(e.what());
  }
  g.validate();
  const std::string path = require(cfg, "out");
  const FlightDatabase db = generate_synthetic(g);
  save_csv(db, path);
  out << "gen: config=" << config_digest(g.to_config()) << " data=" << db.digest()
      << " landings=" << db.size() << " horizon=" << db.horizon() << "\n";
  return kExitOk;
}

int cmd_fit(const FlatConfig& cfg, std::ostream& out) {
  const FlightDatabase db = load_csv(require(cfg, "data"));
  const std::string path = require(cfg, "out");
  FlatConfig effective;
  const int n = get_blocks(cfg, "blocks", db.horizon());
  effective.set("blocks", std::to_string(n));
  effective.set("seed", std::to_string(get_seed(cfg)));
  FitOptions o = fit_options(cfg, effective);
  o.threads = get_threads(cfg);
  std::vector<BlockFit> fits;
  const GpModel model = fit_model(db, block_scheme(db.horizon(), n), o, &fits);
  save_model(model, path);
  std::size_t warnings = 0;
  for (const auto& f : fits) warnings += f.warning ? 1 : 0;
  out << "fit: config=" << config_digest(effective) << " data=" << db.digest()
      << " blocks=" << n << " warnings=" << warnings << "\n";
  return kExitOk;
}

int cmd_predict(const FlatConfig& cfg, std::ostream& out) {
  const GpModel model = load_model(require(cfg, "model_file"));
  const FlightDatabase db = load_csv(require(cfg, "data"));
  const std::string path = require(cfg, "out");
  if (db.horizon() != model.horizon && !db.empty())
    throw SchemaError("data horizon " + std::to_string(db.horizon()) +
                      " does not match model horizon " + std::to_string(model.horizon));
  const bool with_var = get_bool(cfg, "variance");
  FlatConfig effective;
  effective.set("variance", with_var ? "1" : "0");

  std::string text = with_var ? "landing_id,t,predicted,variance\n" : "landing_id,t,predicted\n";
  if (!db.empty()) {
    const auto inputs = db.inputs();
    const Matrix mean = predict_profile(model, inputs);
    Matrix var;
    if (with_var) var = predict_variance(model, inputs);
    for (std::size_t i = 0; i < db.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const std::string id = std::to_string(db.landings()[i].id);
      for (int t = 0; t <= model.horizon; ++t) {
        text += id + "," + std::to_string(t) + "," + format_double(mean(r, t));
        if (with_var) text += "," + format_double(var(r, t));
        text += "\n";
      }
    }
  }
  write_text(path, text);
  out << "predict: config=" << config_digest(effective) << " data=" << db.digest()
      << " model=" << model.data_digest << " landings=" << db.size() << "\n";
  return kExitOk;
}

int cmd_crossval(const FlatConfig& cfg, std::ostream& out) {
  const FlightDatabase db = load_csv(require(cfg, "data"));
  const std::string dir = require(cfg, "out");
  const std::uint64_t seed = get_seed(cfg);
  const unsigned threads = get_threads(cfg);

  FlatConfig effective;
  const int n = get_blocks(cfg, "blocks", db.horizon());
  const int table = get_blocks(cfg, "table_blocks", db.horizon());
  const long long folds = get_int(cfg, "folds", 5);
  const long long n_test = get_int(cfg, "test_size", 20);
  if (folds < 1 || n_test < 1) throw ArgumentError("--folds and --test-size must be positive");
  const EvalRange range = EvalRange::parse(cfg.get_string("range", "0:40"), db.horizon());
  const FeatureMode features = parse_feature_mode(cfg.get_string("features", "per_time"));
  const long long trees = get_int(cfg, "trees", 500);
  if (trees < 1) throw ArgumentError("--trees must be positive");
  const std::string fmt = cfg.get_string("format", "both");
  if (fmt != "csv" && fmt != "json" && fmt != "both")
    throw ArgumentError("--format must be csv, json or both");
  const auto models = split_list(cfg.get_string("model", "gp"));
  if (models.empty()) throw ArgumentError("--model needs at least one of gp,lr,rf");

  effective.set("model", cfg.get_string("model", "gp"));
  effective.set("blocks", std::to_string(n));
  effective.set("table_blocks", std::to_string(table));
  effective.set("folds", std::to_string(folds));
  effective.set("test_size", std::to_string(n_test));
  effective.set("seed", std::to_string(seed));
  effective.set("range", range.to_string());
  effective.set("features", to_string(features));
  effective.set("trees", std::to_string(trees));
  effective.set("data_digest", db.digest());
  FitOptions gp_opts = fit_options(cfg, effective);

  std::vector<RegressorFactory> factories;
  for (const auto& m : models) {
    if (m == "gp") {
      factories.push_back([n, gp_opts] { return std::make_unique<GpRegressor>(n, gp_opts); });
    } else if (m == "lr") {
      factories.push_back([features] { return std::make_unique<LinearRegressor>(features); });
    } else if (m == "rf") {
      ForestConfig fc;
      fc.n_trees = static_cast<int>(trees);
      fc.seed = seed;
      fc.features = features;
      factories.push_back([fc] { return std::make_unique<ForestRegressor>(fc); });
    } else {
      throw ArgumentError("unknown model '" + m + "' (expected gp, lr or rf)");
    }
  }

  const FoldPlan plan = split_folds(db.size(), static_cast<std::size_t>(folds),
                                    static_cast<std::size_t>(n_test), seed);
  CvOptions cv;
  cv.range = range;
  cv.table_blocks = table;
  cv.threads = threads;

  std::vector<EvalReport> reports;
  for (const auto& f : factories) {
    EvalReport r = cross_validate(db, f, plan, cv);
    r.config = effective.values();
    reports.push_back(std::move(r));
  }
  if (fmt != "json") emit_report(reports, ReportFormat::Csv, dir);
  if (fmt != "csv") emit_report(reports, ReportFormat::Json, dir);

  out << "crossval: config=" << config_digest(effective) << " data=" << db.digest()
      << " folds=" << plan.digest();
  for (const auto& r : reports) out << " " << r.model_label << "_mape=" << format_double(r.mape);
  out << "\n";
  return kExitOk;
}

int cmd_score(const FlatConfig& cfg, std::ostream& out) {
  const GpModel model = load_model(require(cfg, "model_file"));
  const FlightDatabase db = load_csv(require(cfg, "data"));
  const std::string path = require(cfg, "out");
  const EvalRange range = EvalRange::parse(cfg.get_string("range", "0:40"), model.horizon);
  const bool with_var = get_bool(cfg, "variance");
  const std::optional<std::string> thr_text = cfg.get("threshold");
  std::optional<double> threshold;
  if (thr_text) threshold = get_double(cfg, "threshold", 0.0);

  FlatConfig effective;
  effective.set("range", range.to_string());
  effective.set("variance", with_var ? "1" : "0");
  if (threshold) effective.set("threshold", format_double(*threshold));

  std::string scores = "landing_id,aggregate,flagged\n";
  std::string devs = with_var ? "landing_id,t,deviation,z_like\n" : "landing_id,t,deviation\n";
  std::size_t flagged = 0;
  for (const auto& l : db.landings()) {
    const AnomalyScore s = anomaly_score(model, l, range, with_var);
    const std::string id = std::to_string(l.id);
    std::string flag = "-";
    if (threshold) {
      const bool hit = s.aggregate > *threshold;
      flagged += hit ? 1 : 0;
      flag = hit ? "1" : "0";
    }
    scores += id + "," + format_double(s.aggregate) + "," + flag + "\n";
    for (Eigen::Index t = 0; t < s.deviation.size(); ++t) {
      devs += id + "," + std::to_string(t) + "," + format_double(s.deviation[t]);
      if (with_var) devs += "," + format_double((*s.z_like)[t]);
      devs += "\n";
    }
  }
  write_text(path, scores);
  if (auto dpath = cfg.get("deviations")) write_text(*dpath, devs);
  out << "score: config=" << config_digest(effective) << " data=" << db.digest()
      << " model=" << model.data_digest << " landings=" << db.size();
  if (threshold) out << " flagged=" << flagged;
  out << "\n";
  return kExitOk;
}

int cmd_report(const FlatConfig& cfg, std::ostream& out) {
  const std::string in = require(cfg, "in");
  const std::string dir = require(cfg, "out");
  const std::string fmt = cfg.get_string("format", "csv");
  if (fmt != "csv" && fmt != "json" && fmt != "both")
    throw ArgumentError("--format must be csv, json or both");
  const auto reports = load_reports(in);
  if (fmt != "json") emit_report(reports, ReportFormat::Csv, dir);
  if (fmt != "csv") emit_report(reports, ReportFormat::Json, dir);
  FlatConfig effective;
  effective.set("format", fmt);
  Digest d;
  d.update(reports_to_json(reports));
  out << "report: config=" << config_digest(effective) << " data=" << d.hex()
      << " reports=" << reports.size() << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gaussian-process reconstruction of landing deceleration profiles", "decelgp"};
  app.require_subcommand(1, 1);
  Parser p(app);

  CLI::App* gen = p.sub("gen", "generate a synthetic landing database");
  p.option(gen, "--out", "output CSV path");
  p.option(gen, "--landings", "number of landings");
  p.option(gen, "--horizon", "last time index T");
  p.option(gen, "--first-id", "id of the first landing");
  p.option(gen, "--noise-std", "measurement noise standard deviation");
  p.option(gen, "--brake-profile", "ramp|step|modulated");
  p.option(gen, "--throttle-profile", "reverse|idle");
  p.option(gen, "--brake-regime-change", "time of the brake regime change (-1: none)");
  p.option(gen, "--brake-degradation", "multiplier on the brake coefficient");

  CLI::App* fit = p.sub("fit", "fit a blockwise GP model");
  p.option(fit, "--data", "training CSV");
  p.option(fit, "--out", "model JSON path");
  add_fit_flags(p, fit);

  CLI::App* predict = p.sub("predict", "predict deceleration profiles");
  p.option(predict, "--model-file", "model JSON");
  p.option(predict, "--data", "CSV of input landings");
  p.option(predict, "--out", "output CSV path");
  p.flag(predict, "--variance", "also write the posterior variance");

  CLI::App* cv = p.sub("crossval", "cross-validate GP and baseline models");
  p.option(cv, "--data", "landing CSV with decel_force");
  p.option(cv, "--out", "report directory");
  p.option(cv, "--model", "comma-separated list of gp, lr, rf");
  p.option(cv, "--folds", "number of folds M");
  p.option(cv, "--test-size", "landings per test fold");
  p.option(cv, "--range", "evaluation range a:b or full (default 0:40)");
  p.option(cv, "--table-blocks", "blocks of the per-block MAPE table (default 10)");
  p.option(cv, "--features", "baseline features: per_time|full");
  p.option(cv, "--trees", "random forest size");
  p.option(cv, "--format", "csv|json|both");
  add_fit_flags(p, cv);

  CLI::App* score = p.sub("score", "anomaly scores of landings against a model");
  p.option(score, "--model-file", "model JSON");
  p.option(score, "--data", "landing CSV with decel_force");
  p.option(score, "--out", "output CSV of aggregate scores");
  p.option(score, "--deviations", "optional CSV of per-t deviations");
  p.option(score, "--range", "evaluation range a:b or full (default 0:40)");
  p.option(score, "--threshold", "flag landings whose aggregate exceeds this");
  p.flag(score, "--variance", "add variance-normalized deviations");

  CLI::App* report = p.sub("report", "re-emit a JSON report in other formats");
  p.option(report, "--in", "report.json");
  p.option(report, "--out", "output directory");
  p.option(report, "--format", "csv|json|both");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    CLI::App* active = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << active->help();
    return kExitUsage;
  }

  CLI::App* active = app.get_subcommands().front();
  try {
    const FlatConfig cfg = p.resolve(active);
    const std::string name = active->get_name();
    if (name == "gen") return cmd_gen(cfg, out);
    if (name == "fit") return cmd_fit(cfg, out);
    if (name == "predict") return cmd_predict(cfg, out);
    if (name == "crossval") return cmd_crossval(cfg, out);
    if (name == "score") return cmd_score(cfg, out);
    return cmd_report(cfg, out);
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n" << active->help();
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace decelgp
