#include "clustcr/data.hpp"
#include "clustcr/errors.hpp"
#include "clustcr/estimator.hpp"
#include "clustcr/gof.hpp"
#include "clustcr/inference.hpp"
#include "clustcr/simulation.hpp"
#include "clustcr/stats.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace clustcr;

namespace {

constexpr int kSchemaVersion = 1;
constexpr int kExitData = 2;
constexpr int kExitConvergence = 3;

struct Options {
  std::string input;
  std::string out = ".";
  int causes = 0;
  std::string design = "time";
  std::string z0;
  std::string band = "both";
  double level = 0.95;
  double t1 = -1.0;
  double t2 = -1.0;
  int nsim = 1000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string scenario;
  std::size_t reps = 100;
  bool seed_set = false;
};

// Stage errors other than bad input: the fit itself failed.
struct ConvergenceFailure {
  std::string message;
  json diagnostics;
};

DesignSpec design_spec(const std::string& name) {
  DesignSpec spec;
  if (name == "time") spec.time = TimeTransform::Identity;
  else if (name == "logtime") spec.time = TimeTransform::Log;
  else throw DomainError("unknown design '" + name + "' (expected time or logtime)");
  return spec;
}

Eigen::VectorXd parse_z0(const std::string& text, int p) {
  if (text.empty()) return Eigen::VectorXd::Zero(p);
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw DomainError("bad --z0 entry '" + item + "'");
    }
  }
  if (static_cast<int>(v.size()) != p)
    throw DomainError("--z0 has " + std::to_string(v.size()) + " values but the data have " + std::to_string(p) +
                      " covariates");
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError(DataError::Kind::Io, "cannot write " + path.string());
  out.precision(17);
  return out;
}

void write_json(const fs::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

std::string num(double v) {
  if (!std::isfinite(v)) return "NA";
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

struct Loaded {
  Dataset data;
  Frame frame;
  FitResult fit;
};

Loaded load_and_fit(const Options& o) {
  CsvSchema schema;
  schema.k = o.causes;
  Dataset data = load_csv(o.input, schema);
  Frame frame(data);
  FitResult result;
  try {
    result = fit(frame, design_spec(o.design));
  } catch (const DataError&) {
    throw;
  } catch (const DomainError&) {
    throw;
  } catch (const Error& e) {
    throw ConvergenceFailure{e.what(), json{{"stage_error", e.what()}}};
  }
  if (!result.converged()) {
    json d;
    d["missingness"] = {{"converged", result.missingness.converged},
                        {"iterations", result.missingness.iterations},
                        {"equation_norm", result.missingness.equation_norm}};
    for (const auto& c : result.causes)
      d["causes"].push_back({{"cause", c.cause},
                             {"converged", c.converged},
                             {"diverging", c.diverging},
                             {"iterations", c.iterations},
                             {"score_norm", c.score_norm}});
    throw ConvergenceFailure{"estimation did not converge", d};
  }
  return {std::move(data), std::move(frame), std::move(result)};
}

json missingness_json(const MissingnessModel& m) {
  json j;
  j["fitted"] = m.fitted;
  j["converged"] = m.converged;
  j["iterations"] = m.iterations;
  j["separation"] = m.separation;
  j["design"] = m.spec.time == TimeTransform::Log ? "logtime" : "time";
  j["gamma"] = json::array();
  for (Eigen::Index c = 0; c < m.gamma.cols(); ++c) {
    std::vector<double> col(m.gamma.col(c).data(), m.gamma.col(c).data() + m.gamma.rows());
    j["gamma"].push_back(col);
  }
  j["warnings"] = m.warnings;
  return j;
}

int cmd_fit(const Options& o) {
  const Loaded x = load_and_fit(o);
  const InfluenceSet infl = influence(x.frame, x.fit);
  const std::size_t n = x.frame.n_clusters;
  const double zcrit = normal_critical(o.level);
  fs::create_directories(o.out);

  json j;
  j["schema_version"] = kSchemaVersion;
  j["n_clusters"] = n;
  j["n_subjects"] = x.frame.n_subjects;
  j["k"] = x.frame.k;
  j["level"] = o.level;
  j["missingness"] = missingness_json(x.fit.missingness);
  for (int l = 1; l <= x.frame.k; ++l) {
    const CauseFit& cf = x.fit.cause(l);
    const Eigen::VectorXd se = infl.cause(l).standard_errors(n);
    json c;
    c["cause"] = l;
    c["iterations"] = cf.iterations;
    for (Eigen::Index m = 0; m < cf.beta.size(); ++m) {
      const double b = cf.beta[m];
      const double z = b / se[m];
      c["coefficients"].push_back({{"name", "z" + std::to_string(m + 1)},
                                   {"beta", b},
                                   {"se", se[m]},
                                   {"z", z},
                                   {"p", 2.0 * (1.0 - normal_cdf(std::abs(z)))},
                                   {"hr", std::exp(b)},
                                   {"hr_lower", std::exp(b - zcrit * se[m])},
                                   {"hr_upper", std::exp(b + zcrit * se[m])}});
    }
    j["causes"].push_back(c);

    const Eigen::VectorXd var = lambda_variance(infl, l);
    auto out = open_out(fs::path(o.out) / ("baseline_hazard_" + std::to_string(l) + ".csv"));
    out << "# schema_version=" << kSchemaVersion << "\n";
    out << "t,Lambda,se,lo,hi\n";
    for (std::size_t k = 0; k < x.fit.grid.size(); ++k) {
      const double est = cf.cumhaz.values()[k];
      const double v = var[static_cast<Eigen::Index>(k)];
      const Interval ci = pointwise_ci(est, v, n, Transform::Log, o.level);
      out << num(x.fit.grid[k]) << ',' << num(est) << ',' << num(std::sqrt(v / static_cast<double>(n))) << ','
          << num(ci.lower) << ',' << num(ci.upper) << '\n';
    }
  }
  write_json(fs::path(o.out) / "fit.json", j);
  return 0;
}

int cmd_predict(const Options& o) {
  const Loaded x = load_and_fit(o);
  const Eigen::VectorXd z0 = parse_z0(o.z0, x.frame.p);
  const InfluenceSet infl = influence(x.frame, x.fit);
  const std::size_t n = x.frame.n_clusters;
  const auto F = cif(x.fit, z0);
  const bool want_ep = o.band == "ep" || o.band == "both";
  const bool want_hw = o.band == "hw" || o.band == "both";
  if (!want_ep && !want_hw) throw DomainError("--band must be ep, hw or both");
  fs::create_directories(o.out);

  BandOptions base;
  base.level = o.level;
  base.nsim = o.nsim;
  base.seed = o.seed;
  const auto [d1, d2] = default_band_domain(x.frame);
  base.t1 = o.t1 >= 0.0 ? o.t1 : d1;
  base.t2 = o.t2 >= 0.0 ? o.t2 : d2;
  if (!(base.t1 < base.t2)) throw DomainError("band domain needs t1 < t2");
  BandOptions ep = base, hw = base;
  ep.weight = BandWeight::EqualPrecision;
  hw.weight = BandWeight::HallWellner;

  for (int l = 1; l <= x.frame.k; ++l) {
    const Eigen::MatrixXd phi = cif_influence(x.fit, infl, z0, l);
    const Eigen::VectorXd var = process_variance(phi);
    const auto& values = F[static_cast<std::size_t>(l - 1)].values();
    const Eigen::VectorXd est = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    const auto bands = multiplier_bands(x.fit.grid, est, phi, Transform::CLogLog, {ep, hw});
    for (const auto& b : bands)
      for (const auto& w : b.warnings) std::cerr << "cause " << l << ": " << w << '\n';

    const auto lookup = [](const BandResult& b, double t, bool lower) {
      const auto it = std::lower_bound(b.times.begin(), b.times.end(), t);
      if (it == b.times.end() || *it != t) return std::numeric_limits<double>::quiet_NaN();
      const auto i = static_cast<std::size_t>(it - b.times.begin());
      return lower ? b.lower[i] : b.upper[i];
    };
    auto out = open_out(fs::path(o.out) / ("cif_" + std::to_string(l) + ".csv"));
    out << "# schema_version=" << kSchemaVersion << "\n";
    out << "t,F,se,lo,hi,ep_lo,ep_hi,hw_lo,hw_hi\n";
    for (std::size_t k = 0; k < x.fit.grid.size(); ++k) {
      const double t = x.fit.grid[k];
      const double v = var[static_cast<Eigen::Index>(k)];
      const Interval ci = pointwise_ci(values[k], v, n, Transform::CLogLog, o.level);
      const double nan = std::numeric_limits<double>::quiet_NaN();
      out << num(t) << ',' << num(values[k]) << ',' << num(std::sqrt(v / static_cast<double>(n))) << ','
          << num(ci.degenerate ? nan : ci.lower) << ',' << num(ci.degenerate ? nan : ci.upper) << ','
          << num(want_ep ? lookup(bands[0], t, true) : nan) << ',' << num(want_ep ? lookup(bands[0], t, false) : nan)
          << ',' << num(want_hw ? lookup(bands[1], t, true) : nan) << ','
          << num(want_hw ? lookup(bands[1], t, false) : nan) << '\n';
    }
  }
  return 0;
}

int cmd_gof(const Options& o) {
  CsvSchema schema;
  schema.k = o.causes;
  const Dataset data = load_csv(o.input, schema);
  const Frame frame(data);
  MissingnessModel m;
  try {
    m = fit_missingness(frame, design_spec(o.design));
  } catch (const DataError&) {
    throw;
  } catch (const DomainError&) {
    throw;
  } catch (const Error& e) {
    throw ConvergenceFailure{e.what(), json{{"stage_error", std::string("cause-probability model: ") + e.what()}}};
  }
  if (!m.converged) throw ConvergenceFailure{"cause-probability model did not converge", missingness_json(m)};
  fs::create_directories(o.out);
  // with two causes the residual processes mirror each other
  const int last = frame.k == 2 ? 1 : frame.k;
  for (int l = 1; l <= last; ++l) {
    const GofResult r = gof_test(frame, m, l, o.nsim, o.seed);
    auto out = open_out(fs::path(o.out) / ("gof_" + std::to_string(l) + ".csv"));
    write_gof_csv(r, out);
    std::cout << "cause " << l << ": sup = " << r.statistic << ", p = " << r.p_value << '\n';
  }
  return 0;
}

int cmd_simulate(const Options& o) {
  ScenarioFile sf;
  if (!o.scenario.empty()) sf = read_scenario_file(o.scenario);
  else sf.config = scenario(1);
  if (o.seed_set) sf.config.seed = o.seed;
  sf.options.threads = o.threads;
  const MonteCarloSummary s = run_monte_carlo(sf.config, o.reps, sf.options);
  fs::create_directories(o.out);
  {
    auto out = open_out(fs::path(o.out) / "summary.csv");
    write_summary_csv(s, out);
  }
  {
    auto out = open_out(fs::path(o.out) / "replications.csv");
    write_replications_csv(s, out);
  }
  std::cout << "replications " << s.replications << ", failures " << s.failures << ", missing fraction "
            << s.missing_fraction << '\n';
  return 0;
}

void add_common(CLI::App* cmd, Options& o, bool needs_input) {
  auto* in = cmd->add_option("--input", o.input, "CSV with cluster_id,time,delta,cause,r,z1..,a1..");
  if (needs_input) in->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--causes", o.causes, "number of causes (default: largest observed)");
  cmd->add_option("--design", o.design, "time effect in the cause model")->check(CLI::IsMember({"time", "logtime"}));
  cmd->add_option("--level", o.level, "confidence level")->check(CLI::Range(0.5, 0.9999));
  cmd->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Marginal proportional cause-specific hazards for clustered competing risks with missing causes"};
  app.require_subcommand(1);
  Options o;

  auto* fit_cmd = app.add_subcommand("fit", "fit the model; writes fit.json and baseline_hazard_<l>.csv");
  add_common(fit_cmd, o, true);

  auto* predict_cmd = app.add_subcommand("predict", "cumulative incidence at z0 with bands; writes cif_<l>.csv");
  add_common(predict_cmd, o, true);
  predict_cmd->add_option("--z0", o.z0, "covariate values v1,v2,...");
  predict_cmd->add_option("--band", o.band, "band weight")->check(CLI::IsMember({"ep", "hw", "both"}));
  predict_cmd->add_option("--nsim", o.nsim, "multiplier draws")->check(CLI::PositiveNumber);
  predict_cmd->add_option("--t1", o.t1, "band start (default: 10th percentile of failure times)");
  predict_cmd->add_option("--t2", o.t2, "band end (default: 90th percentile of failure times)");
  auto* seed_predict = predict_cmd->add_option("--seed", o.seed, "random seed");

  auto* gof_cmd = app.add_subcommand("gof", "goodness of fit of the cause model; writes gof_<l>.csv");
  add_common(gof_cmd, o, true);
  gof_cmd->add_option("--nsim", o.nsim, "multiplier draws")->check(CLI::Range(100, 1000000));
  gof_cmd->add_option("--seed", o.seed, "random seed");

  auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo study; writes summary.csv and replications.csv");
  sim_cmd->add_option("--scenario", o.scenario, "key = value scenario file")->check(CLI::ExistingFile);
  sim_cmd->add_option("--reps", o.reps, "replications")->check(CLI::Range(2, 1000000));
  sim_cmd->add_option("--out", o.out, "output directory");
  sim_cmd->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
  auto* seed_sim = sim_cmd->add_option("--seed", o.seed, "random seed (overrides the scenario file)");

  CLI11_PARSE(app, argc, argv);
  o.seed_set = seed_sim->count() > 0 || seed_predict->count() > 0;

  try {
    if (fit_cmd->parsed()) return cmd_fit(o);
    if (predict_cmd->parsed()) return cmd_predict(o);
    if (gof_cmd->parsed()) return cmd_gof(o);
    return cmd_simulate(o);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const ConvergenceFailure& f) {
    std::cerr << "convergence failure: " << f.message << '\n';
    json d = f.diagnostics;
    d["schema_version"] = kSchemaVersion;
    d["message"] = f.message;
    try {
      fs::create_directories(o.out);
      write_json(fs::path(o.out) / "diagnostics.json", d);
    } catch (const std::exception& e) {
      std::cerr << "could not write diagnostics: " << e.what() << '\n';
    }
    return kExitConvergence;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConvergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
