#include "clustcr/simulation.hpp"

#include "clustcr/errors.hpp"
#include "clustcr/estimator.hpp"
#include "clustcr/inference.hpp"
#include "clustcr/stats.hpp"

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <ostream>
#include <sstream>

namespace clustcr {

void ScenarioConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
  if (!(censor_rate > 0.0)) throw DomainError("censor_rate must be positive");
  if (n < 2) throw DomainError("need at least 2 clusters");
  const auto bad = [](int lo, int hi) { return lo < 1 || hi < lo; };
  if (bad(size_small_lo, size_small_hi) || bad(size_mid_lo, size_mid_hi) || bad(size_large_lo, size_large_hi))
    throw DomainError("invalid cluster size range");
}

ScenarioConfig scenario(int number) {
  ScenarioConfig cfg;
  if (number == 2) cfg.cause2 = Cause2Baseline::Weibull;
  else if (number != 1) throw DomainError("scenario must be 1 or 2");
  return cfg;
}

namespace {

double kanter_a(double alpha, double u) {
  return std::pow(std::sin(alpha * u), alpha / (1.0 - alpha)) * std::sin((1.0 - alpha) * u) /
         std::pow(std::sin(u), 1.0 / (1.0 - alpha));
}

}  // namespace

double sample_positive_stable(double alpha, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, std::numbers::pi);
  std::exponential_distribution<double> expo(1.0);
  double u = unif(rng);
  while (u <= 0.0) u = unif(rng);
  const double e = expo(rng);
  return std::pow(kanter_a(alpha, u) / e, (1.0 - alpha) / alpha);
}

double positive_stable_cdf(double alpha, double x) {
  if (!(x > 0.0)) return 0.0;
  const double power = std::pow(x, -alpha / (1.0 - alpha));
  boost::math::quadrature::tanh_sinh<double> integrator;
  // a(u) -> alpha^(alpha/(1-alpha)) (1-alpha) as u -> 0 and -> infinity as u -> pi
  const double a0 = std::pow(alpha, alpha / (1.0 - alpha)) * (1.0 - alpha);
  const auto f = [&](double u) {
    if (u < 1e-8) return std::exp(-a0 * power);
    if (std::numbers::pi - u < 1e-8) return 0.0;
    const double a = kanter_a(alpha, u);
    return std::isfinite(a) ? std::exp(-a * power) : 0.0;
  };
  return integrator.integrate(f, 0.0, std::numbers::pi) / std::numbers::pi;
}

double positive_stable_median(double alpha) {
  double lo = 1e-6;
  double hi = 1.0;
  while (positive_stable_cdf(alpha, hi) < 0.5) hi *= 2.0;
  while (positive_stable_cdf(alpha, lo) > 0.5) lo *= 0.5;
  const auto [a, b] = boost::math::tools::bisect([&](double x) { return positive_stable_cdf(alpha, x) - 0.5; }, lo,
                                                 hi, boost::math::tools::eps_tolerance<double>(45));
  return 0.5 * (a + b);
}

double baseline_hazard(const ScenarioConfig& cfg, int l, double t) {
  if (l == 1) return 1.0;
  if (cfg.cause2 == Cause2Baseline::Gompertz) return std::exp(-0.5 + 0.2 * t);
  return t > 0.0 ? 1.0 / (2.0 * std::sqrt(2.0 * t)) : std::numeric_limits<double>::infinity();
}

double baseline_cumhaz(const ScenarioConfig& cfg, int l, double t) {
  if (t <= 0.0) return 0.0;
  if (l == 1) return t;
  if (cfg.cause2 == Cause2Baseline::Gompertz) return std::exp(-0.5) * std::expm1(0.2 * t) / 0.2;
  return std::sqrt(t / 2.0);
}

Cluster generate_cluster(const ScenarioConfig& cfg, double w1, double w2, double median, std::mt19937_64& rng,
                         const std::string& id) {
  int lo = cfg.size_mid_lo;
  int hi = cfg.size_mid_hi;
  if (w1 < median && w2 < median) {
    lo = cfg.size_small_lo;
    hi = cfg.size_small_hi;
  } else if (w1 >= median && w2 >= median) {
    lo = cfg.size_large_lo;
    hi = cfg.size_large_hi;
  }
  const int m = std::uniform_int_distribution<int>(lo, hi)(rng);

  std::normal_distribution<double> z1_dist(0.0, 2.0);
  std::bernoulli_distribution z2_dist(0.5);
  std::exponential_distribution<double> censor(cfg.censor_rate);
  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Cluster cluster;
  cluster.id = id;
  cluster.subjects.reserve(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    Subject s;
    const double z1 = z1_dist(rng);
    const double z2 = z2_dist(rng) ? 1.0 : 0.0;
    s.z = Eigen::Vector2d(z1, z2);
    s.a = Eigen::VectorXd(0);
    double c = censor(rng);
    if (cfg.horizon > 0.0) c = std::min(c, cfg.horizon);
    const double e = expo(rng);
    const double u_cause = unif(rng);
    const double u_miss = unif(rng);

    const double a1 = w1 * std::exp(cfg.beta1 * z1);
    const double a2 = w2 * std::exp(cfg.beta2 * z2);
    const auto H = [&](double t) { return a1 * baseline_cumhaz(cfg, 1, t) + a2 * baseline_cumhaz(cfg, 2, t) - e; };
    if (H(c) <= 0.0) {
      s.x = c;
      s.delta = 0;
      s.cause = 0;
      s.r = 1;
    } else {
      std::uintmax_t iters = 200;
      const auto [t_lo, t_hi] =
          boost::math::tools::toms748_solve(H, 0.0, c, -e, H(c), boost::math::tools::eps_tolerance<double>(40), iters);
      const double t = 0.5 * (t_lo + t_hi);
      const double h1 = a1 * baseline_hazard(cfg, 1, t);
      const double h2 = a2 * baseline_hazard(cfg, 2, t);
      const int cause = u_cause < h1 / (h1 + h2) ? 1 : 2;
      const double eta = cfg.theta[0] + cfg.theta[1] * t + cfg.theta[2] * z1 + cfg.theta[3] * z2;
      const double p_obs = 1.0 / (1.0 + std::exp(-eta));
      s.x = t;
      s.delta = 1;
      s.r = u_miss < p_obs ? 1 : 0;
      s.cause = s.r == 1 ? cause : 0;
    }
    cluster.subjects.push_back(std::move(s));
  }
  return cluster;
}

namespace {

Dataset generate_with_median(const ScenarioConfig& cfg, std::mt19937_64& rng, double median) {
  std::vector<Cluster> clusters;
  clusters.reserve(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const double w1 = sample_positive_stable(cfg.alpha, rng);
    const double w2 = sample_positive_stable(cfg.alpha, rng);
    clusters.push_back(generate_cluster(cfg, w1, w2, median, rng, std::to_string(i + 1)));
  }
  return Dataset(std::move(clusters), 2);
}

double cached_median(double alpha) {
  static std::mutex mu;
  static std::map<double, double> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(alpha);
  if (it == cache.end()) it = cache.emplace(alpha, positive_stable_median(alpha)).first;
  return it->second;
}

}  // namespace

Dataset generate_dataset(const ScenarioConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  return generate_with_median(cfg, rng, cached_median(cfg.alpha));
}

Dataset generate_dataset(const ScenarioConfig& cfg, std::uint64_t rep) {
  auto rng = stream_rng(cfg.seed, rep);
  return generate_dataset(cfg, rng);
}

Eigen::VectorXd true_beta(const ScenarioConfig& cfg, int l) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(2);
  if (l == 1) b[0] = cfg.alpha * cfg.beta1;
  else b[1] = cfg.alpha * cfg.beta2;
  return b;
}

double true_cumhaz(const ScenarioConfig& cfg, int l, double t) {
  return std::pow(baseline_cumhaz(cfg, l, t), cfg.alpha);
}

double true_cif(const ScenarioConfig& cfg, int l, double t, const Eigen::VectorXd& z0) {
  if (t <= 0.0) return 0.0;
  const double s1 = std::exp(true_beta(cfg, 1).dot(z0));
  const double s2 = std::exp(true_beta(cfg, 2).dot(z0));
  const double sl = l == 1 ? s1 : s2;
  const double a = cfg.alpha;
  // u = v^2 removes the u^(alpha - 1) endpoint singularity of dLambda'
  const auto f = [&](double v) {
    const double u = v * v;
    const double L1 = baseline_cumhaz(cfg, 1, u);
    const double L2 = baseline_cumhaz(cfg, 2, u);
    const double Ll = l == 1 ? L1 : L2;
    if (!(Ll > 0.0)) return 0.0;
    const double dLl = a * std::pow(Ll, a - 1.0) * baseline_hazard(cfg, l, u) * sl;
    const double out = std::exp(-s1 * std::pow(L1, a) - s2 * std::pow(L2, a)) * dLl * 2.0 * v;
    return std::isfinite(out) ? out : 0.0;
  };
  boost::math::quadrature::tanh_sinh<double> integrator;
  return integrator.integrate(f, 0.0, std::sqrt(t));
}

const EstimandSummary& MonteCarloSummary::estimand(const std::string& name) const {
  for (const auto& e : estimands)
    if (e.name == name) return e;
  throw DomainError("unknown estimand " + name);
}

const BandSummary& MonteCarloSummary::band(const std::string& name) const {
  for (const auto& b : bands)
    if (b.name == name) return b;
  throw DomainError("unknown band " + name);
}

namespace {

std::string fmt_time(double t) {
  std::ostringstream os;
  os << t;
  return os.str();
}

std::size_t grid_at(const std::vector<double>& grid, double t, bool& ok) {
  const auto it = std::upper_bound(grid.begin(), grid.end(), t);
  ok = it != grid.begin();
  return ok ? static_cast<std::size_t>(it - grid.begin() - 1) : 0;
}

bool band_covers(const BandResult& band, const std::function<double(double)>& truth) {
  for (std::size_t i = 0; i < band.times.size(); ++i) {
    const double v = truth(band.times[i]);
    if (v < band.lower[i] || v > band.upper[i]) return false;
  }
  return true;
}

}  // namespace

ReplicationRecord run_replication(const ScenarioConfig& cfg, std::size_t rep, const MonteCarloOptions& options) {
  ReplicationRecord rec;
  rec.rep = rep;
  const Dataset data = generate_dataset(cfg, static_cast<std::uint64_t>(rep));
  const Frame frame(data);
  std::size_t failures = 0;
  std::size_t missing = 0;
  for (std::size_t s = 0; s < frame.n_subjects; ++s) {
    failures += static_cast<std::size_t>(frame.delta[s]);
    missing += static_cast<std::size_t>(frame.delta[s] == 1 && frame.r[s] == 0);
  }
  rec.missing_fraction = static_cast<double>(missing) / static_cast<double>(frame.n_subjects);
  (void)failures;

  try {
    const FitResult fr = fit(frame, options.design);
    if (!fr.converged()) {
      rec.message = "no convergence";
      return rec;
    }
    const InfluenceSet infl = influence(frame, fr);
    const double z = normal_critical(options.level);
    const std::size_t n = frame.n_clusters;
    const Eigen::VectorXd z0 = Eigen::VectorXd::Zero(frame.p);
    const auto F = cif(fr, z0);

    for (int l = 1; l <= 2; ++l) {
      const Eigen::VectorXd truth = true_beta(cfg, l);
      const Eigen::VectorXd se = infl.cause(l).standard_errors(n);
      for (int j = 0; j < frame.p; ++j) {
        EstimandRecord e;
        e.name = "beta" + std::to_string(l) + ".z" + std::to_string(j + 1);
        e.truth = truth[j];
        e.estimate = fr.cause(l).beta[j];
        e.se = se[j];
        e.covered = std::abs(e.estimate - e.truth) <= z * e.se;
        rec.estimands.push_back(e);
      }
    }
    for (int l = 1; l <= 2; ++l) {
      const Eigen::VectorXd lvar = lambda_variance(infl, l);
      const Eigen::VectorXd fvar = process_variance(cif_influence(fr, infl, z0, l));
      for (double t : options.times) {
        bool ok = false;
        const std::size_t k = grid_at(fr.grid, t, ok);
        {
          EstimandRecord e;
          e.name = "Lambda" + std::to_string(l) + "(" + fmt_time(t) + ")";
          e.truth = true_cumhaz(cfg, l, t);
          e.estimate = fr.cause(l).cumhaz(t);
          const double v = ok ? lvar[static_cast<Eigen::Index>(k)] : 0.0;
          e.se = std::sqrt(v / static_cast<double>(n));
          const Interval iv = pointwise_ci(e.estimate, v, n, Transform::Log, options.level);
          e.covered = !iv.degenerate && e.truth >= iv.lower && e.truth <= iv.upper;
          rec.estimands.push_back(e);
        }
        {
          EstimandRecord e;
          e.name = "F" + std::to_string(l) + "(" + fmt_time(t) + ")";
          e.truth = true_cif(cfg, l, t, z0);
          e.estimate = F[static_cast<std::size_t>(l - 1)](t);
          const double v = ok ? fvar[static_cast<Eigen::Index>(k)] : 0.0;
          e.se = std::sqrt(v / static_cast<double>(n));
          const Interval iv = pointwise_ci(e.estimate, v, n, Transform::CLogLog, options.level);
          e.covered = !iv.degenerate && e.truth >= iv.lower && e.truth <= iv.upper;
          rec.estimands.push_back(e);
        }
      }
    }

    if (options.bands) {
      const auto [t1, t2] = default_band_domain(frame);
      std::vector<BandOptions> bo(2);
      for (auto& o : bo) {
        o.level = options.level;
        o.nsim = options.nsim;
        o.t1 = t1;
        o.t2 = t2;
        o.seed = cfg.seed ^ (0x9e3779b97f4a7c15ULL * (rep + 1));
      }
      bo[1].weight = BandWeight::HallWellner;
      const auto& L = fr.cause(1).cumhaz.values();
      const Eigen::VectorXd lest = Eigen::Map<const Eigen::VectorXd>(L.data(), static_cast<Eigen::Index>(L.size()));
      const auto lb = multiplier_bands(fr.grid, lest, infl.cause(1).lambda_clusters, Transform::Log, bo);
      const auto& Fv = F[0].values();
      const Eigen::VectorXd fest = Eigen::Map<const Eigen::VectorXd>(Fv.data(), static_cast<Eigen::Index>(Fv.size()));
      const auto fb = multiplier_bands(fr.grid, fest, cif_influence(fr, infl, z0, 1), Transform::CLogLog, bo);
      const auto lt = [&](double t) { return true_cumhaz(cfg, 1, t); };
      const auto ft = [&](double t) { return true_cif(cfg, 1, t, z0); };
      rec.bands.emplace_back("Lambda1.EP", band_covers(lb[0], lt));
      rec.bands.emplace_back("Lambda1.HW", band_covers(lb[1], lt));
      rec.bands.emplace_back("F1.EP", band_covers(fb[0], ft));
      rec.bands.emplace_back("F1.HW", band_covers(fb[1], ft));
    }
    rec.ok = true;
  } catch (const Error& e) {
    rec.ok = false;
    rec.message = e.what();
    rec.estimands.clear();
    rec.bands.clear();
  }
  return rec;
}

MonteCarloSummary summarize(std::vector<ReplicationRecord> records) {
  MonteCarloSummary out;
  out.replications = records.size();
  std::vector<std::string> order;
  std::map<std::string, std::vector<const EstimandRecord*>> by_name;
  std::vector<std::string> band_order;
  std::map<std::string, std::pair<std::size_t, std::size_t>> band_hits;
  double miss = 0.0;
  for (const auto& r : records) {
    miss += r.missing_fraction;
    if (!r.ok) {
      ++out.failures;
      continue;
    }
    for (const auto& e : r.estimands) {
      auto& v = by_name[e.name];
      if (v.empty()) order.push_back(e.name);
      v.push_back(&e);
    }
    for (const auto& [name, hit] : r.bands) {
      auto [it, fresh] = band_hits.try_emplace(name, 0, 0);
      if (fresh) band_order.push_back(name);
      it->second.first += hit ? 1 : 0;
      ++it->second.second;
    }
  }
  if (!records.empty()) out.missing_fraction = miss / static_cast<double>(records.size());
  for (const auto& name : order) {
    const auto& v = by_name[name];
    EstimandSummary s;
    s.name = name;
    s.count = v.size();
    s.truth = v.front()->truth;
    // Welford for the mean and spread of the estimates
    double mean = 0.0, m2 = 0.0, se_sum = 0.0, se_c = 0.0;
    std::size_t hits = 0, i = 0;
    for (const auto* e : v) {
      ++i;
      const double d = e->estimate - mean;
      mean += d / static_cast<double>(i);
      m2 += d * (e->estimate - mean);
      const double y = e->se - se_c;
      const double t = se_sum + y;
      se_c = (t - se_sum) - y;
      se_sum = t;
      hits += e->covered ? 1 : 0;
    }
    s.bias = mean - s.truth;
    s.mcsd = v.size() > 1 ? std::sqrt(m2 / static_cast<double>(v.size() - 1)) : 0.0;
    s.ase = se_sum / static_cast<double>(v.size());
    s.cp = static_cast<double>(hits) / static_cast<double>(v.size());
    out.estimands.push_back(s);
  }
  for (const auto& name : band_order) {
    const auto [hits, count] = band_hits[name];
    out.bands.push_back({name, static_cast<double>(hits) / static_cast<double>(count), count});
  }
  out.records = std::move(records);
  return out;
}

MonteCarloSummary run_monte_carlo(const ScenarioConfig& cfg, std::size_t nreps, const MonteCarloOptions& options) {
  if (nreps < 2) throw DomainError("need at least 2 replications");
  cfg.validate();
  cached_median(cfg.alpha);
  std::vector<ReplicationRecord> records(nreps);
  parallel_for(nreps, options.threads, [&](std::size_t r) { records[r] = run_replication(cfg, r, options); });
  return summarize(std::move(records));
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<double> parse_list(const std::string& v, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    double x = 0.0;
    const auto r = std::from_chars(item.data(), item.data() + item.size(), x);
    if (r.ec != std::errc() || r.ptr != item.data() + item.size())
      throw DataError(DataError::Kind::MalformedRow, "bad number '" + item + "' for " + key);
    out.push_back(x);
  }
  return out;
}

double parse_one(const std::string& v, const std::string& key) {
  const auto xs = parse_list(v, key);
  if (xs.size() != 1) throw DataError(DataError::Kind::MalformedRow, key + " takes one value");
  return xs.front();
}

}  // namespace

ScenarioFile parse_scenario(std::istream& in) {
  ScenarioFile f;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError(DataError::Kind::MalformedRow, "line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    auto& c = f.config;
    auto& o = f.options;
    if (key == "scenario") {
      const ScenarioConfig base = scenario(static_cast<int>(parse_one(val, key)));
      c.cause2 = base.cause2;
    } else if (key == "n") {
      c.n = static_cast<std::size_t>(parse_one(val, key));
    } else if (key == "alpha") {
      c.alpha = parse_one(val, key);
    } else if (key == "beta1") {
      c.beta1 = parse_one(val, key);
    } else if (key == "beta2") {
      c.beta2 = parse_one(val, key);
    } else if (key == "theta") {
      const auto t = parse_list(val, key);
      if (t.size() != 4) throw DataError(DataError::Kind::MalformedRow, "theta takes four values");
      c.theta = Eigen::Vector4d(t[0], t[1], t[2], t[3]);
    } else if (key == "censor_rate") {
      c.censor_rate = parse_one(val, key);
    } else if (key == "horizon") {
      c.horizon = parse_one(val, key);
    } else if (key == "seed") {
      c.seed = static_cast<std::uint64_t>(parse_one(val, key));
    } else if (key == "times") {
      o.times = parse_list(val, key);
    } else if (key == "level") {
      o.level = parse_one(val, key);
    } else if (key == "bands") {
      if (val == "true" || val == "yes" || val == "1") o.bands = true;
      else if (val == "false" || val == "no" || val == "0") o.bands = false;
      else throw DataError(DataError::Kind::MalformedRow, "bad boolean '" + val + "' for bands");
    } else if (key == "nsim") {
      o.nsim = static_cast<int>(parse_one(val, key));
    } else if (key == "design") {
      if (val == "time") o.design.time = TimeTransform::Identity;
      else if (val == "logtime") o.design.time = TimeTransform::Log;
      else throw DataError(DataError::Kind::MalformedRow, "design must be time or logtime");
    } else {
      throw DataError(DataError::Kind::UnknownColumn, "unknown scenario key '" + key + "'");
    }
  }
  f.config.validate();
  return f;
}

ScenarioFile read_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::Io, "cannot open " + path);
  return parse_scenario(in);
}

namespace {

void put(std::ostream& out, double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  out.write(buf, r.ptr - buf);
}

}  // namespace

void write_summary_csv(const MonteCarloSummary& summary, std::ostream& out) {
  out << "# schema_version=1\n";
  out << "estimand,truth,bias,mcsd,ase,cp,count\n";
  for (const auto& e : summary.estimands) {
    out << e.name << ',';
    put(out, e.truth);
    out << ',';
    put(out, e.bias);
    out << ',';
    put(out, e.mcsd);
    out << ',';
    put(out, e.ase);
    out << ',';
    put(out, e.cp);
    out << ',' << e.count << '\n';
  }
  for (const auto& b : summary.bands) {
    out << "band." << b.name << ",NA,NA,NA,NA,";
    put(out, b.coverage);
    out << ',' << b.count << '\n';
  }
}

void write_replications_csv(const MonteCarloSummary& summary, std::ostream& out) {
  out << "# schema_version=1\n";
  out << "rep,status,estimand,truth,estimate,se,covered\n";
  for (const auto& r : summary.records) {
    if (!r.ok) {
      std::string msg = r.message;
      std::replace(msg.begin(), msg.end(), ',', ';');
      out << r.rep << ",failed," << msg << ",NA,NA,NA,NA\n";
      continue;
    }
    for (const auto& e : r.estimands) {
      out << r.rep << ",ok," << e.name << ',';
      put(out, e.truth);
      out << ',';
      put(out, e.estimate);
      out << ',';
      put(out, e.se);
      out << ',' << (e.covered ? 1 : 0) << '\n';
    }
    for (const auto& [name, hit] : r.bands) out << r.rep << ",ok,band." << name << ",NA,NA,NA," << (hit ? 1 : 0) << '\n';
  }
}

}  // namespace clustcr
