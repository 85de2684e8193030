#pragma once

#include "clustcr/data.hpp"
#include "clustcr/missingness.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace clustcr {

enum class Cause2Baseline {
  Gompertz,  // exp(-0.5 + 0.2 t)
  Weibull,   // 1 / (2 sqrt(2 t))
};

struct ScenarioConfig {
  std::size_t n = 50;
  double alpha = 0.5;
  Cause2Baseline cause2 = Cause2Baseline::Gompertz;
  double beta1 = -0.5;  // conditional coefficient of Z1 on cause 1
  double beta2 = -0.5;  // conditional coefficient of Z2 on cause 2
  Eigen::Vector4d theta{0.7, 1.0, -1.0, 1.0};
  double censor_rate = 0.4;
  double horizon = 0.0;  // administrative censoring time; <= 0 means none
  int size_small_lo = 20, size_small_hi = 30;
  int size_mid_lo = 30, size_mid_hi = 50;
  int size_large_lo = 50, size_large_hi = 60;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Scenario 1 (Gompertz cause 2) or 2 (Weibull cause 2) with defaults.
ScenarioConfig scenario(int number);

double sample_positive_stable(double alpha, std::mt19937_64& rng);
/// P(W <= x) for the positive stable law with Laplace transform exp(-s^alpha).
double positive_stable_cdf(double alpha, double x);
double positive_stable_median(double alpha);

double baseline_hazard(const ScenarioConfig& cfg, int l, double t);
double baseline_cumhaz(const ScenarioConfig& cfg, int l, double t);

Cluster generate_cluster(const ScenarioConfig& cfg, double w1, double w2, double median, std::mt19937_64& rng,
                         const std::string& id);
Dataset generate_dataset(const ScenarioConfig& cfg, std::mt19937_64& rng);
/// Dataset for replication `rep`, drawn from stream (cfg.seed, rep).
Dataset generate_dataset(const ScenarioConfig& cfg, std::uint64_t rep = 0);

/// Marginal truths implied by the positive stable frailty.
Eigen::VectorXd true_beta(const ScenarioConfig& cfg, int l);
double true_cumhaz(const ScenarioConfig& cfg, int l, double t);
double true_cif(const ScenarioConfig& cfg, int l, double t, const Eigen::VectorXd& z0);

struct MonteCarloOptions {
  DesignSpec design;  // default: identity time, Z1, Z2
  std::vector<double> times{0.1, 0.2, 0.4, 0.8};
  double level = 0.95;
  bool bands = false;
  int nsim = 1000;
  unsigned threads = 1;
};

struct EstimandRecord {
  std::string name;
  double truth = 0.0;
  double estimate = 0.0;
  double se = 0.0;
  bool covered = false;
};

struct ReplicationRecord {
  std::size_t rep = 0;
  bool ok = false;
  std::string message;
  std::vector<EstimandRecord> estimands;
  std::vector<std::pair<std::string, bool>> bands;
  double missing_fraction = 0.0;
};

struct EstimandSummary {
  std::string name;
  double truth = 0.0;
  double bias = 0.0;
  double mcsd = 0.0;
  double ase = 0.0;
  double cp = 0.0;
  std::size_t count = 0;
};

struct BandSummary {
  std::string name;
  double coverage = 0.0;
  std::size_t count = 0;
};

struct MonteCarloSummary {
  std::size_t replications = 0;
  std::size_t failures = 0;
  double missing_fraction = 0.0;
  std::vector<EstimandSummary> estimands;
  std::vector<BandSummary> bands;
  std::vector<ReplicationRecord> records;

  const EstimandSummary& estimand(const std::string& name) const;
  const BandSummary& band(const std::string& name) const;
};

ReplicationRecord run_replication(const ScenarioConfig& cfg, std::size_t rep, const MonteCarloOptions& options);
MonteCarloSummary summarize(std::vector<ReplicationRecord> records);
MonteCarloSummary run_monte_carlo(const ScenarioConfig& cfg, std::size_t nreps, const MonteCarloOptions& options);

/// key = value lines, '#' starts a comment. Keys: scenario, n, alpha, beta1,
/// beta2, theta, censor_rate, horizon, seed, times, level, bands, nsim,
/// design.
struct ScenarioFile {
  ScenarioConfig config;
  MonteCarloOptions options;
};
ScenarioFile read_scenario_file(const std::string& path);
ScenarioFile parse_scenario(std::istream& in);

void write_summary_csv(const MonteCarloSummary& summary, std::ostream& out);
void write_replications_csv(const MonteCarloSummary& summary, std::ostream& out);

}  // namespace clustcr
