#pragma once

#include "clustcr/data.hpp"
#include "clustcr/estimator.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace clustcr {

/// Empirical influence functions for one cause.
///
/// Per-subject terms are stored only where they are cheap (psi). The
/// functional influence terms are kept aggregated per cluster,
/// M_i^-1 sum_j (.), which is all the covariance estimators and the
/// multiplier bootstrap need.
struct CauseInfluence {
  int cause = 1;
  Eigen::MatrixXd hessian_inv;      // H_{n,l}^-1
  Eigen::MatrixXd psi;              // subjects x p (frame order)
  Eigen::MatrixXd R;                // p x p_gamma
  Eigen::MatrixXd Rstar;            // grid x p_gamma, row g = R*_l(t_g)
  Eigen::MatrixXd beta_clusters;    // clusters x p: M_i^-1 sum_j (psi + R omega)
  Eigen::MatrixXd lambda_clusters;  // clusters x grid: M_i^-1 sum_j (phi + R* omega)
  Eigen::MatrixXd sigma;            // Sigma_l
  // grid-level pieces reused by CIF influence and per-subject phi
  std::vector<double> s0;           // (1/n) S0 at grid times
  Eigen::MatrixXd mean_cum;         // grid x p, int_0^t E_n dLambda
  Eigen::VectorXd risk_score;       // exp(beta'Z) per frame row

  /// Standard errors sqrt(diag(Sigma) / n).
  Eigen::VectorXd standard_errors(std::size_t n_clusters) const;
};

struct InfluenceSet {
  std::vector<double> grid;
  std::size_t n_clusters = 0;
  Eigen::MatrixXd omega;           // subjects x p_gamma (frame order)
  Eigen::MatrixXd omega_clusters;  // clusters x p_gamma: M_i^-1 sum_j omega_ij
  std::vector<CauseInfluence> causes;

  const CauseInfluence& cause(int l) const { return causes.at(static_cast<std::size_t>(l - 1)); }
};

/// Builds every influence term for all causes of a converged fit.
InfluenceSet influence(const Frame& frame, const FitResult& fit);

/// Plug-in martingales M_ijl(t) on the grid (subjects x grid, frame order).
/// Dense: intended for diagnostics and tests on small data.
Eigen::MatrixXd martingale_tilde(const Frame& frame, const FitResult& fit, int l);

/// phi_ijl(t) on the grid for one frame row (without the R* omega term).
Eigen::VectorXd subject_phi(const Frame& frame, const FitResult& fit, const InfluenceSet& infl, int l,
                            std::size_t row);

/// Sigma_l = (1/n) sum_i {M_i^-1 sum_j (psi + R omega)}^{x2}.
Eigen::MatrixXd beta_cov(const InfluenceSet& infl, int l);

/// Covariance function of sqrt(n)(Lambda_hat - Lambda) at (t, s).
double lambda_cov(const InfluenceSet& infl, int l, double t, double s);
/// Variance function of sqrt(n)(Lambda_hat - Lambda) on the grid.
Eigen::VectorXd lambda_variance(const InfluenceSet& infl, int l);

/// Cluster-aggregated phi^F_l(t; z0) on the grid (clusters x grid).
Eigen::MatrixXd cif_influence(const FitResult& fit, const InfluenceSet& infl, const Eigen::VectorXd& z0, int l);
/// Cluster-aggregated phi^Lambda_l(t; z0) (clusters x grid).
Eigen::MatrixXd cumhaz_influence(const FitResult& fit, const InfluenceSet& infl, const Eigen::VectorXd& z0, int l);

double cif_cov(const Eigen::MatrixXd& cif_clusters, const std::vector<double>& grid, double t, double s);
/// Column-wise (1/n) sum_i X_i(t)^2 for cluster-aggregated influence processes.
Eigen::VectorXd process_variance(const Eigen::MatrixXd& clusters);

enum class Transform { Identity, Log, CLogLog };
enum class BandWeight { EqualPrecision, HallWellner };

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  bool degenerate = false;  // estimate on the boundary of the transform domain
};

/// g^-1[g(est) +- z |g'(est)| sqrt(var / n)], var being the variance of the
/// sqrt(n)-scaled estimator.
Interval pointwise_ci(double estimate, double variance, std::size_t n, Transform transform, double level);

struct BandResult {
  std::vector<double> times;
  std::vector<double> estimate;
  std::vector<double> lower;
  std::vector<double> upper;
  Transform transform = Transform::Log;
  BandWeight weight = BandWeight::EqualPrecision;
  double c_alpha = 0.0;
  double level = 0.95;
  double t1 = 0.0;
  double t2 = 0.0;
  std::vector<std::string> warnings;
};

struct BandOptions {
  BandWeight weight = BandWeight::EqualPrecision;
  double level = 0.95;
  int nsim = 1000;
  double t1 = -1.0;  // negative: 10th percentile of observed failure times
  double t2 = -1.0;  // negative: 90th percentile of observed failure times
  std::uint64_t seed = 1;
};

/// Default band domain: 10th and 90th percentiles of the failure times.
std::pair<double, double> default_band_domain(const Frame& frame);

/// Multiplier bands for a generic estimate with cluster-aggregated
/// influence processes. Multipliers for draw b come from stream (seed, b), so
/// several targets sharing a seed share their multipliers.
BandResult multiplier_band(const std::vector<double>& grid, const Eigen::VectorXd& estimate,
                           const Eigen::MatrixXd& clusters, Transform transform, const BandOptions& options);

/// Several bands at once (e.g. EP and HW) sharing one set of multiplier draws.
std::vector<BandResult> multiplier_bands(const std::vector<double>& grid, const Eigen::VectorXd& estimate,
                                         const Eigen::MatrixXd& clusters, Transform transform,
                                         const std::vector<BandOptions>& options);

enum class BandTarget { CumulativeHazard, CumulativeIncidence };

/// Simultaneous band for Lambda_{0,l} (log transform) or F_l(.; z0)
/// (log-minus-log transform).
BandResult simultaneous_band(const Frame& frame, const FitResult& fit, const InfluenceSet& infl, BandTarget target,
                             int l, const Eigen::VectorXd& z0, BandOptions options);

}  // namespace clustcr
