#pragma once

#include "clustcr/data.hpp"
#include "clustcr/missingness.hpp"

#include <Eigen/Core>

#include <vector>

namespace clustcr {

/// Filled-in counting process for cause l at time t:
/// {R Delta_l + (1 - R) pi_l(W)} N(t).
double ntilde(const Subject& s, const MissingnessModel& m, int l, double t);

/// Jump size of the filled-in counting process of every frame row for cause
/// l (zero for censored rows).
Eigen::VectorXd jump_weights(const Frame& frame, const MissingnessModel& m, int l);

/// Cluster-weighted risk-set sums at time t:
/// S0 = sum_i M_i^-1 sum_j Y_ij(t) exp(beta'Z_ij), S1 with Z, S2 with ZZ'.
struct RiskAggregates {
  double s0 = 0.0;
  Eigen::VectorXd s1;
  Eigen::MatrixXd s2;

  Eigen::VectorXd mean() const { return s1 / s0; }
  Eigen::MatrixXd variance() const;
};

RiskAggregates risk_aggregates(const Frame& frame, const Eigen::VectorXd& beta, double t);

/// Risk-set sums at every grid time, built by one reverse sweep.
struct RiskSweep {
  std::vector<double> s0;              // per grid time
  Eigen::MatrixXd s1;                  // grid x p
  std::vector<Eigen::MatrixXd> s2;     // per grid time (only when requested)
  Eigen::VectorXd risk_score;          // exp(beta'Z) per frame row
};

RiskSweep risk_sweep(const Frame& frame, const Eigen::VectorXd& beta, bool second_moment);

/// Cause-l term of the expected log partial pseudolikelihood Q_n (no 1/n).
double log_pseudolikelihood(const Frame& frame, const Eigen::VectorXd& beta, const Eigen::VectorXd& jumps);

/// Partial pseudoscore G_{n,l}(beta) = (1/n) grad Q_n.
Eigen::VectorXd pseudoscore(const Frame& frame, const Eigen::VectorXd& beta, const Eigen::VectorXd& jumps);
Eigen::VectorXd pseudoscore(const Frame& frame, const Eigen::VectorXd& beta, const MissingnessModel& m, int l);

/// H_{n,l}(beta) = -dG/dbeta.
Eigen::MatrixXd pseudo_hessian(const Frame& frame, const Eigen::VectorXd& beta, const Eigen::VectorXd& jumps);
Eigen::MatrixXd pseudo_hessian(const Frame& frame, const Eigen::VectorXd& beta, const MissingnessModel& m, int l);

struct SolverOptions {
  int max_iterations = 100;
  int max_halvings = 20;
  double tolerance = 1e-10;
  // |beta_j| * sd(Z_j) beyond this marks a diverging (monotone) pseudolikelihood
  double divergence = 20.0;
  // model-based SE of beta_j * sd(Z_j) beyond this marks a flat direction
  double flat_se = 100.0;
};

struct BetaSolution {
  Eigen::VectorXd beta;
  Eigen::MatrixXd hessian;  // H at beta
  int iterations = 0;
  double score_norm = 0.0;
  bool converged = false;
  bool diverging = false;
};

/// Newton iterations beta <- beta + H^-1 G with step halving on Q_n.
/// Throws SingularMatrix when H cannot be inverted. Returns the last iterate
/// with converged = false when the iteration cap is reached or a coefficient
/// diverges.
BetaSolution solve_beta(const Frame& frame, const Eigen::VectorXd& jumps, const Eigen::VectorXd& init,
                        const SolverOptions& options = {});

/// Breslow-type cumulative baseline hazard on the frame's failure-time grid.
StepFunction breslow(const Frame& frame, const Eigen::VectorXd& beta, const Eigen::VectorXd& jumps);

struct CauseFit {
  int cause = 1;
  Eigen::VectorXd beta;
  StepFunction cumhaz;
  Eigen::MatrixXd hessian;
  Eigen::VectorXd jumps;
  int iterations = 0;
  double score_norm = 0.0;
  bool converged = false;
  bool diverging = false;
};

struct FitResult {
  MissingnessModel missingness;
  std::vector<CauseFit> causes;  // index l-1
  std::vector<double> grid;
  std::size_t n_clusters = 0;

  bool converged() const;
  const CauseFit& cause(int l) const { return causes.at(static_cast<std::size_t>(l - 1)); }
};

struct FitOptions {
  MissingnessOptions missingness;
  SolverOptions solver;
};

/// Full two-stage fit: cause-probability model, then beta and the baseline
/// cumulative hazard for every cause. Errors are tagged with their stage.
FitResult fit(const Frame& frame, const DesignSpec& spec, const FitOptions& options = {});
FitResult fit(const Dataset& data, const DesignSpec& spec, const FitOptions& options = {});

/// Second stage only, given a fitted cause-probability model.
FitResult fit_given_model(const Frame& frame, const MissingnessModel& model, const FitOptions& options = {});

/// Covariate-specific cumulative hazards Lambda_l(t; z0) on the common grid
/// (grid x k).
Eigen::MatrixXd covariate_cumhaz(const FitResult& fit, const Eigen::VectorXd& z0);

/// Cumulative incidence functions F_l(t; z0) for l = 1..k.
std::vector<StepFunction> cif(const FitResult& fit, const Eigen::VectorXd& z0);

}  // namespace clustcr
