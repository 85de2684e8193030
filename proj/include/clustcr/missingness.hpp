#pragma once

#include "clustcr/data.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace clustcr {

enum class TimeTransform {
  Identity,      // h(x) = x
  Log,           // h(x) = log x
  LinearSpline,  // h(x) = (x, (x - k1)+, ..., (x - km)+)
};

/// Maps a subject's (x, z, a) onto the design row (1, h(x), z, a) of the
/// cause-probability model. The intercept is always present.
struct DesignSpec {
  TimeTransform time = TimeTransform::Identity;
  std::vector<double> knots;  // LinearSpline only
  bool include_z = true;
  bool include_a = true;

  int dimension(int p, int q) const;
  Eigen::VectorXd row(double x, const Eigen::VectorXd& z, const Eigen::VectorXd& a) const;
};

/// Design rows for every frame row (n_subjects x dimension).
Eigen::MatrixXd design_matrix(const Frame& frame, const DesignSpec& spec);

struct MissingnessOptions {
  int max_iterations = 100;
  int max_halvings = 20;
  double tolerance = 1e-10;
};

/// Multinomial-logit model for P(cause = l | failure, W) fitted on complete
/// cases. Cause k is the reference category; for k = 2 this is the binary
/// logistic model for cause 1.
///
/// gamma is stored as a p_gamma x (k-1) matrix whose column m holds the
/// coefficients of the log-odds of cause m+1 versus cause k. Flattened
/// vectors (gradients, influence functions) stack the columns.
struct MissingnessModel {
  DesignSpec spec;
  int k = 2;
  int p = 0;
  int q = 0;
  Eigen::MatrixXd gamma;
  Eigen::MatrixXd info;  // (1/n) * minus the Jacobian of the estimating function at gamma
  int iterations = 0;
  double equation_norm = 0.0;
  bool converged = false;
  bool separation = false;
  bool fitted = true;  // false when no cause is missing and stage one was skipped
  std::vector<std::string> warnings;

  int dim() const { return static_cast<int>(gamma.rows()); }
  int n_params() const { return static_cast<int>(gamma.size()); }

  Eigen::VectorXd gamma_vector() const;
  void set_gamma(const Eigen::VectorXd& flat);

  /// Cause probabilities (length k) for a design row.
  Eigen::VectorXd probabilities(const Eigen::VectorXd& design) const;
  /// d pi_l / d gamma (flattened) for a design row; l in 1..k.
  Eigen::VectorXd gradient(const Eigen::VectorXd& design, int l) const;
};

/// Solves sum_i M_i^-1 sum_j I(R=1, Delta=1) u_ij(gamma) = 0 by Newton's
/// method with step halving. Throws SingularMatrix for a rank-deficient
/// complete-case design and NoConvergence when the iteration cap is hit
/// without separation; under separation the last iterate is returned with
/// `separation` set.
MissingnessModel fit_missingness(const Frame& frame, const DesignSpec& spec,
                                 const MissingnessOptions& options = {});
MissingnessModel fit_missingness(const Dataset& data, const DesignSpec& spec,
                                 const MissingnessOptions& options = {});

/// Placeholder used when every failure has an observed cause: gamma = 0,
/// converged, not fitted. Its omega_hat is identically zero.
MissingnessModel unfitted_model(const Frame& frame, const DesignSpec& spec);

/// (1/n) times the cluster-weighted complete-case score at `gamma_flat`.
Eigen::VectorXd missingness_equation(const Frame& frame, const MissingnessModel& model,
                                     const Eigen::VectorXd& gamma_flat);

double predict_pi(const MissingnessModel& m, const Subject& s, int l);
Eigen::VectorXd pi_gradient(const MissingnessModel& m, const Subject& s, int l);

/// pi_l for every frame row.
Eigen::VectorXd predict_pi(const MissingnessModel& m, const Frame& frame, int l);

/// Influence functions omega_ij = A^-1 I(R=1, Delta=1) u_ij(gamma_hat), one
/// row per frame row.
Eigen::MatrixXd omega_hat(const MissingnessModel& m, const Frame& frame);

}  // namespace clustcr
