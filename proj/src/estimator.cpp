#include "clustcr/estimator.hpp"

#include "clustcr/errors.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace clustcr {

double ntilde(const Subject& s, const MissingnessModel& m, int l, double t) {
  if (s.delta != 1 || s.x > t) return 0.0;
  if (s.r == 1) return s.cause == l ? 1.0 : 0.0;
  return predict_pi(m, s, l);
}

Eigen::VectorXd jump_weights(const Frame& frame, const MissingnessModel& m, int l) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(frame.n_subjects));
  bool any_missing = false;
  for (std::size_t s = 0; s < frame.n_subjects; ++s) {
    if (frame.delta[s] != 1) continue;
    if (frame.r[s] == 1) out[static_cast<Eigen::Index>(s)] = frame.cause[s] == l ? 1.0 : 0.0;
    else any_missing = true;
  }
  if (any_missing) {
    const Eigen::VectorXd pi = predict_pi(m, frame, l);
    for (std::size_t s = 0; s < frame.n_subjects; ++s)
      if (frame.delta[s] == 1 && frame.r[s] == 0) out[static_cast<Eigen::Index>(s)] = pi[static_cast<Eigen::Index>(s)];
  }
  return out;
}

Eigen::MatrixXd RiskAggregates::variance() const {
  const Eigen::VectorXd e = mean();
  return s2 / s0 - e * e.transpose();
}

RiskAggregates risk_aggregates(const Frame& frame, const Eigen::VectorXd& beta, double t) {
  RiskAggregates out;
  out.s1 = Eigen::VectorXd::Zero(frame.p);
  out.s2 = Eigen::MatrixXd::Zero(frame.p, frame.p);
  for (std::size_t s = 0; s < frame.n_subjects; ++s) {
    if (frame.time[s] < t) continue;
    const Eigen::VectorXd zs = frame.z.row(static_cast<Eigen::Index>(s)).transpose();
    const double w = frame.weight[s] * std::exp(beta.dot(zs));
    out.s0 += w;
    out.s1 += w * zs;
    out.s2 += w * zs * zs.transpose();
  }
  if (!(out.s0 > 0.0)) throw EmptyRiskSet("nobody at risk at t = " + std::to_string(t));
  return out;
}

RiskSweep risk_sweep(const Frame& frame, const Eigen::VectorXd& beta, bool second_moment) {
  const std::size_t K = frame.grid_size();
  const int p = frame.p;
  RiskSweep out;
  out.s0.assign(K, 0.0);
  out.s1 = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), p);
  if (second_moment) out.s2.assign(K, Eigen::MatrixXd::Zero(p, p));
  out.risk_score = (frame.z * beta).array().exp();

  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
  std::ptrdiff_t row = static_cast<std::ptrdiff_t>(frame.n_subjects) - 1;
  for (std::ptrdiff_t k = static_cast<std::ptrdiff_t>(K) - 1; k >= 0; --k) {
    const double t = frame.grid[static_cast<std::size_t>(k)];
    for (; row >= 0 && frame.time[static_cast<std::size_t>(row)] >= t; --row) {
      const double w = frame.weight[static_cast<std::size_t>(row)] * out.risk_score[row];
      s0 += w;
      s1.noalias() += w * frame.z.row(row).transpose();
      if (second_moment) s2.noalias() += w * frame.z.row(row).transpose() * frame.z.row(row);
    }
    out.s0[static_cast<std::size_t>(k)] = s0;
    out.s1.row(k) = s1.transpose();
    if (second_moment) out.s2[static_cast<std::size_t>(k)] = s2;
  }
  return out;
}

namespace {

void check_risk(const RiskSweep& sweep, std::size_t k) {
  if (!(sweep.s0[k] > 0.0)) throw EmptyRiskSet("empty risk set at a failure time");
}

}  // namespace

double log_pseudolikelihood(const Frame& frame, const Eigen::VectorXd& beta, const Eigen::VectorXd& jumps) {
  const RiskSweep sweep = risk_sweep(frame, beta, false);
  double q = 0.0;
  for (std::size_t s = 0; s < frame.n_subjects; ++s) {
    const double d = jumps[static_cast<Eigen::Index>(s)];
    if (d == 0.0) continue;
    const auto k = static_cast<std::size_t>(frame.slot[s]);
    check_risk(sweep, k);
    q += frame.weight[s] * d * (frame.z.row(static_cast<Eigen::Index>(s)).dot(beta) - std::log(sweep.s0[k]));
  }
  return q;
}

namespace {

struct ScoreAndHessian {
  Eigen::VectorXd score;
  Eigen::MatrixXd hessian;
};

ScoreAndHessian score_parts(const Frame& frame, const RiskSweep& sweep, const Eigen::VectorXd& jumps,
                            bool with_hessian) {
  const int p = frame.p;
  const double inv_n = 1.0 / static_cast<double>(frame.n_clusters);
  ScoreAndHessian out{Eigen::VectorXd::Zero(p), Eigen::MatrixXd::Zero(p, p)};
  // aggregate the filled-in jump mass per grid time first
  std::vector<double> mass(frame.grid_size(), 0.0);
  for (std::size_t s = 0; s < frame.n_subjects; ++s) {
    const double d = jumps[static_cast<Eigen::Index>(s)];
    if (d == 0.0) continue;
    const double w = frame.weight[s] * d;
    out.score.noalias() += w * frame.z.row(static_cast<Eigen::Index>(s)).transpose();
    mass[static_cast<std::size_t>(frame.slot[s])] += w;
  }
  for (std::size_t k = 0; k < mass.size(); ++k) {
    if (mass[k] == 0.0) continue;
    check_risk(sweep, k);
    const Eigen::VectorXd e = sweep.s1.row(static_cast<Eigen::Index>(k)).transpose() / sweep.s0[k];
    out.score.noalias() -= mass[k] * e;
    if (with_hessian) out.hessian.noalias() += mass[k] * (sweep.s2[k] / sweep.s0[k] - e * e.transpose());
  }
  out.score *= inv_n;
  out.hessian *= inv_n;
  return out;
}

}  // namespace

Eigen::VectorXd pseudoscore(const Frame& frame, const Eigen::VectorXd& beta, const Eigen::VectorXd& jumps) {
  return score_parts(frame, risk_sweep(frame, beta, false), jumps, false).score;
}

Eigen::VectorXd pseudoscore(const Frame& frame, const Eigen::VectorXd& beta, const MissingnessModel& m, int l) {
  return pseudoscore(frame, beta, jump_weights(frame, m, l));
}

Eigen::MatrixXd pseudo_hessian(const Frame& frame, const Eigen::VectorXd& beta, const Eigen::VectorXd& jumps) {
  return score_parts(frame, risk_sweep(frame, beta, true), jumps, true).hessian;
}

Eigen::MatrixXd pseudo_hessian(const Frame& frame, const Eigen::VectorXd& beta, const MissingnessModel& m, int l) {
  return pseudo_hessian(frame, beta, jump_weights(frame, m, l));
}

BetaSolution solve_beta(const Frame& frame, const Eigen::VectorXd& jumps, const Eigen::VectorXd& init,
                        const SolverOptions& options) {
  BetaSolution sol;
  sol.beta = init;
  RiskSweep sweep = risk_sweep(frame, sol.beta, true);
  ScoreAndHessian parts = score_parts(frame, sweep, jumps, true);
  double objective = log_pseudolikelihood(frame, sol.beta, jumps);

  for (sol.iterations = 0;; ++sol.iterations) {
    sol.score_norm = parts.score.cwiseAbs().maxCoeff();
    sol.hessian = parts.hessian;
    if (sol.score_norm < options.tolerance) {
      sol.converged = true;
      break;
    }
    if (sol.iterations >= options.max_iterations) break;

    Eigen::LDLT<Eigen::MatrixXd> ldlt(parts.hessian);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-12) || !ldlt.isPositive())
      throw SingularMatrix("pseudo-Hessian is singular or indefinite");
    const Eigen::VectorXd step = ldlt.solve(parts.score);

    double scale = 1.0;
    bool accepted = false;
    for (int h = 0; h <= options.max_halvings; ++h, scale *= 0.5) {
      const Eigen::VectorXd trial = sol.beta + scale * step;
      const double value = log_pseudolikelihood(frame, trial, jumps);
      if (std::isfinite(value) && value >= objective - 1e-12 * std::abs(objective)) {
        sol.beta = trial;
        objective = value;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    sweep = risk_sweep(frame, sol.beta, true);
    parts = score_parts(frame, sweep, jumps, true);
  }
  // a zero score at a flat direction is not a solution
  Eigen::LDLT<Eigen::MatrixXd> final_ldlt(sol.hessian);
  if (final_ldlt.info() != Eigen::Success || !(final_ldlt.rcond() > 1e-12) || !final_ldlt.isPositive())
    throw SingularMatrix("pseudo-Hessian is singular or indefinite");
  // an estimate running off to infinity has a huge coefficient or a flat
  // pseudolikelihood, measured in SD units of the covariate
  const Eigen::VectorXd naive_var = final_ldlt.solve(Eigen::MatrixXd::Identity(sol.beta.size(), sol.beta.size())).diagonal() /
                                    static_cast<double>(frame.n_clusters);
  for (Eigen::Index j = 0; j < sol.beta.size(); ++j) {
    const auto col = frame.z.col(j).array();
    const double sd = std::sqrt((col - col.mean()).square().mean());
    if (std::abs(sol.beta[j]) * sd > options.divergence || std::sqrt(naive_var[j]) * sd > options.flat_se)
      sol.diverging = true;
  }
  if (sol.diverging) sol.converged = false;
  return sol;
}

StepFunction breslow(const Frame& frame, const Eigen::VectorXd& beta, const Eigen::VectorXd& jumps) {
  const RiskSweep sweep = risk_sweep(frame, beta, false);
  std::vector<double> mass(frame.grid_size(), 0.0);
  for (std::size_t s = 0; s < frame.n_subjects; ++s) {
    const double d = jumps[static_cast<Eigen::Index>(s)];
    if (d != 0.0) mass[static_cast<std::size_t>(frame.slot[s])] += frame.weight[s] * d;
  }
  std::vector<double> values(frame.grid_size());
  double cum = 0.0;
  for (std::size_t k = 0; k < mass.size(); ++k) {
    if (mass[k] != 0.0) {
      check_risk(sweep, k);
      cum += mass[k] / sweep.s0[k];
    }
    values[k] = cum;
  }
  return StepFunction(frame.grid, std::move(values), 0.0);
}

bool FitResult::converged() const {
  if (!missingness.converged) return false;
  for (const auto& c : causes)
    if (!c.converged) return false;
  return true;
}

FitResult fit_given_model(const Frame& frame, const MissingnessModel& model, const FitOptions& options) {
  FitResult out;
  out.missingness = model;
  out.grid = frame.grid;
  out.n_clusters = frame.n_clusters;
  for (int l = 1; l <= frame.k; ++l) {
    try {
      CauseFit cf;
      cf.cause = l;
      cf.jumps = jump_weights(frame, model, l);
      BetaSolution sol = solve_beta(frame, cf.jumps, Eigen::VectorXd::Zero(frame.p), options.solver);
      cf.beta = sol.beta;
      cf.hessian = sol.hessian;
      cf.iterations = sol.iterations;
      cf.score_norm = sol.score_norm;
      cf.converged = sol.converged;
      cf.diverging = sol.diverging;
      cf.cumhaz = breslow(frame, cf.beta, cf.jumps);
      out.causes.push_back(std::move(cf));
    } catch (Error& e) {
      e.add_context("cause " + std::to_string(l));
      throw;
    }
  }
  return out;
}

FitResult fit(const Frame& frame, const DesignSpec& spec, const FitOptions& options) {
  for (int l = 1; l <= frame.k; ++l) {
    bool seen = false;
    for (std::size_t s = 0; s < frame.n_subjects && !seen; ++s)
      seen = frame.delta[s] == 1 && frame.r[s] == 1 && frame.cause[s] == l;
    if (!seen)
      throw DataError(DataError::Kind::InvariantViolation,
                      "no observed failure from cause " + std::to_string(l) + "; cannot fit");
  }
  bool any_missing = false;
  for (std::size_t s = 0; s < frame.n_subjects && !any_missing; ++s) any_missing = frame.delta[s] == 1 && frame.r[s] == 0;
  if (!any_missing) return fit_given_model(frame, unfitted_model(frame, spec), options);
  MissingnessModel model;
  try {
    model = fit_missingness(frame, spec, options.missingness);
  } catch (Error& e) {
    e.add_context("cause-probability model");
    throw;
  }
  return fit_given_model(frame, model, options);
}

FitResult fit(const Dataset& data, const DesignSpec& spec, const FitOptions& options) {
  return fit(Frame(data), spec, options);
}

Eigen::MatrixXd covariate_cumhaz(const FitResult& fit, const Eigen::VectorXd& z0) {
  const auto K = static_cast<Eigen::Index>(fit.grid.size());
  const auto k = static_cast<Eigen::Index>(fit.causes.size());
  Eigen::MatrixXd out(K, k);
  for (Eigen::Index l = 0; l < k; ++l) {
    const auto& cf = fit.causes[static_cast<std::size_t>(l)];
    if (z0.size() != cf.beta.size()) throw DomainError("z0 has the wrong dimension");
    const double scale = std::exp(cf.beta.dot(z0));
    for (Eigen::Index g = 0; g < K; ++g) out(g, l) = cf.cumhaz.values()[static_cast<std::size_t>(g)] * scale;
  }
  return out;
}

std::vector<StepFunction> cif(const FitResult& fit, const Eigen::VectorXd& z0) {
  const Eigen::MatrixXd cum = covariate_cumhaz(fit, z0);
  const auto K = cum.rows();
  const auto k = cum.cols();
  std::vector<std::vector<double>> values(static_cast<std::size_t>(k), std::vector<double>(static_cast<std::size_t>(K)));
  std::vector<double> running(static_cast<std::size_t>(k), 0.0);
  double total_prev = 0.0;
  for (Eigen::Index g = 0; g < K; ++g) {
    const double surv_left = std::exp(-total_prev);
    for (Eigen::Index l = 0; l < k; ++l) {
      const double prev = g > 0 ? cum(g - 1, l) : 0.0;
      running[static_cast<std::size_t>(l)] += surv_left * (cum(g, l) - prev);
      values[static_cast<std::size_t>(l)][static_cast<std::size_t>(g)] = running[static_cast<std::size_t>(l)];
    }
    total_prev = cum.row(g).sum();
  }
  std::vector<StepFunction> out;
  for (auto& v : values) out.emplace_back(fit.grid, std::move(v), 0.0);
  return out;
}

}  // namespace clustcr
