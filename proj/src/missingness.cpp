#include "clustcr/missingness.hpp"

#include "clustcr/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace clustcr {

int DesignSpec::dimension(int p, int q) const {
  int d = 1;
  if (time == TimeTransform::LinearSpline) d += 1 + static_cast<int>(knots.size());
  else d += 1;
  if (include_z) d += p;
  if (include_a) d += q;
  return d;
}

Eigen::VectorXd DesignSpec::row(double x, const Eigen::VectorXd& z, const Eigen::VectorXd& a) const {
  Eigen::VectorXd out(dimension(static_cast<int>(z.size()), static_cast<int>(a.size())));
  Eigen::Index i = 0;
  out[i++] = 1.0;
  switch (time) {
    case TimeTransform::Identity:
      out[i++] = x;
      break;
    case TimeTransform::Log:
      if (!(x > 0.0)) throw DomainError("log-time design requires positive failure times");
      out[i++] = std::log(x);
      break;
    case TimeTransform::LinearSpline:
      out[i++] = x;
      for (double knot : knots) out[i++] = std::max(0.0, x - knot);
      break;
  }
  if (include_z)
    for (Eigen::Index j = 0; j < z.size(); ++j) out[i++] = z[j];
  if (include_a)
    for (Eigen::Index j = 0; j < a.size(); ++j) out[i++] = a[j];
  return out;
}

Eigen::MatrixXd design_matrix(const Frame& frame, const DesignSpec& spec) {
  const auto n = static_cast<Eigen::Index>(frame.n_subjects);
  Eigen::MatrixXd d(n, spec.dimension(frame.p, frame.q));
  Eigen::VectorXd empty_a(0);
  for (Eigen::Index s = 0; s < n; ++s) {
    // censored rows never enter the model; avoid log(0) for them
    if (frame.delta[static_cast<std::size_t>(s)] == 0) {
      d.row(s).setZero();
      continue;
    }
    Eigen::VectorXd zr = frame.z.row(s).transpose();
    Eigen::VectorXd ar = frame.q > 0 ? Eigen::VectorXd(frame.a.row(s).transpose()) : empty_a;
    d.row(s) = spec.row(frame.time[static_cast<std::size_t>(s)], zr, ar).transpose();
  }
  return d;
}

Eigen::VectorXd MissingnessModel::gamma_vector() const {
  return Eigen::Map<const Eigen::VectorXd>(gamma.data(), gamma.size());
}

void MissingnessModel::set_gamma(const Eigen::VectorXd& flat) {
  gamma = Eigen::Map<const Eigen::MatrixXd>(flat.data(), gamma.rows(), gamma.cols());
}

Eigen::VectorXd MissingnessModel::probabilities(const Eigen::VectorXd& design) const {
  Eigen::VectorXd eta = gamma.transpose() * design;  // k-1 log-odds
  const double top = std::max(0.0, eta.maxCoeff());
  Eigen::VectorXd out(k);
  double denom = std::exp(-top);
  for (int m = 0; m < k - 1; ++m) {
    out[m] = std::exp(eta[m] - top);
    denom += out[m];
  }
  out[k - 1] = std::exp(-top);
  return out / denom;
}

Eigen::VectorXd MissingnessModel::gradient(const Eigen::VectorXd& design, int l) const {
  const Eigen::VectorXd pi = probabilities(design);
  const auto dim = design.size();
  Eigen::VectorXd g(dim * (k - 1));
  for (int m = 0; m < k - 1; ++m) {
    const double coef = (l - 1 == m ? pi[l - 1] : 0.0) - pi[l - 1] * pi[m];
    g.segment(m * dim, dim) = coef * design;
  }
  return g;
}

namespace {

struct ScoreParts {
  double loglik = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd info;
  double min_prob = 1.0;
};

// Cluster-weighted complete-case multinomial log-likelihood, score and
// information, each scaled by 1/n.
ScoreParts complete_case_parts(const Frame& frame, const Eigen::MatrixXd& design,
                               const MissingnessModel& m, bool with_info) {
  const int km1 = m.k - 1;
  const auto dim = design.cols();
  ScoreParts out;
  out.score = Eigen::VectorXd::Zero(dim * km1);
  if (with_info) out.info = Eigen::MatrixXd::Zero(dim * km1, dim * km1);
  const double inv_n = 1.0 / static_cast<double>(frame.n_clusters);
  for (std::size_t s = 0; s < frame.n_subjects; ++s) {
    if (frame.delta[s] != 1 || frame.r[s] != 1) continue;
    const Eigen::VectorXd d = design.row(static_cast<Eigen::Index>(s)).transpose();
    const Eigen::VectorXd pi = m.probabilities(d);
    const double w = frame.weight[s] * inv_n;
    const int c = frame.cause[s] - 1;
    out.loglik += w * std::log(std::max(pi[c], std::numeric_limits<double>::min()));
    out.min_prob = std::min(out.min_prob, pi.minCoeff());
    for (int a = 0; a < km1; ++a) {
      const double resid = (c == a ? 1.0 : 0.0) - pi[a];
      out.score.segment(a * dim, dim) += w * resid * d;
    }
    if (with_info) {
      const Eigen::MatrixXd ddt = d * d.transpose();
      for (int a = 0; a < km1; ++a)
        for (int b = 0; b < km1; ++b) {
          const double v = pi[a] * ((a == b ? 1.0 : 0.0) - pi[b]);
          out.info.block(a * dim, b * dim, dim, dim) += w * v * ddt;
        }
    }
  }
  return out;
}

}  // namespace

Eigen::VectorXd missingness_equation(const Frame& frame, const MissingnessModel& model,
                                     const Eigen::VectorXd& gamma_flat) {
  MissingnessModel trial = model;
  trial.set_gamma(gamma_flat);
  const Eigen::MatrixXd design = design_matrix(frame, model.spec);
  return complete_case_parts(frame, design, trial, false).score;
}

MissingnessModel fit_missingness(const Frame& frame, const DesignSpec& spec, const MissingnessOptions& options) {
  MissingnessModel m;
  m.spec = spec;
  m.k = frame.k;
  m.p = frame.p;
  m.q = frame.q;
  const int dim = spec.dimension(frame.p, frame.q);
  m.gamma = Eigen::MatrixXd::Zero(dim, m.k - 1);

  std::vector<std::size_t> per_cause(static_cast<std::size_t>(m.k), 0);
  std::size_t complete = 0;
  for (std::size_t s = 0; s < frame.n_subjects; ++s)
    if (frame.delta[s] == 1 && frame.r[s] == 1) {
      ++per_cause[static_cast<std::size_t>(frame.cause[s] - 1)];
      ++complete;
    }
  for (int l = 1; l <= m.k; ++l)
    if (per_cause[static_cast<std::size_t>(l - 1)] == 0)
      throw DataError(DataError::Kind::InvariantViolation,
                      "no complete-case failure from cause " + std::to_string(l));

  const Eigen::MatrixXd design = design_matrix(frame, spec);
  {
    Eigen::MatrixXd cc(static_cast<Eigen::Index>(complete), dim);
    Eigen::Index row = 0;
    for (std::size_t s = 0; s < frame.n_subjects; ++s)
      if (frame.delta[s] == 1 && frame.r[s] == 1) cc.row(row++) = design.row(static_cast<Eigen::Index>(s));
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(cc);
    if (qr.rank() < dim) throw SingularMatrix("complete-case design matrix is rank deficient");
  }

  ScoreParts parts = complete_case_parts(frame, design, m, true);
  Eigen::VectorXd gamma = m.gamma_vector();
  for (m.iterations = 0; m.iterations < options.max_iterations; ++m.iterations) {
    m.equation_norm = parts.score.cwiseAbs().maxCoeff();
    if (m.equation_norm < options.tolerance) {
      m.converged = true;
      break;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(parts.info);
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14) break;
    const Eigen::VectorXd step = ldlt.solve(parts.score);
    double scale = 1.0;
    bool accepted = false;
    for (int h = 0; h <= options.max_halvings; ++h, scale *= 0.5) {
      m.set_gamma(gamma + scale * step);
      ScoreParts trial = complete_case_parts(frame, design, m, true);
      if (std::isfinite(trial.loglik) && trial.loglik >= parts.loglik - 1e-12 * std::abs(parts.loglik)) {
        gamma += scale * step;
        parts = std::move(trial);
        accepted = true;
        break;
      }
    }
    m.set_gamma(gamma);
    if (!accepted) break;
  }
  m.set_gamma(gamma);
  m.equation_norm = parts.score.cwiseAbs().maxCoeff();
  if (!m.converged && m.equation_norm < options.tolerance) m.converged = true;
  m.info = parts.info;

  if (parts.min_prob < 1e-10) {
    m.separation = true;
    m.warnings.push_back("fitted cause probabilities pinned at 0 or 1 (separation)");
  }
  if (!m.converged) {
    if (!m.separation)
      throw NoConvergence("cause-probability model did not converge after " + std::to_string(m.iterations) +
                          " iterations (max |equation| = " + std::to_string(m.equation_norm) + ")");
    m.warnings.push_back("returning last iterate without convergence");
  }
  return m;
}

MissingnessModel fit_missingness(const Dataset& data, const DesignSpec& spec, const MissingnessOptions& options) {
  return fit_missingness(Frame(data), spec, options);
}

MissingnessModel unfitted_model(const Frame& frame, const DesignSpec& spec) {
  MissingnessModel m;
  m.spec = spec;
  m.k = frame.k;
  m.p = frame.p;
  m.q = frame.q;
  const int dim = spec.dimension(frame.p, frame.q);
  m.gamma = Eigen::MatrixXd::Zero(dim, m.k - 1);
  m.info = Eigen::MatrixXd::Identity(m.n_params(), m.n_params());
  m.converged = true;
  m.fitted = false;
  return m;
}

double predict_pi(const MissingnessModel& m, const Subject& s, int l) {
  return m.probabilities(m.spec.row(s.x, s.z, s.a))[l - 1];
}

Eigen::VectorXd pi_gradient(const MissingnessModel& m, const Subject& s, int l) {
  return m.gradient(m.spec.row(s.x, s.z, s.a), l);
}

Eigen::VectorXd predict_pi(const MissingnessModel& m, const Frame& frame, int l) {
  const Eigen::MatrixXd design = design_matrix(frame, m.spec);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(frame.n_subjects));
  for (std::size_t s = 0; s < frame.n_subjects; ++s)
    if (frame.delta[s] == 1)
      out[static_cast<Eigen::Index>(s)] = m.probabilities(design.row(static_cast<Eigen::Index>(s)).transpose())[l - 1];
  return out;
}

Eigen::MatrixXd omega_hat(const MissingnessModel& m, const Frame& frame) {
  if (!m.fitted) return Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(frame.n_subjects), m.n_params());
  Eigen::FullPivLU<Eigen::MatrixXd> lu(m.info);
  if (!lu.isInvertible()) throw SingularMatrix("cause-probability information matrix is singular");
  const Eigen::MatrixXd design = design_matrix(frame, m.spec);
  const auto dim = design.cols();
  Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(frame.n_subjects), m.n_params());
  for (std::size_t s = 0; s < frame.n_subjects; ++s) {
    if (frame.delta[s] != 1 || frame.r[s] != 1) continue;
    const Eigen::VectorXd d = design.row(static_cast<Eigen::Index>(s)).transpose();
    const Eigen::VectorXd pi = m.probabilities(d);
    for (int a = 0; a < m.k - 1; ++a) {
      const double resid = (frame.cause[s] - 1 == a ? 1.0 : 0.0) - pi[a];
      scores.row(static_cast<Eigen::Index>(s)).segment(a * dim, dim) = resid * d.transpose();
    }
  }
  return lu.solve(scores.transpose()).transpose();
}

}  // namespace clustcr
