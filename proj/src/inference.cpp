#include "clustcr/inference.hpp"

#include "clustcr/errors.hpp"
#include "clustcr/stats.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace clustcr {

Eigen::VectorXd CauseInfluence::standard_errors(std::size_t n_clusters) const {
  return (sigma.diagonal() / static_cast<double>(n_clusters)).cwiseMax(0.0).cwiseSqrt();
}

namespace {

using Eigen::Index;

Index idx(std::size_t i) { return static_cast<Index>(i); }

// Per-grid Breslow pieces for one cause.
struct GridPieces {
  std::vector<double> S0;   // unnormalized
  Eigen::MatrixXd E;        // grid x p
  std::vector<double> dL;   // Breslow increments
  std::vector<double> L;    // cumulative
  Eigen::MatrixXd C1;       // grid x p, cumulative E dL
  Eigen::VectorXd risk_score;
};

GridPieces grid_pieces(const Frame& frame, const CauseFit& cf) {
  const std::size_t K = frame.grid_size();
  const RiskSweep sweep = risk_sweep(frame, cf.beta, false);
  GridPieces g;
  g.S0 = sweep.s0;
  g.E = Eigen::MatrixXd::Zero(idx(K), frame.p);
  g.dL.assign(K, 0.0);
  g.L.assign(K, 0.0);
  g.C1 = Eigen::MatrixXd::Zero(idx(K), frame.p);
  g.risk_score = sweep.risk_score;
  std::vector<double> mass(K, 0.0);
  for (std::size_t s = 0; s < frame.n_subjects; ++s) {
    const double d = cf.jumps[idx(s)];
    if (d != 0.0) mass[static_cast<std::size_t>(frame.slot[s])] += frame.weight[s] * d;
  }
  double cum = 0.0;
  Eigen::VectorXd c1 = Eigen::VectorXd::Zero(frame.p);
  for (std::size_t k = 0; k < K; ++k) {
    if (g.S0[k] > 0.0) {
      g.E.row(idx(k)) = sweep.s1.row(idx(k)) / g.S0[k];
      g.dL[k] = mass[k] / g.S0[k];
    } else if (mass[k] != 0.0) {
      throw EmptyRiskSet("empty risk set at a failure time");
    }
    cum += g.dL[k];
    c1 += g.dL[k] * g.E.row(idx(k)).transpose();
    g.L[k] = cum;
    g.C1.row(idx(k)) = c1.transpose();
  }
  return g;
}

Eigen::MatrixXd invert_hessian(const Eigen::MatrixXd& h) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(h);
  if (!lu.isInvertible()) throw SingularMatrix("pseudo-Hessian is singular");
  return lu.inverse();
}

// Raw integrand of psi before multiplying by H^-1.
Eigen::VectorXd psi_raw(const Frame& frame, const GridPieces& g, double d, std::size_t s) {
  const Eigen::VectorXd zs = frame.z.row(idx(s)).transpose();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(frame.p);
  if (d != 0.0) out += d * (zs - g.E.row(frame.slot[s]).transpose());
  const int e = frame.last_at_risk[s];
  if (e >= 0) out -= g.risk_score[idx(s)] * (zs * g.L[static_cast<std::size_t>(e)] - g.C1.row(e).transpose());
  return out;
}

Eigen::MatrixXd cluster_means(const Frame& frame, const Eigen::MatrixXd& rows) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(idx(frame.n_clusters), rows.cols());
  for (std::size_t s = 0; s < frame.n_subjects; ++s)
    out.row(idx(frame.cluster[s])) += frame.weight[s] * rows.row(idx(s));
  return out;
}

std::size_t grid_index_at(const std::vector<double>& grid, double t, bool& before_first) {
  const auto it = std::upper_bound(grid.begin(), grid.end(), t);
  before_first = it == grid.begin();
  return before_first ? 0 : static_cast<std::size_t>(it - grid.begin() - 1);
}

}  // namespace

InfluenceSet influence(const Frame& frame, const FitResult& fit) {
  const std::size_t K = frame.grid_size();
  const std::size_t n = frame.n_clusters;
  const double nd = static_cast<double>(n);
  const MissingnessModel& m = fit.missingness;

  InfluenceSet out;
  out.grid = frame.grid;
  out.n_clusters = n;
  out.omega = omega_hat(m, frame);
  out.omega_clusters = cluster_means(frame, out.omega);
  const Index pg = out.omega.cols();

  std::vector<std::size_t> missing;
  for (std::size_t s = 0; s < frame.n_subjects; ++s)
    if (frame.delta[s] == 1 && frame.r[s] == 0) missing.push_back(s);
  const Eigen::MatrixXd design = missing.empty() ? Eigen::MatrixXd() : design_matrix(frame, m.spec);

  for (int l = 1; l <= frame.k; ++l) {
    const CauseFit& cf = fit.cause(l);
    CauseInfluence ci;
    ci.cause = l;
    const GridPieces g = grid_pieces(frame, cf);
    ci.hessian_inv = invert_hessian(cf.hessian);
    ci.risk_score = g.risk_score;
    ci.mean_cum = g.C1;
    ci.s0.resize(K);
    for (std::size_t k = 0; k < K; ++k) ci.s0[k] = g.S0[k] / nd;

    Eigen::MatrixXd raw(idx(frame.n_subjects), frame.p);
    for (std::size_t s = 0; s < frame.n_subjects; ++s)
      raw.row(idx(s)) = psi_raw(frame, g, cf.jumps[idx(s)], s).transpose();
    ci.psi = raw * ci.hessian_inv.transpose();

    Eigen::MatrixXd r_sum = Eigen::MatrixXd::Zero(frame.p, pg);
    Eigen::MatrixXd rstar_inc = Eigen::MatrixXd::Zero(idx(K), pg);
    for (std::size_t s : missing) {
      const Eigen::VectorXd pidot = m.gradient(design.row(idx(s)).transpose(), l);
      const int k = frame.slot[s];
      const Eigen::VectorXd zc = frame.z.row(idx(s)).transpose() - g.E.row(k).transpose();
      r_sum.noalias() += frame.weight[s] * zc * pidot.transpose();
      rstar_inc.row(k) += (frame.weight[s] / ci.s0[static_cast<std::size_t>(k)]) * pidot.transpose();
    }
    ci.R = ci.hessian_inv * (r_sum / nd);
    ci.Rstar = Eigen::MatrixXd::Zero(idx(K), pg);
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(pg);
    for (std::size_t k = 0; k < K; ++k) {
      acc += rstar_inc.row(idx(k)) / nd;
      ci.Rstar.row(idx(k)) = acc;
    }

    ci.beta_clusters = cluster_means(frame, ci.psi) + out.omega_clusters * ci.R.transpose();
    ci.sigma = ci.beta_clusters.transpose() * ci.beta_clusters / nd;
    ci.sigma = 0.5 * (ci.sigma + ci.sigma.transpose()).eval();

    // Lambda influence per cluster on the grid. The compensator part is
    // accumulated as per-cluster risk scores dropped at last_at_risk and
    // summed backwards, so every row costs O(1).
    Eigen::MatrixXd jump_part = Eigen::MatrixXd::Zero(idx(n), idx(K));
    Eigen::MatrixXd exit_score = Eigen::MatrixXd::Zero(idx(n), idx(K));
    for (std::size_t s = 0; s < frame.n_subjects; ++s) {
      const double w = frame.weight[s];
      const Index c = idx(frame.cluster[s]);
      const double d = cf.jumps[idx(s)];
      if (d != 0.0) {
        const auto k = static_cast<std::size_t>(frame.slot[s]);
        jump_part(c, idx(k)) += w * d / ci.s0[k];
      }
      if (frame.last_at_risk[s] >= 0) exit_score(c, frame.last_at_risk[s]) += w * g.risk_score[idx(s)];
    }
    for (Index k = idx(K) - 2; k >= 0; --k) exit_score.col(k) += exit_score.col(k + 1);
    Eigen::MatrixXd phi(idx(n), idx(K));
    Eigen::VectorXd running = Eigen::VectorXd::Zero(idx(n));
    for (std::size_t k = 0; k < K; ++k) {
      const double dB = g.S0[k] > 0.0 ? g.dL[k] / ci.s0[k] : 0.0;
      running += jump_part.col(idx(k)) - dB * exit_score.col(idx(k));
      phi.col(idx(k)) = running;
    }
    phi.noalias() -= ci.beta_clusters * g.C1.transpose();
    phi.noalias() += out.omega_clusters * ci.Rstar.transpose();
    ci.lambda_clusters = std::move(phi);

    out.causes.push_back(std::move(ci));
  }
  return out;
}

Eigen::MatrixXd martingale_tilde(const Frame& frame, const FitResult& fit, int l) {
  const CauseFit& cf = fit.cause(l);
  const GridPieces g = grid_pieces(frame, cf);
  const std::size_t K = frame.grid_size();
  Eigen::MatrixXd out(idx(frame.n_subjects), idx(K));
  for (std::size_t s = 0; s < frame.n_subjects; ++s) {
    const double d = cf.jumps[idx(s)];
    const int e = frame.last_at_risk[s];
    for (std::size_t k = 0; k < K; ++k) {
      double v = 0.0;
      if (d != 0.0 && frame.slot[s] <= static_cast<int>(k)) v += d;
      if (e >= 0) v -= g.risk_score[idx(s)] * g.L[std::min(k, static_cast<std::size_t>(e))];
      out(idx(s), idx(k)) = v;
    }
  }
  return out;
}

Eigen::VectorXd subject_phi(const Frame& frame, const FitResult& fit, const InfluenceSet& infl, int l,
                            std::size_t row) {
  const CauseFit& cf = fit.cause(l);
  const CauseInfluence& ci = infl.cause(l);
  const GridPieces g = grid_pieces(frame, cf);
  const std::size_t K = frame.grid_size();
  const double d = cf.jumps[idx(row)];
  const int e = frame.last_at_risk[row];
  const Eigen::VectorXd lead = ci.psi.row(idx(row)).transpose() + ci.R * infl.omega.row(idx(row)).transpose();
  Eigen::VectorXd out(idx(K));
  double integral = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    if (d != 0.0 && frame.slot[row] == static_cast<int>(k)) integral += d / ci.s0[k];
    if (e >= static_cast<int>(k) && g.S0[k] > 0.0) integral -= g.risk_score[idx(row)] * g.dL[k] / ci.s0[k];
    out[idx(k)] = integral - lead.dot(g.C1.row(idx(k)));
  }
  return out;
}

Eigen::MatrixXd beta_cov(const InfluenceSet& infl, int l) { return infl.cause(l).sigma; }

Eigen::VectorXd process_variance(const Eigen::MatrixXd& clusters) {
  if (clusters.rows() == 0) return Eigen::VectorXd::Zero(clusters.cols());
  return clusters.array().square().colwise().sum().transpose() / static_cast<double>(clusters.rows());
}

double lambda_cov(const InfluenceSet& infl, int l, double t, double s) {
  return cif_cov(infl.cause(l).lambda_clusters, infl.grid, t, s);
}

Eigen::VectorXd lambda_variance(const InfluenceSet& infl, int l) {
  return process_variance(infl.cause(l).lambda_clusters);
}

double cif_cov(const Eigen::MatrixXd& clusters, const std::vector<double>& grid, double t, double s) {
  bool before_t = false;
  bool before_s = false;
  const std::size_t kt = grid_index_at(grid, t, before_t);
  const std::size_t ks = grid_index_at(grid, s, before_s);
  if (before_t || before_s) return 0.0;
  return clusters.col(idx(kt)).dot(clusters.col(idx(ks))) / static_cast<double>(clusters.rows());
}

Eigen::MatrixXd cumhaz_influence(const FitResult& fit, const InfluenceSet& infl, const Eigen::VectorXd& z0, int l) {
  const CauseFit& cf = fit.cause(l);
  const CauseInfluence& ci = infl.cause(l);
  if (z0.size() != cf.beta.size()) throw DomainError("z0 has the wrong dimension");
  const Eigen::Map<const Eigen::RowVectorXd> L(cf.cumhaz.values().data(), idx(cf.cumhaz.size()));
  const Eigen::VectorXd lead = ci.beta_clusters * z0;
  return (lead * L + ci.lambda_clusters) * std::exp(cf.beta.dot(z0));
}

Eigen::MatrixXd cif_influence(const FitResult& fit, const InfluenceSet& infl, const Eigen::VectorXd& z0, int l) {
  const Eigen::MatrixXd cum = covariate_cumhaz(fit, z0);
  const Index K = cum.rows();
  const Index n = idx(infl.n_clusters);
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(n, K);
  Eigen::MatrixXd own;
  for (int m = 1; m <= static_cast<int>(fit.causes.size()); ++m) {
    Eigen::MatrixXd phi = cumhaz_influence(fit, infl, z0, m);
    total += phi;
    if (m == l) own = std::move(phi);
  }
  Eigen::MatrixXd out(n, K);
  Eigen::VectorXd running = Eigen::VectorXd::Zero(n);
  for (Index k = 0; k < K; ++k) {
    const double total_prev = k > 0 ? cum.row(k - 1).sum() : 0.0;
    const double surv = std::exp(-total_prev);
    const double dl = cum(k, l - 1) - (k > 0 ? cum(k - 1, l - 1) : 0.0);
    if (k > 0) {
      running += surv * (own.col(k) - own.col(k - 1));
      running -= surv * dl * total.col(k - 1);
    } else {
      running += surv * own.col(0);
    }
    out.col(k) = running;
  }
  return out;
}

namespace {

double g_of(Transform tr, double x) {
  switch (tr) {
    case Transform::Identity: return x;
    case Transform::Log: return std::log(x);
    case Transform::CLogLog: return std::log(-std::log(x));
  }
  return x;
}

double g_inv(Transform tr, double y) {
  switch (tr) {
    case Transform::Identity: return y;
    case Transform::Log: return std::exp(y);
    case Transform::CLogLog: return std::exp(-std::exp(y));
  }
  return y;
}

double g_dot(Transform tr, double x) {
  switch (tr) {
    case Transform::Identity: return 1.0;
    case Transform::Log: return 1.0 / x;
    case Transform::CLogLog: return 1.0 / (x * std::log(x));
  }
  return 1.0;
}

bool in_domain(Transform tr, double x) {
  switch (tr) {
    case Transform::Identity: return std::isfinite(x);
    case Transform::Log: return x > 0.0 && std::isfinite(x);
    case Transform::CLogLog: return x > 0.0 && x < 1.0;
  }
  return false;
}

Interval transformed_interval(double estimate, double half_width, Transform tr) {
  const double gy = g_of(tr, estimate);
  const double a = g_inv(tr, gy - half_width);
  const double b = g_inv(tr, gy + half_width);
  return {std::min(a, b), std::max(a, b), false};
}

double band_times_front(const std::vector<double>& grid, const std::vector<Eigen::Index>& cols) {
  return grid[static_cast<std::size_t>(cols.front())];
}

}  // namespace

Interval pointwise_ci(double estimate, double variance, std::size_t n, Transform transform, double level) {
  if (!(variance >= 0.0)) throw DomainError("negative variance");
  if (variance == 0.0) return {estimate, estimate, false};
  if (!in_domain(transform, estimate)) return {estimate, estimate, true};
  const double z = normal_critical(level);
  const double half = z * std::abs(g_dot(transform, estimate)) * std::sqrt(variance / static_cast<double>(n));
  return transformed_interval(estimate, half, transform);
}

std::pair<double, double> default_band_domain(const Frame& frame) {
  std::vector<double> failures;
  for (std::size_t s = 0; s < frame.n_subjects; ++s)
    if (frame.delta[s] == 1) failures.push_back(frame.time[s]);
  if (failures.empty()) throw DomainError("no failures: band domain undefined");
  return {empirical_quantile(failures, 0.10), empirical_quantile(failures, 0.90)};
}

std::vector<BandResult> multiplier_bands(const std::vector<double>& grid, const Eigen::VectorXd& estimate,
                                         const Eigen::MatrixXd& clusters, Transform transform,
                                         const std::vector<BandOptions>& options) {
  if (options.empty()) return {};
  const BandOptions& base = options.front();
  if (base.nsim < 1) throw DomainError("nsim must be positive");
  const double t1 = base.t1 < 0.0 ? -std::numeric_limits<double>::infinity() : base.t1;
  const double t2 = base.t2 < 0.0 ? std::numeric_limits<double>::infinity() : base.t2;
  if (!(t1 <= t2)) throw DomainError("band domain requires t1 <= t2");
  const Index n = clusters.rows();
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  const Eigen::VectorXd var = process_variance(clusters);

  std::vector<std::string> warnings;
  std::vector<Index> cols;
  bool leading_zero = false;
  std::size_t dropped = 0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (grid[k] < t1 || grid[k] > t2) continue;
    const double est = estimate[idx(k)];
    if (!in_domain(transform, est)) {
      if (cols.empty()) leading_zero = true;
      else ++dropped;
      continue;
    }
    if (!(var[idx(k)] > 0.0)) {
      ++dropped;
      continue;
    }
    cols.push_back(idx(k));
  }
  if (leading_zero && !cols.empty())
    warnings.push_back("estimate is zero at the start of the band domain; t1 advanced to " +
                       std::to_string(grid[static_cast<std::size_t>(cols.front())]));
  if (dropped > 0)
    warnings.push_back(std::to_string(dropped) + " grid point(s) dropped where the band weight is degenerate");
  if (cols.empty()) throw DomainError("no grid points with a usable band weight in [t1, t2]");

  const Index J = idx(cols.size());
  Eigen::MatrixXd sub(n, J);
  Eigen::VectorXd sigma(J);
  for (Index j = 0; j < J; ++j) {
    sub.col(j) = clusters.col(cols[static_cast<std::size_t>(j)]);
    sigma[j] = std::sqrt(var[cols[static_cast<std::size_t>(j)]]);
  }
  // normalizing factor nu(t): |B| = |W| / nu
  std::vector<Eigen::ArrayXd> inv_nu;
  for (const auto& o : options) {
    Eigen::ArrayXd nu = sigma.array();
    if (o.weight == BandWeight::HallWellner) nu = 1.0 + sigma.array().square();
    inv_nu.push_back(nu.inverse());
  }

  std::vector<std::vector<double>> sups(options.size(), std::vector<double>(static_cast<std::size_t>(base.nsim)));
  const int chunk = 128;
  Eigen::MatrixXd xi;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int b0 = 0; b0 < base.nsim; b0 += chunk) {
    const int rows = std::min(chunk, base.nsim - b0);
    xi.resize(rows, n);
    for (int r = 0; r < rows; ++r) {
      auto rng = stream_rng(base.seed, static_cast<std::uint64_t>(b0 + r));
      normal.reset();
      for (Index i = 0; i < n; ++i) xi(r, i) = normal(rng);
    }
    const Eigen::MatrixXd w = (xi * sub) / sqrt_n;
    for (std::size_t o = 0; o < options.size(); ++o)
      for (int r = 0; r < rows; ++r)
        sups[o][static_cast<std::size_t>(b0 + r)] = (w.row(r).transpose().array().abs() * inv_nu[o]).maxCoeff();
  }

  std::vector<BandResult> out;
  for (std::size_t o = 0; o < options.size(); ++o) {
    BandResult band;
    band.transform = transform;
    band.weight = options[o].weight;
    band.level = options[o].level;
    band.t1 = band_times_front(grid, cols);
    band.t2 = grid[static_cast<std::size_t>(cols.back())];
    band.warnings = warnings;
    // the sup quantile can dip below the largest marginal quantile for small nsim
    const double floor = normal_critical(options[o].level) * (sigma.array() * inv_nu[o]).maxCoeff();
    band.c_alpha = std::max(empirical_quantile(sups[o], options[o].level), floor);
    for (Index j = 0; j < J; ++j) {
      const Index k = cols[static_cast<std::size_t>(j)];
      const double est = estimate[k];
      const double half = band.c_alpha * std::abs(g_dot(transform, est)) / inv_nu[o][j] / sqrt_n;
      const Interval iv = transformed_interval(est, half, transform);
      band.times.push_back(grid[static_cast<std::size_t>(k)]);
      band.estimate.push_back(est);
      band.lower.push_back(std::min(iv.lower, est));
      band.upper.push_back(std::max(iv.upper, est));
    }
    out.push_back(std::move(band));
  }
  return out;
}

BandResult multiplier_band(const std::vector<double>& grid, const Eigen::VectorXd& estimate,
                           const Eigen::MatrixXd& clusters, Transform transform, const BandOptions& options) {
  return multiplier_bands(grid, estimate, clusters, transform, {options}).front();
}

BandResult simultaneous_band(const Frame& frame, const FitResult& fit, const InfluenceSet& infl, BandTarget target,
                             int l, const Eigen::VectorXd& z0, BandOptions options) {
  if (options.t1 < 0.0 || options.t2 < 0.0) {
    const auto [lo, hi] = default_band_domain(frame);
    if (options.t1 < 0.0) options.t1 = lo;
    if (options.t2 < 0.0) options.t2 = hi;
  }
  if (target == BandTarget::CumulativeHazard) {
    const auto& values = fit.cause(l).cumhaz.values();
    const Eigen::VectorXd est = Eigen::Map<const Eigen::VectorXd>(values.data(), idx(values.size()));
    return multiplier_band(fit.grid, est, infl.cause(l).lambda_clusters, Transform::Log, options);
  }
  const auto F = cif(fit, z0);
  const auto& values = F.at(static_cast<std::size_t>(l - 1)).values();
  const Eigen::VectorXd est = Eigen::Map<const Eigen::VectorXd>(values.data(), idx(values.size()));
  return multiplier_band(fit.grid, est, cif_influence(fit, infl, z0, l), Transform::CLogLog, options);
}

}  // namespace clustcr
