#pragma once

// Textbook weighted Cox partial likelihood with Breslow ties, written
// directly from the likelihood with O(N^2) risk-set scans. Shares no code
// with the library.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

namespace oracle {

struct CoxData {
  std::vector<double> time;
  std::vector<int> status;
  std::vector<double> weight;
  Eigen::MatrixXd z;  // rows = observations
};

struct CoxFit {
  Eigen::VectorXd beta;
  Eigen::MatrixXd information;  // minus the Hessian of the log partial likelihood
  bool converged = false;
  std::vector<double> event_times;
  std::vector<double> cumhaz;  // Breslow, at event_times
  Eigen::MatrixXd robust_cov;  // I^-1 (sum U U') I^-1, unit weights
};

inline double loglik(const CoxData& d, const Eigen::VectorXd& b) {
  double ll = 0.0;
  const std::size_t n = d.time.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (d.status[i] == 0 || d.weight[i] == 0.0) continue;
    double s0 = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (d.time[j] >= d.time[i]) s0 += d.weight[j] * std::exp(d.z.row(j).dot(b));
    ll += d.weight[i] * (d.z.row(i).dot(b) - std::log(s0));
  }
  return ll;
}

inline void score_info(const CoxData& d, const Eigen::VectorXd& b, Eigen::VectorXd& u, Eigen::MatrixXd& info) {
  const std::size_t n = d.time.size();
  const auto p = d.z.cols();
  u = Eigen::VectorXd::Zero(p);
  info = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t i = 0; i < n; ++i) {
    if (d.status[i] == 0 || d.weight[i] == 0.0) continue;
    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
    for (std::size_t j = 0; j < n; ++j) {
      if (d.time[j] < d.time[i]) continue;
      const Eigen::VectorXd zj = d.z.row(j).transpose();
      const double r = d.weight[j] * std::exp(zj.dot(b));
      s0 += r;
      s1 += r * zj;
      s2 += r * zj * zj.transpose();
    }
    const Eigen::VectorXd e = s1 / s0;
    u += d.weight[i] * (d.z.row(i).transpose() - e);
    info += d.weight[i] * (s2 / s0 - e * e.transpose());
  }
}

inline CoxFit fit(const CoxData& d, double tol = 1e-13, int max_iter = 200) {
  const auto p = d.z.cols();
  CoxFit out;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd u;
  Eigen::MatrixXd info;
  double ll = loglik(d, b);
  for (int it = 0; it < max_iter; ++it) {
    score_info(d, b, u, info);
    if (u.cwiseAbs().maxCoeff() < tol) {
      out.converged = true;
      break;
    }
    const Eigen::VectorXd step = info.fullPivLu().solve(u);
    double scale = 1.0;
    bool moved = false;
    for (int h = 0; h < 40; ++h, scale /= 2) {
      const Eigen::VectorXd trial = b + scale * step;
      const double v = loglik(d, trial);
      if (std::isfinite(v) && v >= ll - 1e-14 * std::abs(ll)) {
        b = trial;
        ll = v;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  score_info(d, b, u, info);
  if (u.cwiseAbs().maxCoeff() < 1e-10) out.converged = true;
  if (b.cwiseAbs().maxCoeff() > 8.0) out.converged = false;
  out.beta = b;
  out.information = info;

  const std::size_t n = d.time.size();
  for (std::size_t i = 0; i < n; ++i)
    if (d.status[i] == 1) out.event_times.push_back(d.time[i]);
  std::sort(out.event_times.begin(), out.event_times.end());
  out.event_times.erase(std::unique(out.event_times.begin(), out.event_times.end()), out.event_times.end());
  std::vector<double> dlam(out.event_times.size());
  std::vector<Eigen::VectorXd> ebar(out.event_times.size());
  double cum = 0.0;
  for (std::size_t k = 0; k < out.event_times.size(); ++k) {
    const double t = out.event_times[k];
    double events = 0.0, s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    for (std::size_t j = 0; j < n; ++j) {
      if (d.time[j] == t && d.status[j] == 1) events += d.weight[j];
      if (d.time[j] >= t) {
        const double r = d.weight[j] * std::exp(d.z.row(j).dot(b));
        s0 += r;
        s1 += r * d.z.row(j).transpose();
      }
    }
    dlam[k] = events / s0;
    ebar[k] = s1 / s0;
    cum += dlam[k];
    out.cumhaz.push_back(cum);
  }

  // score residuals (Lin-Wei), unit weights assumed
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd zi = d.z.row(i).transpose();
    Eigen::VectorXd ui = Eigen::VectorXd::Zero(p);
    for (std::size_t k = 0; k < out.event_times.size(); ++k) {
      const double t = out.event_times[k];
      if (d.time[i] < t) break;
      if (d.time[i] == t && d.status[i] == 1) ui += zi - ebar[k];
      ui -= std::exp(zi.dot(b)) * dlam[k] * (zi - ebar[k]);
    }
    meat += ui * ui.transpose();
  }
  const Eigen::MatrixXd inv = info.inverse();
  out.robust_cov = inv * meat * inv;
  return out;
}

inline double cumhaz_at(const CoxFit& f, double t) {
  double v = 0.0;
  for (std::size_t k = 0; k < f.event_times.size() && f.event_times[k] <= t; ++k) v = f.cumhaz[k];
  return v;
}

}  // namespace oracle
