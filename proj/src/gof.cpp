#include "clustcr/gof.hpp"

#include "clustcr/errors.hpp"
#include "clustcr/stats.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>

namespace clustcr {

namespace {

using Eigen::Index;

struct ResidualPieces {
  std::vector<double> times;
  Eigen::MatrixXd clusters;  // n x G cumulative cluster contributions, uncorrected
  Eigen::MatrixXd dgrad;     // G x p_gamma, (1/n) sum R Delta I(x <= t) pidot'
};

ResidualPieces residual_pieces(const Frame& frame, const MissingnessModel& m, int l, bool with_gradient) {
  if (l < 1 || l > m.k) throw DomainError("cause index out of range");
  if (!m.fitted) throw DomainError("no cause is missing; there is no cause-probability model to assess");
  ResidualPieces out;
  std::vector<std::size_t> rows;
  for (std::size_t s = 0; s < frame.n_subjects; ++s)
    if (frame.delta[s] == 1 && frame.r[s] == 1) {
      rows.push_back(s);
      if (out.times.empty() || out.times.back() != frame.time[s]) out.times.push_back(frame.time[s]);
    }
  const auto G = static_cast<Index>(out.times.size());
  const auto n = static_cast<Index>(frame.n_clusters);
  const double inv_n = 1.0 / static_cast<double>(frame.n_clusters);
  out.clusters = Eigen::MatrixXd::Zero(n, G);
  Eigen::MatrixXd grad_inc;
  if (with_gradient) grad_inc = Eigen::MatrixXd::Zero(G, m.n_params());
  const Eigen::MatrixXd design = design_matrix(frame, m.spec);

  Index g = -1;
  double last = -1.0;
  for (std::size_t s : rows) {
    if (g < 0 || frame.time[s] != last) {
      ++g;
      last = frame.time[s];
    }
    const Eigen::VectorXd d = design.row(static_cast<Index>(s)).transpose();
    const double pi = m.probabilities(d)[l - 1];
    const double w = frame.weight[s];
    out.clusters(static_cast<Index>(frame.cluster[s]), g) += w * ((frame.cause[s] == l ? 1.0 : 0.0) - pi);
    if (with_gradient) grad_inc.row(g) += w * inv_n * m.gradient(d, l).transpose();
  }
  for (Index c = 1; c < G; ++c) out.clusters.col(c) += out.clusters.col(c - 1);
  if (with_gradient) {
    out.dgrad = grad_inc;
    for (Index c = 1; c < G; ++c) out.dgrad.row(c) += out.dgrad.row(c - 1);
  }
  return out;
}

}  // namespace

StepFunction residual_process(const Frame& frame, const MissingnessModel& m, int l) {
  const ResidualPieces pieces = residual_pieces(frame, m, l, false);
  const Eigen::VectorXd values = pieces.clusters.colwise().sum().transpose() / static_cast<double>(frame.n_clusters);
  return StepFunction(pieces.times, std::vector<double>(values.data(), values.data() + values.size()), 0.0);
}

StepFunction residual_process(const Dataset& data, const MissingnessModel& m, int l) {
  return residual_process(Frame(data), m, l);
}

GofResult gof_test(const Frame& frame, const MissingnessModel& m, int l, int nsim, std::uint64_t seed) {
  if (nsim < 100) throw DomainError("nsim must be at least 100");
  const ResidualPieces pieces = residual_pieces(frame, m, l, true);
  const auto n = static_cast<Index>(frame.n_clusters);
  const double inv_n = 1.0 / static_cast<double>(frame.n_clusters);

  GofResult res;
  res.cause = l;
  res.nsim = nsim;
  res.seed = seed;
  const Eigen::VectorXd values = pieces.clusters.colwise().sum().transpose() * inv_n;
  res.process = StepFunction(pieces.times, std::vector<double>(values.data(), values.data() + values.size()), 0.0);
  res.statistic = values.size() > 0 ? values.cwiseAbs().maxCoeff() : 0.0;

  const Eigen::MatrixXd omega = omega_hat(m, frame);
  Eigen::MatrixXd omega_clusters = Eigen::MatrixXd::Zero(n, omega.cols());
  for (std::size_t s = 0; s < frame.n_subjects; ++s)
    omega_clusters.row(static_cast<Index>(frame.cluster[s])) += frame.weight[s] * omega.row(static_cast<Index>(s));
  const Eigen::MatrixXd contrib = pieces.clusters - omega_clusters * pieces.dgrad.transpose();

  std::vector<double> sups(static_cast<std::size_t>(nsim), 0.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int chunk = 128;
  Eigen::MatrixXd xi;
  for (int b0 = 0; b0 < nsim; b0 += chunk) {
    const int rows = std::min(chunk, nsim - b0);
    xi.resize(rows, n);
    for (int r = 0; r < rows; ++r) {
      auto rng = stream_rng(seed, static_cast<std::uint64_t>(b0 + r));
      normal.reset();
      for (Index i = 0; i < n; ++i) xi(r, i) = normal(rng);
    }
    const Eigen::MatrixXd w = (xi * contrib) * inv_n;
    for (int r = 0; r < rows; ++r)
      sups[static_cast<std::size_t>(b0 + r)] = w.cols() > 0 ? w.row(r).cwiseAbs().maxCoeff() : 0.0;
  }
  std::size_t exceed = 0;
  for (double s : sups)
    if (s >= res.statistic) ++exceed;
  res.p_value = static_cast<double>(1 + exceed) / static_cast<double>(1 + nsim);
  res.critical = empirical_quantile(sups, 0.95);

  std::vector<double> failures;
  for (std::size_t s = 0; s < frame.n_subjects; ++s)
    if (frame.delta[s] == 1) failures.push_back(frame.time[s]);
  const double t90 = empirical_quantile(failures, 0.90);
  for (double t : pieces.times) {
    if (t > t90) break;
    res.band_times.push_back(t);
    res.lower.push_back(-res.critical);
    res.upper.push_back(res.critical);
  }
  return res;
}

GofResult gof_test(const Dataset& data, const MissingnessModel& m, int l, int nsim, std::uint64_t seed) {
  return gof_test(Frame(data), m, l, nsim, seed);
}

namespace {

void put(std::ostream& out, double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  out.write(buf, r.ptr - buf);
}

}  // namespace

void write_gof_csv(const GofResult& result, std::ostream& out) {
  out << "# schema_version=1\n";
  out << "t,process,lower,upper\n";
  const auto& times = result.process.times();
  const auto& values = result.process.values();
  out << "0,0,";
  put(out, -result.critical);
  out << ',';
  put(out, result.critical);
  out << '\n';
  for (std::size_t i = 0; i < times.size(); ++i) {
    put(out, times[i]);
    out << ',';
    put(out, values[i]);
    if (i < result.band_times.size()) {
      out << ',';
      put(out, result.lower[i]);
      out << ',';
      put(out, result.upper[i]);
      out << '\n';
    } else {
      out << ",NA,NA\n";
    }
  }
}

}  // namespace clustcr
