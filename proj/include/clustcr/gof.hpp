#pragma once

#include "clustcr/data.hpp"
#include "clustcr/missingness.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace clustcr {

/// Cumulative complete-case residual process for cause l,
/// (1/n) sum_i M_i^-1 sum_j R_ij {N_ijl(t) - pi_l(W_ij) N_ij(t)}.
/// Jumps only at complete-case failure times.
StepFunction residual_process(const Frame& frame, const MissingnessModel& m, int l);
StepFunction residual_process(const Dataset& data, const MissingnessModel& m, int l);

struct GofResult {
  int cause = 1;
  StepFunction process;
  std::vector<double> band_times;  // process jump times in [0, t90]
  std::vector<double> lower;
  std::vector<double> upper;
  double statistic = 0.0;  // sup |process| over [0, tau]
  double critical = 0.0;   // 0.95 quantile of the simulated sups
  double p_value = 1.0;
  int nsim = 0;
  std::uint64_t seed = 0;
};

/// Supremum test of the cause-probability model by multiplier perturbation of
/// the cluster contributions, corrected for the estimation of gamma.
GofResult gof_test(const Frame& frame, const MissingnessModel& m, int l, int nsim, std::uint64_t seed);
GofResult gof_test(const Dataset& data, const MissingnessModel& m, int l, int nsim, std::uint64_t seed);

/// Columns t, process, lower, upper, starting with a row at t = 0; the band is
/// NA beyond t90.
void write_gof_csv(const GofResult& result, std::ostream& out);

}  // namespace clustcr
