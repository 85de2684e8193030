#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace clustcr {

/// One individual's observed record.
///
/// `cause` is the observed cause of failure: 0 when the subject was censored
/// or when the cause is missing (`r == 0`), otherwise a value in 1..k.
struct Subject {
  double x = 0.0;       // observed time, min(T, U)
  int delta = 0;        // any-cause failure indicator
  int cause = 0;        // observed cause, 0 = censored or missing
  int r = 1;            // 1 if the cause (or censoring status) is observed
  Eigen::VectorXd z;    // covariates of interest
  Eigen::VectorXd a;    // auxiliary covariates for the missingness model
};

struct Cluster {
  std::string id;
  std::vector<Subject> subjects;

  std::size_t size() const { return subjects.size(); }
};

/// Validated collection of clusters. Immutable after construction.
class Dataset {
 public:
  Dataset() = default;

  /// Validates every subject; throws DataError(InvariantViolation) with the
  /// running subject index on failure. `k` is the number of causes (>= 2).
  /// `tau` defaults to the largest observed time.
  Dataset(std::vector<Cluster> clusters, int k, std::optional<double> tau = std::nullopt);

  const std::vector<Cluster>& clusters() const { return clusters_; }
  std::size_t n_clusters() const { return clusters_.size(); }
  std::size_t n_subjects() const { return n_subjects_; }
  int k() const { return k_; }
  int p() const { return p_; }
  int q() const { return q_; }
  double tau() const { return tau_; }

  /// Number of observed (r = 1) failures from cause l.
  std::size_t observed_events(int l) const;

 private:
  std::vector<Cluster> clusters_;
  std::size_t n_subjects_ = 0;
  int k_ = 2;
  int p_ = 0;
  int q_ = 0;
  double tau_ = 0.0;
};

/// Right-continuous step function with strictly increasing jump times.
class StepFunction {
 public:
  StepFunction() = default;
  StepFunction(std::vector<double> times, std::vector<double> values, double value0 = 0.0);

  /// Value of the last jump at or before t.
  double operator()(double t) const;
  /// Value of the last jump strictly before t.
  double left_limit(double t) const;

  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& values() const { return values_; }
  double value0() const { return value0_; }
  std::size_t size() const { return times_.size(); }

 private:
  std::vector<double> times_;
  std::vector<double> values_;
  double value0_ = 0.0;
};

struct CountingState {
  int N = 0;                 // any-cause counting process N(t)
  int Y = 0;                 // at-risk indicator Y(t)
  bool cause_known = true;   // false for failures with a missing cause
  std::vector<int> N_cause;  // N_l(t), l = 1..k (all zero if unknown)
};

/// Evaluates N(t), Y(t) and the cause-specific N_l(t) for one subject.
CountingState counting_processes(const Subject& s, double t, int k);

/// Time-ordered flat view of a Dataset used by all estimating routines.
///
/// Rows are sorted by observed time (stable with respect to the dataset
/// order). `grid` holds the distinct failure times of any cause; `slot[s]` is
/// the grid index of subject s's own failure time (-1 if censored) and
/// `last_at_risk[s]` is the largest grid index k with grid[k] <= time[s]
/// (-1 when the subject leaves before the first failure).
struct Frame {
  explicit Frame(const Dataset& data);

  std::size_t n_clusters = 0;
  std::size_t n_subjects = 0;
  int k = 2;
  int p = 0;
  int q = 0;
  double tau = 0.0;

  std::vector<double> time;
  std::vector<int> delta;
  std::vector<int> cause;
  std::vector<int> r;
  std::vector<std::size_t> cluster;  // cluster index of each row
  std::vector<double> weight;        // 1 / M_i
  std::vector<std::size_t> source;   // position in dataset order
  Eigen::MatrixXd z;                 // n_subjects x p
  Eigen::MatrixXd a;                 // n_subjects x q

  std::vector<double> grid;
  std::vector<int> slot;
  std::vector<int> last_at_risk;
  std::vector<std::vector<std::size_t>> members;  // rows of each cluster

  std::size_t grid_size() const { return grid.size(); }
};

/// Column layout for CSV ingestion. Negative p/q mean "detect from header".
struct CsvSchema {
  int p = -1;
  int q = -1;
  int k = 0;                   // 0 = max observed cause (at least 2)
  std::optional<double> tau;
};

Dataset load_csv(const std::string& path, const CsvSchema& schema = {});
Dataset read_csv(std::istream& in, const CsvSchema& schema = {});
void write_csv(const Dataset& data, std::ostream& out);
void write_csv(const Dataset& data, const std::string& path);

/// Dataset formed by the listed clusters (repeats allowed, as in a cluster
/// bootstrap). Cluster ids are suffixed to stay unique.
Dataset resample_clusters(const Dataset& data, const std::vector<std::size_t>& picks);

}  // namespace clustcr
