#include "clustcr/data.hpp"

#include "clustcr/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace clustcr {

namespace {

std::string check_subject(const Subject& s, int k) {
  if (!std::isfinite(s.x) || s.x < 0.0) return "time must be finite and nonnegative";
  if (s.delta != 0 && s.delta != 1) return "delta must be 0 or 1";
  if (s.r != 0 && s.r != 1) return "r must be 0 or 1";
  if (s.cause < 0) return "cause must be nonnegative";
  if (s.delta == 0 && (s.r != 1 || s.cause != 0))
    return "censored subject must have r=1 and cause=0";
  if (s.r == 0 && s.cause != 0) return "subject with missing cause must have cause=0";
  if (s.r == 1 && s.delta == 1 && (s.cause < 1 || s.cause > k))
    return "observed failure must have cause in 1.." + std::to_string(k);
  for (Eigen::Index i = 0; i < s.z.size(); ++i)
    if (!std::isfinite(s.z[i])) return "covariates must be finite";
  for (Eigen::Index i = 0; i < s.a.size(); ++i)
    if (!std::isfinite(s.a[i])) return "auxiliary covariates must be finite";
  return {};
}

std::string trim(std::string_view sv) {
  auto b = sv.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = sv.find_last_not_of(" \t\r\n");
  std::string out(sv.substr(b, e - b + 1));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    fields.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return fields;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_int(const std::string& s, int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec == std::errc() && ptr == s.data() + s.size()) return true;
  // accept integral values written as floats, e.g. "1.0"
  double d = 0.0;
  if (parse_double(s, d) && d == std::floor(d) && std::abs(d) < 1e9) {
    out = static_cast<int>(d);
    return true;
  }
  return false;
}

// "z3" -> 3 when the prefix matches, else 0
int indexed_column(const std::string& name, char prefix) {
  if (name.size() < 2 || name[0] != prefix) return 0;
  int idx = 0;
  auto [ptr, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), idx);
  if (ec != std::errc() || ptr != name.data() + name.size() || idx < 1) return 0;
  return idx;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

Dataset::Dataset(std::vector<Cluster> clusters, int k, std::optional<double> tau)
    : clusters_(std::move(clusters)), k_(k) {
  if (clusters_.empty()) throw DataError(DataError::Kind::EmptyDataset, "dataset has no clusters");
  if (k_ < 2) throw DataError(DataError::Kind::InvariantViolation, "number of causes must be at least 2");

  bool first = true;
  double max_x = 0.0;
  std::size_t index = 0;
  for (const auto& c : clusters_) {
    if (c.subjects.empty())
      throw DataError(DataError::Kind::InvariantViolation, "cluster '" + c.id + "' is empty");
    for (const auto& s : c.subjects) {
      ++index;
      if (first) {
        p_ = static_cast<int>(s.z.size());
        q_ = static_cast<int>(s.a.size());
        first = false;
      }
      if (s.z.size() != p_ || s.a.size() != q_)
        throw DataError(DataError::Kind::InvariantViolation,
                        "subject " + std::to_string(index) + " in cluster '" + c.id +
                            "': covariate dimension mismatch");
      if (auto why = check_subject(s, k_); !why.empty())
        throw DataError(DataError::Kind::InvariantViolation,
                        "subject " + std::to_string(index) + " in cluster '" + c.id + "': " + why);
      max_x = std::max(max_x, s.x);
    }
  }
  n_subjects_ = index;
  if (p_ < 1) throw DataError(DataError::Kind::InvariantViolation, "at least one covariate is required");
  tau_ = tau.value_or(max_x);
  if (max_x > tau_)
    throw DataError(DataError::Kind::InvariantViolation, "observed time exceeds tau");
}

std::size_t Dataset::observed_events(int l) const {
  std::size_t count = 0;
  for (const auto& c : clusters_)
    for (const auto& s : c.subjects)
      if (s.r == 1 && s.delta == 1 && s.cause == l) ++count;
  return count;
}

StepFunction::StepFunction(std::vector<double> times, std::vector<double> values, double value0)
    : times_(std::move(times)), values_(std::move(values)), value0_(value0) {
  if (times_.size() != values_.size())
    throw std::invalid_argument("StepFunction: times and values differ in length");
  for (std::size_t i = 1; i < times_.size(); ++i)
    if (!(times_[i] > times_[i - 1]))
      throw std::invalid_argument("StepFunction: times must be strictly increasing");
}

double StepFunction::operator()(double t) const {
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  if (it == times_.begin()) return value0_;
  return values_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

double StepFunction::left_limit(double t) const {
  auto it = std::lower_bound(times_.begin(), times_.end(), t);
  if (it == times_.begin()) return value0_;
  return values_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

CountingState counting_processes(const Subject& s, double t, int k) {
  CountingState st;
  st.N = (s.delta == 1 && s.x <= t) ? 1 : 0;
  st.Y = (s.x >= t) ? 1 : 0;
  st.cause_known = !(s.delta == 1 && s.r == 0);
  st.N_cause.assign(static_cast<std::size_t>(k), 0);
  if (st.cause_known && st.N == 1 && s.cause >= 1 && s.cause <= k)
    st.N_cause[static_cast<std::size_t>(s.cause - 1)] = 1;
  return st;
}

Frame::Frame(const Dataset& data)
    : n_clusters(data.n_clusters()),
      n_subjects(data.n_subjects()),
      k(data.k()),
      p(data.p()),
      q(data.q()),
      tau(data.tau()) {
  std::vector<const Subject*> flat;
  std::vector<std::size_t> flat_cluster;
  flat.reserve(n_subjects);
  for (std::size_t i = 0; i < data.clusters().size(); ++i)
    for (const auto& s : data.clusters()[i].subjects) {
      flat.push_back(&s);
      flat_cluster.push_back(i);
    }

  std::vector<std::size_t> order(n_subjects);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t u, std::size_t v) { return flat[u]->x < flat[v]->x; });

  time.resize(n_subjects);
  delta.resize(n_subjects);
  cause.resize(n_subjects);
  r.resize(n_subjects);
  cluster.resize(n_subjects);
  weight.resize(n_subjects);
  source = order;
  z.resize(static_cast<Eigen::Index>(n_subjects), p);
  a.resize(static_cast<Eigen::Index>(n_subjects), q);
  members.assign(n_clusters, {});

  for (std::size_t row = 0; row < n_subjects; ++row) {
    const Subject& s = *flat[order[row]];
    time[row] = s.x;
    delta[row] = s.delta;
    cause[row] = s.cause;
    r[row] = s.r;
    cluster[row] = flat_cluster[order[row]];
    weight[row] = 1.0 / static_cast<double>(data.clusters()[cluster[row]].size());
    z.row(static_cast<Eigen::Index>(row)) = s.z.transpose();
    if (q > 0) a.row(static_cast<Eigen::Index>(row)) = s.a.transpose();
    members[cluster[row]].push_back(row);
    if (s.delta == 1 && (grid.empty() || grid.back() != s.x)) grid.push_back(s.x);
  }

  slot.assign(n_subjects, -1);
  last_at_risk.assign(n_subjects, -1);
  for (std::size_t row = 0; row < n_subjects; ++row) {
    auto ub = std::upper_bound(grid.begin(), grid.end(), time[row]);
    last_at_risk[row] = static_cast<int>(ub - grid.begin()) - 1;
    if (delta[row] == 1) slot[row] = last_at_risk[row];
  }
}

Dataset read_csv(std::istream& in, const CsvSchema& schema) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || trim(line).front() == '#') continue;
    header = split(line);
    break;
  }
  if (header.empty()) throw DataError(DataError::Kind::EmptyDataset, "empty file: no header row");

  int col_id = -1, col_time = -1, col_delta = -1, col_cause = -1, col_r = -1;
  std::map<int, int> zcols, acols;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const auto& h = header[static_cast<std::size_t>(c)];
    if (h == "cluster_id") col_id = c;
    else if (h == "time") col_time = c;
    else if (h == "delta") col_delta = c;
    else if (h == "cause") col_cause = c;
    else if (h == "r") col_r = c;
    else if (int zi = indexed_column(h, 'z'); zi > 0) zcols[zi] = c;
    else if (int ai = indexed_column(h, 'a'); ai > 0) acols[ai] = c;
    else throw DataError(DataError::Kind::UnknownColumn, "unknown column '" + h + "'");
  }
  for (auto [name, col] : {std::pair<const char*, int>{"cluster_id", col_id}, {"time", col_time},
                           {"delta", col_delta}, {"cause", col_cause}, {"r", col_r}})
    if (col < 0) throw DataError(DataError::Kind::MissingColumn, std::string("missing column '") + name + "'");

  auto check_block = [](const std::map<int, int>& cols, char prefix, int wanted) {
    int count = static_cast<int>(cols.size());
    if (count > 0 && cols.rbegin()->first != count)
      throw DataError(DataError::Kind::MissingColumn,
                      std::string("columns ") + prefix + "1.." + prefix + std::to_string(cols.rbegin()->first) +
                          " are not contiguous");
    if (wanted >= 0 && wanted != count)
      throw DataError(DataError::Kind::MissingColumn,
                      "expected " + std::to_string(wanted) + " '" + prefix + "' columns, found " +
                          std::to_string(count));
    return count;
  };
  const int p = check_block(zcols, 'z', schema.p);
  const int q = check_block(acols, 'a', schema.q);
  if (p < 1) throw DataError(DataError::Kind::MissingColumn, "missing column 'z1'");

  std::vector<Cluster> clusters;
  std::unordered_map<std::string, std::size_t> index_of;
  int max_cause = 0;
  std::vector<std::pair<std::size_t, Subject>> rows;

  while (std::getline(in, line)) {
    ++line_no;
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto fields = split(line);
    auto where = "line " + std::to_string(line_no) + ": ";
    if (fields.size() != header.size())
      throw DataError(DataError::Kind::MalformedRow,
                      where + "expected " + std::to_string(header.size()) + " fields, found " +
                          std::to_string(fields.size()));
    Subject s;
    auto field = [&](int col) -> const std::string& { return fields[static_cast<std::size_t>(col)]; };
    if (!parse_double(field(col_time), s.x) || !std::isfinite(s.x))
      throw DataError(DataError::Kind::MalformedRow, where + "non-numeric time '" + field(col_time) + "'");
    if (s.x < 0.0) throw DataError(DataError::Kind::MalformedRow, where + "negative time");
    if (!parse_int(field(col_delta), s.delta))
      throw DataError(DataError::Kind::MalformedRow, where + "non-integer delta '" + field(col_delta) + "'");
    if (!parse_int(field(col_cause), s.cause))
      throw DataError(DataError::Kind::MalformedRow, where + "non-integer cause '" + field(col_cause) + "'");
    if (!parse_int(field(col_r), s.r))
      throw DataError(DataError::Kind::MalformedRow, where + "non-integer r '" + field(col_r) + "'");
    s.z.resize(p);
    for (int j = 1; j <= p; ++j)
      if (!parse_double(field(zcols[j]), s.z[j - 1]))
        throw DataError(DataError::Kind::MalformedRow, where + "non-numeric z" + std::to_string(j));
    s.a.resize(q);
    for (int j = 1; j <= q; ++j)
      if (!parse_double(field(acols[j]), s.a[j - 1]))
        throw DataError(DataError::Kind::MalformedRow, where + "non-numeric a" + std::to_string(j));

    // cause range is checked once k is known
    if (auto why = check_subject(s, 1 << 30); !why.empty())
      throw DataError(DataError::Kind::InvariantViolation, where + why);
    max_cause = std::max(max_cause, s.cause);

    const auto& id = field(col_id);
    auto [it, inserted] = index_of.try_emplace(id, clusters.size());
    if (inserted) clusters.push_back(Cluster{id, {}});
    rows.emplace_back(line_no, s);
    clusters[it->second].subjects.push_back(std::move(s));
  }
  if (clusters.empty()) throw DataError(DataError::Kind::EmptyDataset, "file has a header but no data rows");

  const int k = schema.k > 0 ? schema.k : std::max(2, max_cause);
  for (const auto& [ln, s] : rows)
    if (s.cause > k)
      throw DataError(DataError::Kind::InvariantViolation,
                      "line " + std::to_string(ln) + ": cause " + std::to_string(s.cause) +
                          " exceeds number of causes " + std::to_string(k));
  if (schema.tau)
    for (const auto& [ln, s] : rows)
      if (s.x > *schema.tau)
        throw DataError(DataError::Kind::InvariantViolation,
                        "line " + std::to_string(ln) + ": time exceeds tau");
  return Dataset(std::move(clusters), k, schema.tau);
}

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::Io, "cannot open '" + path + "'");
  return read_csv(in, schema);
}

void write_csv(const Dataset& data, std::ostream& out) {
  out << "# schema_version=1\n";
  out << "cluster_id,time,delta,cause,r";
  for (int j = 1; j <= data.p(); ++j) out << ",z" << j;
  for (int j = 1; j <= data.q(); ++j) out << ",a" << j;
  out << '\n';
  for (const auto& c : data.clusters())
    for (const auto& s : c.subjects) {
      out << c.id << ',' << format_double(s.x) << ',' << s.delta << ',' << s.cause << ',' << s.r;
      for (Eigen::Index j = 0; j < s.z.size(); ++j) out << ',' << format_double(s.z[j]);
      for (Eigen::Index j = 0; j < s.a.size(); ++j) out << ',' << format_double(s.a[j]);
      out << '\n';
    }
}

void write_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError(DataError::Kind::Io, "cannot write '" + path + "'");
  write_csv(data, out);
}

Dataset resample_clusters(const Dataset& data, const std::vector<std::size_t>& picks) {
  std::vector<Cluster> out;
  out.reserve(picks.size());
  for (std::size_t b = 0; b < picks.size(); ++b) {
    Cluster c = data.clusters().at(picks[b]);
    c.id += "#" + std::to_string(b);
    out.push_back(std::move(c));
  }
  return Dataset(std::move(out), data.k(), data.tau());
}

}  // namespace clustcr
