#include "clustcr/data.hpp"
#include "clustcr/errors.hpp"

#include "random_data.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace clustcr;

namespace {

Subject subj(double x, int delta, int cause, int r, double z = 0.0) {
  Subject s;
  s.x = x;
  s.delta = delta;
  s.cause = cause;
  s.r = r;
  s.z = Eigen::VectorXd::Constant(1, z);
  s.a = Eigen::VectorXd(0);
  return s;
}

DataError::Kind kind_of(const std::string& csv) {
  std::istringstream in(csv);
  try {
    read_csv(in);
  } catch (const DataError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error for:\n" << csv;
  return DataError::Kind::Io;
}

}  // namespace

TEST(Subject, InvariantsRejected) {
  const auto make = [](Subject s) { return Dataset({Cluster{"a", {s}}}, 2); };
  EXPECT_THROW(make(subj(1.0, 0, 1, 1)), DataError);   // censored with a cause
  EXPECT_THROW(make(subj(1.0, 0, 0, 0)), DataError);   // censored with r = 0
  EXPECT_THROW(make(subj(1.0, 1, 2, 0)), DataError);   // missing but cause recorded
  EXPECT_THROW(make(subj(1.0, 1, 0, 1)), DataError);   // observed failure without cause
  EXPECT_THROW(make(subj(1.0, 1, 3, 1)), DataError);   // cause > k
  EXPECT_THROW(make(subj(-0.1, 0, 0, 1)), DataError);
  EXPECT_NO_THROW(make(subj(1.0, 1, 0, 0)));
  EXPECT_NO_THROW(make(subj(1.0, 0, 0, 1)));
}

TEST(Dataset, TauDefaultsToMaxTime) {
  Dataset d({Cluster{"a", {subj(1.0, 1, 1, 1), subj(2.5, 0, 0, 1)}}, Cluster{"b", {subj(0.3, 1, 2, 1)}}}, 2);
  EXPECT_DOUBLE_EQ(d.tau(), 2.5);
  EXPECT_EQ(d.n_clusters(), 2u);
  EXPECT_EQ(d.n_subjects(), 3u);
  EXPECT_EQ(d.observed_events(1), 1u);
  EXPECT_EQ(d.observed_events(2), 1u);
  EXPECT_THROW(Dataset({Cluster{"a", {subj(3.0, 0, 0, 1)}}}, 2, 2.0), DataError);
}

TEST(Dataset, EmptyClusterRejected) {
  EXPECT_THROW(Dataset({Cluster{"a", {}}}, 2), DataError);
  EXPECT_THROW(Dataset({}, 2), DataError);
}

TEST(CountingProcess, Examples) {
  const Subject s = subj(0.5, 1, 2, 1);
  auto c = counting_processes(s, 0.4, 2);
  EXPECT_EQ(c.N, 0);
  EXPECT_EQ(c.Y, 1);
  c = counting_processes(s, 0.5, 2);
  EXPECT_EQ(c.N, 1);
  EXPECT_EQ(c.Y, 1);
  EXPECT_EQ(c.N_cause[1], 1);
  EXPECT_EQ(c.N_cause[0], 0);
  c = counting_processes(subj(0.5, 0, 0, 1), 0.6, 2);
  EXPECT_EQ(c.N, 0);
  EXPECT_EQ(c.Y, 0);
  c = counting_processes(subj(0.5, 1, 0, 0), 0.7, 2);
  EXPECT_EQ(c.N, 1);
  EXPECT_FALSE(c.cause_known);
}

TEST(CountingProcess, PathProperties) {
  std::mt19937_64 rng(11);
  testdata::RandomSpec spec;
  spec.k = 3;
  const Dataset d = testdata::random_dataset(rng, spec);
  for (const auto& c : d.clusters())
    for (const auto& s : c.subjects) {
      int prev_n = 0, prev_y = 1;
      for (double t = 0.0; t <= d.tau() + 0.5; t += 0.05) {
        const auto cp = counting_processes(s, t, 3);
        EXPECT_GE(cp.N, prev_n);
        EXPECT_LE(cp.Y, prev_y);
        EXPECT_TRUE(cp.N == 0 || cp.N == 1);
        EXPECT_EQ(cp.Y * (t > s.x ? 1 : 0), 0);
        int sum = 0;
        for (int v : cp.N_cause) sum += v;
        EXPECT_LE(sum, cp.N);
        prev_n = cp.N;
        prev_y = cp.Y;
      }
    }
}

TEST(StepFunction, EvaluationAndLeftLimit) {
  StepFunction f({1.0, 2.0, 4.0}, {0.1, 0.3, 0.6});
  EXPECT_DOUBLE_EQ(f(0.5), 0.0);
  EXPECT_DOUBLE_EQ(f(1.0), 0.1);
  EXPECT_DOUBLE_EQ(f.left_limit(1.0), 0.0);
  EXPECT_DOUBLE_EQ(f(3.9), 0.3);
  EXPECT_DOUBLE_EQ(f.left_limit(4.0), 0.3);
  EXPECT_DOUBLE_EQ(f(10.0), 0.6);
  EXPECT_THROW(StepFunction({1.0, 1.0}, {0.0, 1.0}), std::invalid_argument);
}

TEST(Frame, SortedWithGridAndSlots) {
  Dataset d({Cluster{"a", {subj(2.0, 1, 1, 1), subj(1.0, 0, 0, 1)}},
             Cluster{"b", {subj(0.5, 1, 2, 1), subj(2.0, 1, 0, 0), subj(3.0, 0, 0, 1)}}},
            2);
  Frame f(d);
  ASSERT_EQ(f.n_subjects, 5u);
  EXPECT_EQ(f.time, (std::vector<double>{0.5, 1.0, 2.0, 2.0, 3.0}));
  EXPECT_EQ(f.grid, (std::vector<double>{0.5, 2.0}));
  EXPECT_EQ(f.slot, (std::vector<int>{0, -1, 1, 1, -1}));
  EXPECT_EQ(f.last_at_risk, (std::vector<int>{0, 0, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(f.weight[0], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(f.weight[1], 0.5);
  EXPECT_EQ(f.members[0].size(), 2u);
}

TEST(Csv, GroupsByClusterId) {
  std::istringstream in("cluster_id,time,delta,cause,r,z1\nA,1.0,1,1,1,0.5\nB,0.4,0,0,1,1\nA,2,1,2,1,0\n");
  const Dataset d = read_csv(in);
  ASSERT_EQ(d.n_clusters(), 2u);
  EXPECT_EQ(d.clusters()[0].size(), 2u);
  EXPECT_EQ(d.clusters()[1].size(), 1u);
  EXPECT_DOUBLE_EQ(d.clusters()[0].subjects[1].x, 2.0);
  EXPECT_EQ(d.k(), 2);
  EXPECT_EQ(d.p(), 1);
  EXPECT_EQ(d.q(), 0);
}

TEST(Csv, Errors) {
  EXPECT_EQ(kind_of(""), DataError::Kind::EmptyDataset);
  EXPECT_EQ(kind_of("cluster_id,time,delta,cause,r,z1\n"), DataError::Kind::EmptyDataset);
  EXPECT_EQ(kind_of("cluster_id,time,delta,cause,r,z1,age\nA,1,1,1,1,0,3\n"), DataError::Kind::UnknownColumn);
  EXPECT_EQ(kind_of("cluster_id,time,delta,r,z1\nA,1,1,1,0\n"), DataError::Kind::MissingColumn);
  EXPECT_EQ(kind_of("cluster_id,time,delta,cause,r,z1,z3\nA,1,1,1,1,0,0\n"), DataError::Kind::MissingColumn);
  EXPECT_EQ(kind_of("cluster_id,time,delta,cause,r,z1\nA,abc,1,1,1,0\n"), DataError::Kind::MalformedRow);
  EXPECT_EQ(kind_of("cluster_id,time,delta,cause,r,z1\nA,-1,1,1,1,0\n"), DataError::Kind::MalformedRow);
  EXPECT_EQ(kind_of("cluster_id,time,delta,cause,r,z1\nA,1,0,1,1,0\n"), DataError::Kind::InvariantViolation);
}

TEST(Csv, ErrorNamesColumnAndLine) {
  std::istringstream in1("cluster_id,time,delta,cause,r,z1,age\nA,1,1,1,1,0,3\n");
  try {
    read_csv(in1);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("age"), std::string::npos);
  }
  std::istringstream in2("cluster_id,time,delta,cause,r,z1\nA,1,1,1,1,0\nA,1,0,0,0,0\n");
  try {
    read_csv(in2);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Csv, RoundTripIsExact) {
  std::mt19937_64 rng(5);
  testdata::RandomSpec spec;
  spec.q = 2;
  spec.k = 3;
  const Dataset d = testdata::random_dataset(rng, spec);
  std::stringstream buf;
  write_csv(d, buf);
  const Dataset back = read_csv(buf, CsvSchema{-1, -1, 3, std::nullopt});
  ASSERT_EQ(back.n_clusters(), d.n_clusters());
  for (std::size_t i = 0; i < d.n_clusters(); ++i) {
    const auto& a = d.clusters()[i];
    const auto& b = back.clusters()[i];
    EXPECT_EQ(a.id, b.id);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t j = 0; j < a.size(); ++j) {
      EXPECT_EQ(a.subjects[j].x, b.subjects[j].x);
      EXPECT_EQ(a.subjects[j].delta, b.subjects[j].delta);
      EXPECT_EQ(a.subjects[j].cause, b.subjects[j].cause);
      EXPECT_EQ(a.subjects[j].r, b.subjects[j].r);
      EXPECT_EQ(a.subjects[j].z, b.subjects[j].z);
      EXPECT_EQ(a.subjects[j].a, b.subjects[j].a);
    }
  }
}

TEST(Resample, RepeatedClustersGetUniqueIds) {
  std::mt19937_64 rng(2);
  const Dataset d = testdata::random_dataset(rng, {});
  const Dataset b = resample_clusters(d, {0, 0, 3});
  ASSERT_EQ(b.n_clusters(), 3u);
  EXPECT_NE(b.clusters()[0].id, b.clusters()[1].id);
  EXPECT_EQ(b.clusters()[0].size(), d.clusters()[0].size());
}
