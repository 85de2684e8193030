#include "clustcr/data.hpp"
#include "clustcr/estimator.hpp"
#include "clustcr/simulation.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace clustcr;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("clustcr_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { if (!HasFailure()) fs::remove_all(dir_); }

  CliRun run(const std::string& args) const {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd =
        std::string("\"") + CLUSTCR_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    return CliRun{WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  fs::path write_scenario_data(int id, std::size_t n, std::size_t rep) const {
    ScenarioConfig cfg = scenario(id);
    cfg.n = n;
    const fs::path p = dir_ / ("data_" + std::to_string(id) + "_" + std::to_string(n) + ".csv");
    write_csv(generate_dataset(cfg, rep), p.string());
    return p;
  }

  fs::path dir_;
};

std::vector<std::vector<std::string>> read_table(const fs::path& p, std::string* header = nullptr) {
  std::ifstream in(p);
  std::string line;
  std::vector<std::vector<std::string>> rows;
  bool seen_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!seen_header) {
      seen_header = true;
      if (header) *header = line;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

double cell(const std::string& s) { return s == "NA" ? std::nan("") : std::stod(s); }

}  // namespace

TEST_F(Cli, FitWritesBlocksMatchingLibrary) {
  const fs::path data = write_scenario_data(1, 150, 1);
  const CliRun r = run("fit --input " + data.string() + " --out " + (dir_ / "fit").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(dir_ / "fit" / "fit.json"));
  EXPECT_EQ(j["schema_version"], 1);
  ASSERT_EQ(j["causes"].size(), 2u);

  const FitResult lib = fit(load_csv(data.string()), DesignSpec{});
  for (int l = 1; l <= 2; ++l) {
    const auto& block = j["causes"][static_cast<std::size_t>(l - 1)];
    EXPECT_EQ(block["cause"], l);
    ASSERT_EQ(block["coefficients"].size(), 2u);
    for (std::size_t m = 0; m < 2; ++m) {
      const auto& c = block["coefficients"][m];
      const double b = c["beta"], se = c["se"];
      EXPECT_DOUBLE_EQ(b, lib.cause(l).beta[static_cast<Eigen::Index>(m)]);
      EXPECT_GT(se, 0.0);
      EXPECT_NEAR(double(c["z"]), b / se, 1e-12);
      EXPECT_NEAR(double(c["hr"]), std::exp(b), 1e-12);
      EXPECT_LT(double(c["hr_lower"]), double(c["hr"]));
      EXPECT_GT(double(c["hr_upper"]), double(c["hr"]));
    }
    std::string header;
    const auto rows = read_table(dir_ / "fit" / ("baseline_hazard_" + std::to_string(l) + ".csv"), &header);
    EXPECT_EQ(header, "t,Lambda,se,lo,hi");
    ASSERT_EQ(rows.size(), lib.grid.size());
    double prev = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const double lam = cell(rows[k][1]);
      EXPECT_DOUBLE_EQ(lam, lib.cause(l).cumhaz.values()[k]);
      EXPECT_GE(lam, prev);
      prev = lam;
    }
  }
}

TEST_F(Cli, UnknownColumnIsDataError) {
  const fs::path p = dir_ / "bad.csv";
  std::ofstream(p) << "cluster_id,time,delta,cause,r,z1,frailty\n1,0.5,1,1,1,0.2,1\n2,0.7,0,0,1,0.1,1\n";
  const CliRun r = run("fit --input " + p.string() + " --out " + (dir_ / "o").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("frailty"), std::string::npos) << r.err;
}

TEST_F(Cli, SingularFitExitsThreeWithDiagnostics) {
  const fs::path p = dir_ / "const.csv";
  {
    std::ofstream out(p);
    out << "cluster_id,time,delta,cause,r,z1\n";
    for (int i = 0; i < 12; ++i) out << i << ',' << 0.1 * (i + 1) << ",1," << (i % 2 + 1) << ",1,1\n";
  }
  const CliRun r = run("fit --input " + p.string() + " --out " + (dir_ / "o").string());
  EXPECT_EQ(r.code, 3);
  ASSERT_TRUE(fs::exists(dir_ / "o" / "diagnostics.json"));
  const auto j = nlohmann::json::parse(slurp(dir_ / "o" / "diagnostics.json"));
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_NE(j["stage_error"].get<std::string>().find("cause 1"), std::string::npos);
}

TEST_F(Cli, PredictBandsDeterministicAndContainPointwise) {
  const fs::path data = write_scenario_data(1, 120, 2);
  const std::string base = "predict --input " + data.string() + " --z0 0.5,1 --nsim 400 --seed 9 --out ";
  ASSERT_EQ(run(base + (dir_ / "a").string()).code, 0);
  ASSERT_EQ(run(base + (dir_ / "b").string()).code, 0);
  for (int l = 1; l <= 2; ++l) {
    const std::string name = "cif_" + std::to_string(l) + ".csv";
    EXPECT_EQ(slurp(dir_ / "a" / name), slurp(dir_ / "b" / name));
    std::string header;
    const auto rows = read_table(dir_ / "a" / name, &header);
    EXPECT_EQ(header, "t,F,se,lo,hi,ep_lo,ep_hi,hw_lo,hw_hi");
    std::size_t inside = 0;
    for (const auto& row : rows) {
      ASSERT_EQ(row.size(), 9u);
      const double lo = cell(row[3]), hi = cell(row[4]);
      for (int b : {5, 7}) {
        const double blo = cell(row[static_cast<std::size_t>(b)]), bhi = cell(row[static_cast<std::size_t>(b + 1)]);
        if (std::isnan(blo) || std::isnan(lo)) continue;
        ++inside;
        EXPECT_LE(blo, lo + 1e-12);
        EXPECT_GE(bhi, hi - 1e-12);
      }
    }
    EXPECT_GT(inside, 10u);
  }
  const CliRun other = run("predict --input " + data.string() + " --z0 0.5,1 --nsim 400 --seed 10 --out " +
                        (dir_ / "c").string());
  ASSERT_EQ(other.code, 0);
  EXPECT_NE(slurp(dir_ / "a" / "cif_1.csv"), slurp(dir_ / "c" / "cif_1.csv"));
}

TEST_F(Cli, PredictZ0MismatchIsExitTwo) {
  const fs::path data = write_scenario_data(1, 60, 3);
  const CliRun r = run("predict --input " + data.string() + " --z0 0.5 --out " + (dir_ / "o").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("z0"), std::string::npos);
}

TEST_F(Cli, GofReproducibleAndStartsAtZero) {
  const fs::path data = write_scenario_data(1, 100, 4);
  const std::string base = "gof --input " + data.string() + " --nsim 300 --seed 5 --out ";
  const CliRun a = run(base + (dir_ / "a").string());
  const CliRun b = run(base + (dir_ / "b").string());
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out.find("p = "), std::string::npos);
  const auto rows = read_table(dir_ / "a" / "gof_1.csv");
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(cell(rows[0][0]), 0.0);
  EXPECT_EQ(cell(rows[0][1]), 0.0);
}

TEST_F(Cli, GofDetectsMisspecifiedTimeEffect) {
  // cause probabilities are linear in log time here; the identity-time model is wrong
  const fs::path data = write_scenario_data(2, 1000, 1);
  const CliRun good = run("gof --design logtime --nsim 500 --input " + data.string() + " --out " + (dir_ / "g").string());
  const CliRun bad = run("gof --design time --nsim 500 --input " + data.string() + " --out " + (dir_ / "b").string());
  ASSERT_EQ(good.code, 0);
  ASSERT_EQ(bad.code, 0);
  const auto pval = [](const std::string& s) { return std::stod(s.substr(s.rfind("p = ") + 4)); };
  EXPECT_LT(pval(bad.out), 0.01) << bad.out;
  EXPECT_GT(pval(good.out), pval(bad.out)) << good.out;
}

TEST_F(Cli, SimulateSmokeAndSeedReproducible) {
  const fs::path sc = dir_ / "s.txt";
  std::ofstream(sc) << "scenario = 1\nn = 40\nseed = 3\n";
  const std::string base = "simulate --reps 2 --scenario " + sc.string() + " --out ";
  ASSERT_EQ(run(base + (dir_ / "a").string()).code, 0);
  ASSERT_EQ(run(base + (dir_ / "b").string() + " --threads 2").code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "a" / "summary.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "a" / "replications.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "summary.csv"), slurp(dir_ / "b" / "summary.csv"));
  ASSERT_EQ(run(base + (dir_ / "c").string() + " --seed 4").code, 0);
  EXPECT_NE(slurp(dir_ / "a" / "replications.csv"), slurp(dir_ / "c" / "replications.csv"));
}
