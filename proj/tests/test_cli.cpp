#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "straightflow/cli/commands.hpp"

using namespace straightflow;
using namespace straightflow::cli;
namespace fs = std::filesystem;

namespace {

const char* kDeterministic = R"({
  "process": {
    "coefficients": "affine",
    "coupling": {
      "kind": "deterministic_map",
      "mu0": {"family": "gaussian", "mean": [0.0], "cov": [[1.0]]},
      "map": {"A": [[2.0]], "b": [0.0]}
    }
  },
  "n": 20000,
  "seed": 3,
  "times": [0.5],
  "grid": {"nodes": 21},
  "trace_queries": 500
})";

const char* kIndependent = R"({
  "process": {
    "coefficients": "affine",
    "coupling": {
      "kind": "independent",
      "mu0": {"family": "gaussian", "mean": [0.0], "cov": [[1.0]]},
      "mu1": {"family": "gaussian", "mean": [0.0], "cov": [[1.0]]}
    }
  },
  "n": 20000,
  "seed": 3,
  "times": [0.5],
  "grid": {"nodes": 21},
  "trace_queries": 500
})";

const char* kEmpirical = R"({
  "process": {
    "coefficients": "affine",
    "coupling": {
      "kind": "independent",
      "mu0": {"family": "gaussian", "mean": [0.0], "cov": [[1.0]]},
      "mu1": {"family": "empirical", "points": [[-1.0], [1.0]]}
    }
  },
  "n": 2000
})";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("straightflow_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string config(const std::string& text) {
    const auto p = dir_ / "config.json";
    std::ofstream(p) << text;
    return p.string();
  }

  int run_cli(std::vector<std::string> args) {
    const std::string out_dir = (dir_ / "out").string();
    args.insert(args.begin(), "straightflow");
    args.push_back("--output");
    args.push_back(out_dir);
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    out_.str("");
    err_.str("");
    return run(static_cast<int>(argv.size()), argv.data(), out_, err_);
  }

  std::string slurp(const std::string& name) const {
    std::ifstream in(dir_ / "out" / name);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir_;
  std::ostringstream out_;
  std::ostringstream err_;
};

std::string parse_error(const std::string& text) {
  try {
    parse_config(text, "cfg.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, Defaults) {
  const auto c = parse_config(kIndependent, "cfg.json");
  EXPECT_EQ(c.n, 20000u);
  EXPECT_EQ(c.time_steps, 100u);
  EXPECT_EQ(c.source, "oracle");
  EXPECT_EQ(c.theorem, "affine");
  EXPECT_EQ(c.grid_nodes, 21u);
  EXPECT_DOUBLE_EQ(c.tol.momentum, 1e-3);
  EXPECT_EQ(c.flow.scheme, Scheme::rk4);
}

TEST(Config, UnknownTopLevelKeyReportsLine) {
  const std::string text = "{\n  \"process\": {\"coefficients\": \"affine\", \"coupling\": {\"kind\": \"independent\",\n"
                           "    \"mu0\": {\"family\": \"gaussian\", \"mean\": [0], \"cov\": [[1]]},\n"
                           "    \"mu1\": {\"family\": \"gaussian\", \"mean\": [0], \"cov\": [[1]]}}},\n"
                           "  \"sede\": 4\n}";
  const auto msg = parse_error(text);
  EXPECT_NE(msg.find("cfg.json:5:"), std::string::npos) << msg;
  EXPECT_NE(msg.find("/sede"), std::string::npos) << msg;
}

TEST(Config, NegativeBandwidthPointsAtField) {
  const std::string text = "{\n  \"process\": {\"coefficients\": \"affine\", \"coupling\": {\"kind\": \"independent\",\n"
                           "    \"mu0\": {\"family\": \"gaussian\", \"mean\": [0], \"cov\": [[1]]},\n"
                           "    \"mu1\": {\"family\": \"gaussian\", \"mean\": [0], \"cov\": [[1]]}}},\n"
                           "  \"kernel\": {\n    \"bandwidth\": -0.2\n  }\n}";
  const auto msg = parse_error(text);
  EXPECT_NE(msg.find("cfg.json:6: /kernel/bandwidth:"), std::string::npos) << msg;
}

TEST(Config, NestedLawErrorPointsAtCovariance) {
  const std::string text = "{\n  \"process\": {\n    \"coefficients\": \"affine\",\n    \"coupling\": {\n"
                           "      \"kind\": \"independent\",\n"
                           "      \"mu0\": {\"family\": \"gaussian\", \"mean\": [0], \"cov\": [[1]]},\n"
                           "      \"mu1\": {\"family\": \"gaussian\", \"mean\": [0],\n        \"cov\": [[-1]]}\n"
                           "    }\n  }\n}";
  const auto msg = parse_error(text);
  EXPECT_NE(msg.find("cfg.json:8:"), std::string::npos) << msg;
  EXPECT_NE(msg.find("/process/coupling/mu1"), std::string::npos) << msg;
}

TEST(Config, SchemeTypo) {
  std::string text = kIndependent;
  text.insert(text.rfind('}'), ", \"flow\": {\"scheme\": \"rk5\"}");
  EXPECT_NE(parse_error(text).find("/flow/scheme"), std::string::npos);
}

TEST(Config, MalformedJsonReportsLine) {
  EXPECT_NE(parse_error("{\n  \"n\": 1,\n  oops\n}").find("cfg.json:3:"), std::string::npos);
}

TEST(Config, MissingProcess) { EXPECT_NE(parse_error("{\"n\": 5}").find("/process"), std::string::npos); }

TEST(Config, ShippedConfigsParse) {
  for (const auto& e : fs::directory_iterator(STRAIGHTFLOW_CONFIG_DIR)) {
    if (e.path().extension() == ".json") {
      EXPECT_NO_THROW(load_config(e.path().string())) << e.path();
    }
  }
}

TEST_F(Cli, MissingConfigFlagIsUsageError) { EXPECT_EQ(run_cli({"simulate"}), kExitConfig); }

TEST_F(Cli, UnknownSubcommand) { EXPECT_EQ(run_cli({"frobnicate", "--config", config(kIndependent)}), kExitConfig); }

TEST_F(Cli, NegativeBandwidthFlag) {
  EXPECT_EQ(run_cli({"fields", "--config", config(kIndependent), "--bandwidth", "-1"}), kExitConfig);
  EXPECT_NE(err_.str().find("--bandwidth"), std::string::npos);
}

TEST_F(Cli, SchemeTypoFlag) {
  EXPECT_EQ(run_cli({"flow", "--config", config(kIndependent), "--scheme", "rk5"}), kExitConfig);
  EXPECT_NE(err_.str().find("--scheme"), std::string::npos);
}

TEST_F(Cli, OracleForEmpiricalIsCapabilityError) {
  EXPECT_EQ(run_cli({"fields", "--config", config(kEmpirical), "--source", "oracle"}), kExitCapability);
}

TEST_F(Cli, EstimateForEmpiricalWorks) {
  EXPECT_EQ(run_cli({"fields", "--config", config(kEmpirical), "--source", "estimate", "--grid-nodes", "11"}), kExitOk);
  EXPECT_NE(slurp("rho.csv").find("x1,rho"), std::string::npos);
}

TEST_F(Cli, AffineTheoremOnTrigIsConfigError) {
  std::string text = kIndependent;
  text.replace(text.find("\"affine\""), 8, "\"trig\"");
  EXPECT_EQ(run_cli({"verify", "--config", config(text), "--theorem", "affine"}), kExitConfig);
}

TEST_F(Cli, VerifyExitCodes) {
  EXPECT_EQ(run_cli({"verify", "--config", config(kDeterministic)}), kExitOk);
  EXPECT_EQ(run_cli({"verify", "--config", config(kIndependent)}), kExitViolated);
  EXPECT_EQ(run_cli({"verify", "--config", config(kDeterministic), "--n", "50"}), kExitInconclusive);
  const auto report = json::parse(slurp("report.json"));
  EXPECT_EQ(report["verdict"], "inconclusive");
}

TEST_F(Cli, ManifestListsFilesAndFlags) {
  ASSERT_EQ(run_cli({"simulate", "--config", config(kIndependent), "--n", "100", "--time-steps", "4"}), kExitOk);
  const auto m = json::parse(slurp("manifest.json"));
  EXPECT_EQ(m["command"], "simulate");
  EXPECT_EQ(m["flags"]["n"], 100);
  EXPECT_EQ(m["files"][0], "ensemble.sflw");
  EXPECT_EQ(m["config_sha256"], sha256_hex(kIndependent));
  EXPECT_EQ(slurp("ensemble.sflw").size(), 29u + 3u * 100u * 5u * 8u);
}

TEST_F(Cli, DiagnoseWritesAllSections) {
  ASSERT_EQ(run_cli({"diagnose", "--config", config(kIndependent), "--grid-nodes", "41"}), kExitOk);
  const auto d = json::parse(slurp("diagnostics.json"));
  for (const char* k : {"continuity", "momentum", "balance", "material"}) EXPECT_TRUE(d.contains(k)) << k;
  EXPECT_TRUE(d["momentum"]["within_tolerance"].get<bool>());
}

TEST_F(Cli, FlowWritesTrajectories) {
  ASSERT_EQ(run_cli({"flow", "--config", config(kDeterministic), "--steps", "10", "--n", "200"}), kExitOk);
  const auto s = json::parse(slurp("straightness.json"));
  EXPECT_LT(s["chord_dev_max"].get<double>(), 1e-10);
  EXPECT_EQ(slurp("trajectories.csv").rfind("point,t,x1\n", 0), 0u);
}

TEST_F(Cli, SweepEmptyValues) {
  EXPECT_EQ(run_cli({"sweep", "--config", config(kIndependent), "--param", "n", "--values", ""}), kExitConfig);
}

TEST_F(Cli, SweepUnknownParam) {
  EXPECT_EQ(run_cli({"sweep", "--config", config(kIndependent), "--param", "gamma", "--values", "1"}), kExitConfig);
}

TEST_F(Cli, SweepLongFormat) {
  ASSERT_EQ(run_cli({"sweep", "--config", config(kIndependent), "--param", "seed", "--values", "1,2"}), kExitOk);
  const auto csv = slurp("sweep.csv");
  EXPECT_EQ(csv.rfind("param,value,seed,metric,result\n", 0), 0u);
  EXPECT_NE(csv.find("seed,-,1,trace_pi,"), std::string::npos);
  EXPECT_NE(csv.find("seed,-,2,v_rmse,"), std::string::npos);
}
