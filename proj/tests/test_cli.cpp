#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "attnflow/cli/run.hpp"

using namespace attnflow;
using namespace attnflow::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("attnflow_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Runs the built binary on `config_text`; returns its exit status.
int run_cli(const fs::path& dir, const std::string& config_text, const std::string& extra = "") {
  write_file(dir / "config.json", config_text);
  const std::string cmd = std::string("\"") + ATTNFLOW_CLI_PATH + "\" --config \"" + (dir / "config.json").string() +
                          "\" --out \"" + (dir / "out").string() + "\" " + extra + " > \"" +
                          (dir / "stdout.txt").string() + "\" 2> \"" + (dir / "stderr.txt").string() + "\"";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int parse_status(const std::string& text) {
  return guarded(
      [&] {
        (void)parse_config(json::parse(text));
        return 0;
      },
      std::cerr);
}

int run_status(const std::string& text, const fs::path& out) {
  std::ostringstream log, err;
  return guarded(
      [&] {
        RunConfig cfg = parse_config(json::parse(text));
        cfg.out_dir = out.string();
        return run_config(cfg, 2, log);
      },
      err);
}

std::vector<std::vector<double>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    rows.push_back(row);
  }
  return rows;
}

const char* kSimulate = R"({
  "schema_version": 1, "mode": "simulate",
  "params": {"reference": "distance-growing"},
  "integrator": {"h": 0.01, "T": 1.0, "record_stride": 10}
})";

}  // namespace

TEST(Config, MinimalSimulateDefaults) {
  const RunConfig cfg = parse_config(json::parse(kSimulate));
  EXPECT_EQ(cfg.mode, Mode::Simulate);
  EXPECT_EQ(cfg.integrator.h, 0.01);
  EXPECT_EQ(cfg.integrator.record_stride, 10u);
  EXPECT_TRUE(std::holds_alternative<NoEncoding>(cfg.posenc));
  EXPECT_EQ(cfg.out_dir, "out");
}

TEST(Config, RejectsUnknownKeysEverywhere) {
  EXPECT_EQ(parse_status(R"({"schema_version":1,"mode":"simulate","params":{"reference":"divergence"},"extra":1})"),
            kConfigError);
  EXPECT_EQ(parse_status(R"({"schema_version":1,"mode":"simulate","params":{"reference":"divergence"},
                              "integrator":{"T":1,"stepsize":0.1}})"),
            kConfigError);
  EXPECT_EQ(parse_status(R"({"schema_version":1,"mode":"simulate",
                              "params":{"scenario":{"kind":"convergence","dim":2,"sed":1}}})"),
            kConfigError);
}

TEST(Config, SchemaVersionIsChecked) {
  EXPECT_EQ(parse_status(R"({"mode":"simulate","params":{"reference":"divergence"}})"), kConfigError);
  EXPECT_EQ(parse_status(R"({"schema_version":2,"mode":"simulate","params":{"reference":"divergence"}})"),
            kConfigError);
  EXPECT_EQ(parse_status(R"({"schema_version":"1","mode":"simulate","params":{"reference":"divergence"}})"),
            kConfigError);
}

TEST(Config, ModeSectionsMustMatch) {
  EXPECT_EQ(parse_status(R"({"schema_version":1,"mode":"spectra"})"), kConfigError);
  EXPECT_EQ(parse_status(R"({"schema_version":1,"mode":"simulate","params":{"reference":"divergence"},
                              "verify":{"hull":1e-3}})"),
            kConfigError);
  EXPECT_EQ(parse_status(R"({"schema_version":1,"mode":"sweep","sweep":{"seed_count":3},
                              "params":{"reference":"divergence"}})"),
            kConfigError);
  EXPECT_EQ(parse_status(R"({"schema_version":1,"mode":"explore"})"), kConfigError);
}

TEST(Config, EmptySweepRangeIsConfigError) {
  EXPECT_EQ(parse_status(R"({"schema_version":1,"mode":"sweep","sweep":{"seed_count":0}})"), kConfigError);
  EXPECT_EQ(parse_status(R"({"schema_version":1,"mode":"sweep","sweep":{"seed_count":3}})"), 0);
}

TEST(Config, BadValuesAreConfigErrors) {
  EXPECT_EQ(parse_status(R"({"schema_version":1,"mode":"simulate","params":{"reference":"divergence"},
                              "integrator":{"h":-0.1}})"),
            kConfigError);
  EXPECT_EQ(parse_status(R"({"schema_version":1,"mode":"simulate","params":{"reference":"nope"}})"), kConfigError);
  EXPECT_EQ(parse_status(R"({"schema_version":1,"mode":"simulate",
                              "params":{"matrices":{"Q":[[1,0],[0,1]],"K":[[1,0],[0]],"V":[[1,0],[0,1]]}}})"),
            kConfigError);
  EXPECT_EQ(parse_status(R"({"schema_version":1,"mode":"simulate","params":{"reference":"divergence"},
                              "posenc":{"kind":"sinusoidal","P":[[0,0]]}})"),
            kConfigError);
}

TEST(Config, RotaryRequiresEvenDimension) {
  const fs::path dir = scratch("rotary_odd");
  const std::string text = R"({"schema_version":1,"mode":"simulate",
    "params":{"random":{"dim":3,"seed":1}},
    "posenc":{"kind":"rotary","Qbar":[[1,0,0],[0,1,0],[0,0,1]],"Kbar":[[1,0,0],[0,1,0],[0,0,1]]},
    "initial":{"random":{"tokens":2}}, "integrator":{"T":0.1}})";
  EXPECT_EQ(run_status(text, dir / "out"), kConfigError);
  EXPECT_EQ(run_cli(dir, text), kConfigError);
  EXPECT_NE(slurp(dir / "stderr.txt").find("even"), std::string::npos);
}

TEST(Config, RotaryMatricesFromOnePlaceOnly) {
  const fs::path dir = scratch("rotary_twice");
  EXPECT_EQ(run_status(R"({"schema_version":1,"mode":"simulate","params":{"reference":"rotary-shift-rope"},
    "posenc":{"kind":"rotary","Qbar":[[1,0],[0,1]],"Kbar":[[1,0],[0,1]]},"integrator":{"T":0.1}})",
                       dir / "out"),
            kConfigError);
  EXPECT_EQ(run_status(R"({"schema_version":1,"mode":"simulate","params":{"reference":"rotary-shift-rope"},
    "integrator":{"T":0.1}})",
                       dir / "out"),
            kConfigError);
}

TEST(Cli, MissingConfigFlagIsUsageError) {
  const std::string cmd = std::string("\"") + ATTNFLOW_CLI_PATH + "\" > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  EXPECT_EQ(WEXITSTATUS(status), kConfigError);
}

TEST(Cli, MalformedJsonIsConfigError) {
  const fs::path dir = scratch("malformed");
  EXPECT_EQ(run_cli(dir, "{\"schema_version\": 1,"), kConfigError);
}

TEST(Simulate, CsvRoundTripIsBitExact) {
  const fs::path dir = scratch("simulate");
  ASSERT_EQ(run_cli(dir, kSimulate), kOk);
  const auto set = reference::distance_growing();
  const Trajectory t = integrate(VanillaField::from(set.params), *set.initial, IntegratorConfig{0.01, 1.0, 10});
  const auto rows = read_csv(dir / "out" / "trajectory.csv");
  ASSERT_EQ(rows.size(), t.size() * 4);
  for (std::size_t k = 0; k < t.size(); ++k)
    for (std::size_t l = 0; l < 4; ++l) {
      const auto& r = rows[k * 4 + l];
      ASSERT_EQ(r.size(), 4u);
      EXPECT_EQ(r[0], t.times[k]);
      EXPECT_EQ(r[1], static_cast<double>(l));
      EXPECT_EQ(r[2], t.states[k](l, 0));
      EXPECT_EQ(r[3], t.states[k](l, 1));
    }
  EXPECT_EQ(read_csv(dir / "out" / "metrics.csv").size(), t.size());
  const json summary = json::parse(slurp(dir / "out" / "run.json"));
  EXPECT_EQ(summary["terminated"], "horizon");
  EXPECT_EQ(summary["samples"], t.size());
}

TEST(Simulate, SingleTokenMatchesMatrixExponential) {
  const fs::path dir = scratch("single_token");
  const std::string text = R"({"schema_version":1,"mode":"simulate",
    "params":{"matrices":{"Q":[[0.3,-0.2],[0.5,0.1]],"K":[[1,0],[0,1]],"V":[[-0.4,0.9],[-0.7,0.2]],"Dk":1}},
    "initial":{"rows":[[1.0,-0.5]]}, "integrator":{"h":0.001,"T":2.0,"record_stride":2000}})";
  ASSERT_EQ(run_cli(dir, text), kOk);
  const auto rows = read_csv(dir / "out" / "trajectory.csv");
  ASSERT_EQ(rows.size(), 2u);
  const Vect oracle = matexp(2.0 * Mat{{-0.4, 0.9}, {-0.7, 0.2}}.transpose()) * Vect{1.0, -0.5};
  EXPECT_NEAR(rows[1][2], oracle[0], 1e-6);
  EXPECT_NEAR(rows[1][3], oracle[1], 1e-6);
}

TEST(Simulate, MatrixFilesResolveRelativeToConfig) {
  const fs::path dir = scratch("matrix_files");
  write_file(dir / "v.txt", "# value matrix\n2 2\n2 0\n0 2\n");
  const std::string text = R"({"schema_version":1,"mode":"simulate",
    "params":{"matrices":{"Q":[[1,0],[0,1]],"K":[[1,0],[0,1]],"V":"v.txt"}},
    "integrator":{"T":20,"record_stride":50}})";
  ASSERT_EQ(run_cli(dir, text), kOk);
  const json summary = json::parse(slurp(dir / "out" / "run.json"));
  EXPECT_EQ(summary["terminated"], "blowup");
  EXPECT_EQ(summary["regime"], "diverged");
}

TEST(Simulate, BadMatrixFileNamesLine) {
  const fs::path dir = scratch("bad_matrix");
  write_file(dir / "v.txt", "2 2\n1 0\n0 x\n");
  const std::string text = R"({"schema_version":1,"mode":"simulate",
    "params":{"matrices":{"Q":[[1,0],[0,1]],"K":[[1,0],[0,1]],"V":"v.txt"}}})";
  EXPECT_EQ(run_cli(dir, text), kConfigError);
  EXPECT_NE(slurp(dir / "stderr.txt").find("v.txt:3"), std::string::npos) << slurp(dir / "stderr.txt");
}

TEST(Verify, SingularValueMatrixIsMathError) {
  const fs::path dir = scratch("singular");
  const std::string text = R"({"schema_version":1,"mode":"verify",
    "params":{"matrices":{"Q":[[1,0],[0,1]],"K":[[1,0],[0,1]],"V":[[1,1],[1,1]]}},
    "integrator":{"T":0.5}})";
  EXPECT_EQ(run_cli(dir, text), kMathError);
  EXPECT_NE(slurp(dir / "stderr.txt").find("math error"), std::string::npos);
}

TEST(Verify, ValueTwoIdentityOneSidedPasses) {
  const fs::path dir = scratch("verify_v2");
  const std::string text = R"({"schema_version":1,"mode":"verify",
    "params":{"reference":"divergence"},
    "initial":{"rows":[[0.5,1.0],[1.2,-0.3],[0.2,0.4],[2.0,-1.5]]},
    "integrator":{"h":0.01,"T":8}})";
  ASSERT_EQ(run_cli(dir, text), kOk) << slurp(dir / "stdout.txt");
  const std::string csv = slurp(dir / "out" / "report.csv");
  EXPECT_NE(csv.find("divergence-projection,pass"), std::string::npos) << csv;
  EXPECT_NE(csv.find("hull-containment,pass"), std::string::npos) << csv;
  EXPECT_NE(slurp(dir / "out" / "report.txt").find("VERIFY PASS"), std::string::npos);
}

TEST(Verify, FailedCheckExitsOne) {
  const fs::path dir = scratch("verify_fail");
  const std::string text = R"({"schema_version":1,"mode":"verify",
    "params":{"reference":"divergence"},
    "initial":{"rows":[[0.5,1.0],[1.2,-0.3]]},
    "integrator":{"h":0.01,"T":3}, "verify":{"hull":-1.0}})";
  EXPECT_EQ(run_cli(dir, text), kFailed);
}

TEST(Sweep, DeterministicAcrossJobCounts) {
  const fs::path a = scratch("sweep_a"), b = scratch("sweep_b");
  const std::string text = R"({"schema_version":1,"mode":"sweep",
    "sweep":{"scenario":"divergence","dim":2,"seed_start":0,"seed_count":6,"tokens":3},
    "integrator":{"T":5}})";
  ASSERT_EQ(run_cli(a, text, "--jobs 1"), kOk);
  ASSERT_EQ(run_cli(b, text, "--jobs 4"), kOk);
  EXPECT_EQ(slurp(a / "out" / "sweep.csv"), slurp(b / "out" / "sweep.csv"));
  EXPECT_EQ(read_csv(a / "out" / "sweep.csv").size(), 6u);
  EXPECT_NE(slurp(a / "out" / "summary.csv").find("all"), std::string::npos);
}

TEST(Spectra, IdentityValueMatrix) {
  const fs::path dir = scratch("spectra_identity");
  const std::string text = R"({"schema_version":1,"mode":"spectra",
    "spectra":{"eps":1e-3,"sets":[{"label":"id","Q":[[1,0],[0,1]],"K":[[1,0],[0,1]],"V":[[1,0],[0,1]]}]}})";
  ASSERT_EQ(run_cli(dir, text), kOk);
  const std::string csv = slurp(dir / "out" / "spectra.csv");
  EXPECT_NE(csv.find("id,100,100,0,"), std::string::npos) << csv;
}

TEST(Spectra, SingularValueMatrixCountedNotFatal) {
  const fs::path dir = scratch("spectra_singular");
  const std::string text = R"({"schema_version":1,"mode":"spectra",
    "spectra":{"sets":[{"label":"sing","Q":[[1,0],[0,1]],"K":[[1,0],[0,1]],"V":[[1,0],[0,0]]},
                       {"label":"id","Q":[[1,0],[0,1]],"K":[[1,0],[0,1]],"V":[[1,0],[0,1]]}]}})";
  ASSERT_EQ(run_cli(dir, text), kOk);
  const std::string csv = slurp(dir / "out" / "spectra.csv");
  EXPECT_NE(csv.find("sing,100,,50,singular V"), std::string::npos) << csv;
  const std::string summary = slurp(dir / "out" / "spectra_summary.csv");
  EXPECT_NE(summary.find("pct_pos_asym,100,0,1"), std::string::npos) << summary;
  EXPECT_NE(slurp(dir / "stdout.txt").find("1 singular V skipped"), std::string::npos);
}

TEST(Spectra, ParseErrorNamesFileAndLine) {
  const fs::path dir = scratch("spectra_parse");
  write_file(dir / "q.txt", "2 2\n1 0\n\n0 1 7\n");
  const std::string text = R"({"schema_version":1,"mode":"spectra",
    "spectra":{"sets":[{"Q":"q.txt","K":[[1,0],[0,1]],"V":[[1,0],[0,1]]}]}})";
  EXPECT_EQ(run_cli(dir, text), kConfigError);
  EXPECT_NE(slurp(dir / "stderr.txt").find("q.txt:4"), std::string::npos) << slurp(dir / "stderr.txt");
}

TEST(SampleConfigs, AllParse) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(ATTNFLOW_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    ++n;
    EXPECT_NO_THROW((void)load_config(e.path())) << e.path();
  }
  EXPECT_GE(n, 4u);
}
