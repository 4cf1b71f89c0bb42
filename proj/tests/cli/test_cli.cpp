#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "fanhmm/fanhmm.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "fanhmm_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunResult run_cli(const std::string& args, const fs::path& dir) {
  const std::string cmd = std::string("\"") + FANHMM_CLI_PATH + "\" " + args + " > \"" +
                          (dir / "stdout.txt").string() + "\" 2> \"" +
                          (dir / "stderr.txt").string() + "\"";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(dir / "stdout.txt");
  r.err = slurp(dir / "stderr.txt");
  return r;
}

json example_config() {
  json cfg = json::parse(slurp(fs::path(FANHMM_SOURCE_DIR) / "configs" / "leave_example.json"));
  cfg["data"]["path"] = (fs::path(FANHMM_SOURCE_DIR) / "data" / "leave_example.csv").string();
  cfg["fit"]["starts"] = 2;
  cfg.erase("out_dir");
  return cfg;
}

fs::path write_config(const fs::path& dir, const json& cfg) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << cfg.dump(2);
  return p;
}

}  // namespace

TEST_CASE("validate reports a duplicate (id, time) with exit code 1") {
  const fs::path dir = scratch("duplicate");
  std::ofstream(dir / "data.csv") << "id,time,y,x\n1,1,a,0.5\n1,2,b,0.1\n7,1,a,0.0\n7,1,b,1.0\n";
  json cfg;
  cfg["data"] = {{"path", "data.csv"}, {"covariates", {"x"}}};
  cfg["model"] = {{"states", 2}, {"initial", json::array()}, {"transition", {"x"}},
                  {"emission", json::array()}};
  const fs::path conf = write_config(dir, cfg);
  const RunResult r = run_cli("validate --config \"" + conf.string() + "\"", dir);
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("(7, 1)") != std::string::npos);
  CHECK(r.err.find("duplicate") != std::string::npos);
}

TEST_CASE("validation errors name the offending field") {
  const fs::path dir = scratch("fields");
  json cfg = example_config();
  cfg.erase("data");
  RunResult r = run_cli("fit --config \"" + write_config(dir, cfg).string() + "\"", dir);
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("data") != std::string::npos);

  cfg = example_config();
  cfg["fit"]["lambda"] = -1;
  r = run_cli("validate --config \"" + write_config(dir, cfg).string() + "\"", dir);
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("lambda") != std::string::npos);

  cfg = example_config();
  cfg["model"]["emission"] = {"reform", "nope"};
  r = run_cli("validate --config \"" + write_config(dir, cfg).string() + "\"", dir);
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("nope") != std::string::npos);

  r = run_cli("validate --config \"" + (dir / "missing.json").string() + "\"", dir);
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("--config") != std::string::npos);

  CHECK(run_cli("frobnicate", dir).exit_code == 1);
}

TEST_CASE("fit on the packaged example re-evaluates to the reported loglik") {
  const fs::path dir = scratch("fit");
  const fs::path conf = write_config(dir, example_config());
  const RunResult r =
      run_cli("fit --config \"" + conf.string() + "\" --out-dir \"" + (dir / "out").string() + "\"", dir);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("penalized loglik") != std::string::npos);
  const json model = json::parse(slurp(dir / "out" / "model.json"));
  CHECK(model["format_version"] == 1);
  const double reported = model["fit"]["penalized_loglik"].get<double>();
  const double lambda = model["fit"]["options"]["lambda"].get<double>();

  fanhmm_model* m = nullptr;
  fanhmm_dataset* d = nullptr;
  REQUIRE(fanhmm_model_from_json(model.dump().c_str(), &m) == FANHMM_OK);
  const json schema = example_config()["data"];
  REQUIRE(fanhmm_dataset_load(schema["path"].get<std::string>().c_str(), schema.dump().c_str(), &d) ==
          FANHMM_OK);
  double pen = 0.0, ll = 0.0;
  REQUIRE(fanhmm_model_loglik(m, d, lambda, &pen, &ll) == FANHMM_OK);
  CHECK(std::abs(pen - reported) <= 1e-10 * std::abs(reported));
  fanhmm_model_free(m);
  fanhmm_dataset_free(d);

  const std::string starts = slurp(dir / "out" / "fit_starts.csv");
  CHECK(starts.rfind("start,penalized_loglik", 0) == 0);
}

TEST_CASE("ace with identical plans writes an all-zero effect") {
  const fs::path dir = scratch("ace");
  json cfg = example_config();
  const fs::path out = dir / "out";
  REQUIRE(run_cli("fit --config \"" + write_config(dir, cfg).string() + "\" --out-dir \"" +
                      out.string() + "\"",
                  dir)
              .exit_code == 0);
  cfg["plans"]["control"] = cfg["plans"]["treat"];
  const RunResult r = run_cli(
      "ace --config \"" + write_config(dir, cfg).string() + "\" --out-dir \"" + out.string() + "\"", dir);
  REQUIRE(r.exit_code == 0);
  std::istringstream csv(slurp(out / "ace.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "time,horizon,category,ace,treat,control");
  int rows = 0;
  while (std::getline(csv, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    REQUIRE(f.size() == 6);
    CHECK(std::stod(f[3]) == 0.0);
    CHECK(f[4] == f[5]);
    ++rows;
  }
  CHECK(rows == 4 * 3);
}

TEST_CASE("seed override and thread count keep simulate outputs reproducible") {
  const fs::path dir = scratch("simulate");
  json cfg;
  cfg["simulate"] = {{"preset", "default"}, {"N", 20}, {"T", 6}, {"missing_rate", 0.2}};
  const std::string conf = write_config(dir, cfg).string();
  const auto sim = [&](const std::string& extra, const std::string& sub) {
    const fs::path out = dir / sub;
    REQUIRE(run_cli("simulate --config \"" + conf + "\" --out-dir \"" + out.string() + "\" " + extra, dir)
                .exit_code == 0);
    return slurp(out / "data.csv");
  };
  const std::string a = sim("--seed 5 --threads 1", "a");
  CHECK(a == sim("--seed 5 --threads 1", "b"));
  CHECK(a == sim("--seed 5 --threads 2", "c"));
  CHECK(a != sim("--seed 6 --threads 1", "d"));
  CHECK(a.find("NA") != std::string::npos);
  CHECK(a.rfind("id,time,y,x,state", 0) == 0);
}
