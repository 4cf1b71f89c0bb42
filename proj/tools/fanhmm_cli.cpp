// fanhmm command line front end. Every subcommand reads a run config (JSON),
// calls the C API and writes machine-readable outputs under --out-dir.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fanhmm/fanhmm.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CliFailure {
  int exit_code;
  std::string message;
};

int exit_code_for(fanhmm_status s) {
  switch (s) {
    case FANHMM_OK: return 0;
    case FANHMM_ERR_NUMERIC:
    case FANHMM_ERR_COMPUTE:
    case FANHMM_ERR_INTERNAL: return 2;
    default: return 1;
  }
}

void check(fanhmm_status s, const std::string& what) {
  if (s != FANHMM_OK)
    throw CliFailure{exit_code_for(s),
                     what + " failed [" + fanhmm_status_name(s) + "]: " + fanhmm_last_error()};
}

// Owning wrappers over the C handles.
struct Dataset {
  fanhmm_dataset* h = nullptr;
  ~Dataset() { fanhmm_dataset_free(h); }
};
struct Model {
  fanhmm_model* h = nullptr;
  ~Model() { fanhmm_model_free(h); }
};

json take_json(char* text) {
  json j = json::parse(text);
  fanhmm_string_free(text);
  return j;
}

std::string num(double v) {
  if (v != v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string num(const json& v) { return v.is_number() ? num(v.get<double>()) : "NA"; }

struct Run {
  json config;
  fs::path config_dir;
  fs::path out_dir;

  fs::path input(const std::string& path) const {
    fs::path p(path);
    return p.is_relative() ? config_dir / p : p;
  }

  const json& section(const char* name) const {
    if (!config.contains(name))
      throw CliFailure{1, std::string(name) + ": required config section is missing"};
    return config[name];
  }

  std::ofstream open(const std::string& name) const {
    fs::create_directories(out_dir);
    std::ofstream out(out_dir / name);
    if (!out) throw CliFailure{1, "out_dir: cannot write " + (out_dir / name).string()};
    return out;
  }

  void write_json(const std::string& name, const json& j) const {
    auto out = open(name);
    out << j.dump(2) << '\n';
  }

  void load_data(Dataset& d) const {
    const json& data = section("data");
    if (!data.contains("path") || !data["path"].is_string())
      throw CliFailure{1, "data.path: required string"};
    check(fanhmm_dataset_load(input(data["path"].get<std::string>()).string().c_str(),
                              data.dump().c_str(), &d.h),
          "loading data");
  }

  void load_model(Model& m) const {
    fs::path path = config.contains("model_path") ? input(config["model_path"].get<std::string>())
                                                  : out_dir / "model.json";
    std::ifstream in(path);
    if (!in) throw CliFailure{1, "model_path: cannot read " + path.string()};
    std::stringstream ss;
    ss << in.rdbuf();
    check(fanhmm_model_from_json(ss.str().c_str(), &m.h), "reading " + path.string());
  }
};

json read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CliFailure{1, "--config: cannot read " + path};
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw CliFailure{1, "--config: invalid JSON in " + path + " (" + e.what() + ")"};
  }
}

// Seeds: --seed overrides every section; a top-level "seed" fills sections
// that do not set their own.
void apply_seed(json& cfg, std::optional<std::uint64_t> flag) {
  std::optional<std::uint64_t> top = flag;
  if (!top && cfg.contains("seed")) {
    if (!cfg["seed"].is_number_unsigned())
      throw CliFailure{1, "config.seed: expected a non-negative integer"};
    top = cfg["seed"].get<std::uint64_t>();
  }
  if (!top) return;
  cfg["seed"] = *top;
  for (const char* name : {"fit", "bootstrap", "simulate", "experiment"}) {
    if (!cfg.contains(name)) {
      if (std::string(name) == "fit" || std::string(name) == "bootstrap") cfg[name] = json::object();
      else continue;
    }
    if (!cfg[name].is_object()) continue;
    if (flag || !cfg[name].contains("seed")) cfg[name]["seed"] = *top;
  }
  // Bootstrap refits inherit the fit section.
  if (cfg.contains("fit") && cfg["bootstrap"].is_object() && !cfg["bootstrap"].contains("fit"))
    cfg["bootstrap"]["fit"] = cfg["fit"];
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Run& run) {
  Dataset d;
  Model truth;
  check(fanhmm_simulate(run.section("simulate").dump().c_str(), &d.h, &truth.h), "simulate");
  const fs::path csv = run.out_dir / "data.csv";
  fs::create_directories(run.out_dir);
  check(fanhmm_dataset_write(d.h, csv.string().c_str(), nullptr, 1), "writing data");
  char* text = nullptr;
  check(fanhmm_model_to_json(truth.h, &text), "serializing truth");
  run.write_json("truth_model.json", take_json(text));
  check(fanhmm_dataset_info(d.h, &text), "dataset info");
  const json info = take_json(text);
  std::cout << "simulated " << info["sequences"] << " sequences, " << info["observations"]
            << " observed and " << info["missing"] << " missing responses\n"
            << "wrote " << csv.string() << " and " << (run.out_dir / "truth_model.json").string()
            << '\n';
  return 0;
}

int cmd_fit(const Run& run) {
  Dataset d;
  run.load_data(d);
  Model m;
  char* report_text = nullptr;
  const json fit = run.config.contains("fit") ? run.config["fit"] : json::object();
  check(fanhmm_fit(d.h, run.section("model").dump().c_str(), fit.dump().c_str(), &m.h,
                   &report_text),
        "fit");
  const json report = take_json(report_text);
  char* text = nullptr;
  check(fanhmm_model_to_json(m.h, &text), "serializing model");
  const json model = take_json(text);
  run.write_json("model.json", model);

  auto out = run.open("fit_starts.csv");
  out << "start,penalized_loglik,loglik,converged,success,failed,em_iterations,qn_iterations,"
         "status\n";
  for (const auto& s : report["starts"]) {
    out << s["start"].get<int>() + 1 << ',' << num(s["penalized_loglik"]) << ','
        << num(s["loglik"]) << ',' << s["converged"].get<bool>() << ','
        << s["success"].get<bool>() << ',' << s["failed"].get<bool>() << ','
        << s["em_iterations"] << ',' << s["qn_iterations"] << ','
        << s["status"].get<std::string>() << '\n';
  }

  // Re-evaluate from the serialized model.
  Model reread;
  check(fanhmm_model_from_json(model.dump().c_str(), &reread.h), "re-reading model");
  const double lambda = model["fit"]["options"]["lambda"].get<double>();
  double pen = 0, ll = 0;
  check(fanhmm_model_loglik(reread.h, d.h, lambda, &pen, &ll), "re-evaluating loglik");
  const json& f = model["fit"];
  std::cout << "best of " << f["starts"] << " starts (start " << f["best_start"].get<int>() + 1
            << "), success rate " << num(f["success_rate"]) << '\n'
            << "penalized loglik " << num(f["penalized_loglik"]) << " (re-evaluated "
            << num(pen) << "), loglik " << num(ll) << ", converged "
            << (f["converged"].get<bool>() ? "yes" : "no") << '\n'
            << "wrote " << (run.out_dir / "model.json").string() << '\n';
  return 0;
}

void write_ace_csv(std::ofstream& out, const json& ace) {
  out << "time,horizon,category,ace,treat,control\n";
  for (const auto& h : ace) {
    const auto& labels = h["categories"];
    for (std::size_t m = 0; m < labels.size(); ++m) {
      out << h["time"] << ',' << h["horizon"] << ',' << labels[m].get<std::string>() << ','
          << num(h["ace"][m]) << ',' << num(h["treat"]["y_marginal"][m]) << ','
          << num(h["control"]["y_marginal"][m]) << '\n';
    }
  }
}

int cmd_ace(const Run& run) {
  Dataset d;
  run.load_data(d);
  Model m;
  run.load_model(m);
  const json& plans = run.section("plans");
  if (!plans.contains("treat") || !plans.contains("control"))
    throw CliFailure{1, "plans: treat and control are required"};
  char* text = nullptr;
  check(fanhmm_ace(m.h, d.h, plans["treat"].dump().c_str(), plans["control"].dump().c_str(), &text),
        "ace");
  const json ace = take_json(text);
  run.write_json("ace.json", ace);
  auto out = run.open("ace.csv");
  write_ace_csv(out, ace);
  for (const auto& h : ace) {
    std::cout << "time " << h["time"] << " (horizon " << h["horizon"] << "):";
    for (std::size_t k = 0; k < h["ace"].size(); ++k)
      std::cout << ' ' << h["categories"][k].get<std::string>() << '=' << num(h["ace"][k]);
    std::cout << '\n';
  }
  std::cout << "wrote " << (run.out_dir / "ace.csv").string() << '\n';
  return 0;
}

int cmd_bootstrap(const Run& run) {
  Dataset d;
  run.load_data(d);
  Model m;
  run.load_model(m);
  const json& plans = run.section("plans");
  if (!plans.contains("treat") || !plans.contains("control"))
    throw CliFailure{1, "plans: treat and control are required"};
  const json opts = run.config.contains("bootstrap") ? run.config["bootstrap"] : json::object();
  char* text = nullptr;
  check(fanhmm_bootstrap(m.h, d.h, plans["treat"].dump().c_str(),
                         plans["control"].dump().c_str(), opts.dump().c_str(), &text),
        "bootstrap");
  const json boot = take_json(text);
  run.write_json("bootstrap.json", boot);
  auto out = run.open("bootstrap_ci.csv");
  out << "time,horizon,category,estimate,lower,upper\n";
  for (const auto& h : boot["horizons"]) {
    for (std::size_t k = 0; k < h["categories"].size(); ++k)
      out << h["time"] << ',' << h["horizon"] << ',' << h["categories"][k].get<std::string>()
          << ',' << num(h["estimate"][k]) << ',' << num(h["lower"][k]) << ','
          << num(h["upper"][k]) << '\n';
  }
  std::cout << "kept " << boot["kept"] << " replicates, dropped " << boot["dropped"]
            << (boot["unreliable"].get<bool>() ? " (unreliable: more than 20% dropped)" : "")
            << '\n';
  for (const auto& h : boot["horizons"]) {
    std::cout << "time " << h["time"] << ':';
    for (std::size_t k = 0; k < h["categories"].size(); ++k)
      std::cout << ' ' << h["categories"][k].get<std::string>() << '=' << num(h["estimate"][k])
                << " [" << num(h["lower"][k]) << ", " << num(h["upper"][k]) << ']';
    std::cout << '\n';
  }
  std::cout << "wrote " << (run.out_dir / "bootstrap_ci.csv").string() << '\n';
  return 0;
}

int cmd_experiment_multistart(const Run& run) {
  char* text = nullptr;
  check(fanhmm_experiment_multistart(run.config.dump().c_str(), &text), "experiment-multistart");
  const json rep = take_json(text);
  run.write_json("multistart.json", rep);
  auto out = run.open("multistart.csv");
  out << "states,lambda,method,runs,successes,failures,success_rate,best_loglik\n";
  for (const auto& r : rep["rows"]) {
    out << r["states"] << ',' << num(r["lambda"]) << ',' << r["method"].get<std::string>() << ','
        << r["runs"] << ',' << r["successes"] << ',' << r["failures"] << ','
        << num(r["success_rate"]) << ',' << num(r["best_loglik"]) << '\n';
    std::cout << "S=" << r["states"] << " lambda=" << num(r["lambda"]) << ' '
              << r["method"].get<std::string>() << ": " << r["successes"] << '/' << r["runs"]
              << " successful\n";
  }
  std::cout << "wrote " << (run.out_dir / "multistart.csv").string() << '\n';
  return 0;
}

int cmd_experiment_coverage(const Run& run) {
  char* text = nullptr;
  check(fanhmm_experiment_coverage(run.config.dump().c_str(), &text), "experiment-coverage");
  const json rep = take_json(text);
  run.write_json("coverage.json", rep);
  auto cells = run.open("coverage_cells.csv");
  cells << "states,horizon,category,truth,rmse,bias,coverage,replications\n";
  for (const auto& c : rep["cells"])
    cells << c["states"] << ',' << c["horizon"] << ',' << c["category"] << ','
          << num(c["truth"]) << ',' << num(c["rmse"]) << ',' << num(c["bias"]) << ','
          << num(c["coverage"]) << ',' << c["replications"] << '\n';
  auto summary = run.open("coverage_summary.csv");
  summary << "states,rmse,coverage,replications,unreliable\n";
  for (const auto& s : rep["summary"]) {
    summary << s["states"] << ',' << num(s["rmse"]) << ',' << num(s["coverage"]) << ','
            << s["replications"] << ',' << s["unreliable"] << '\n';
    std::cout << "S=" << s["states"] << ": rmse " << num(s["rmse"]) << ", coverage "
              << num(s["coverage"]) << " over " << s["replications"] << " replications\n";
  }
  std::cout << "wrote " << (run.out_dir / "coverage_summary.csv").string() << '\n';
  return 0;
}

int cmd_validate(const Run& run) {
  char* text = nullptr;
  check(fanhmm_validate_config(run.config.dump().c_str(), run.config_dir.string().c_str(), &text),
        "validate");
  const json rep = take_json(text);
  std::cout << "config is valid; checked:";
  for (const auto& s : rep["checked"]) std::cout << ' ' << s.get<std::string>();
  std::cout << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fanhmm: feedback-augmented non-homogeneous hidden Markov models"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out_dir;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"simulate", "Simulate a panel dataset from a data generating process"},
      {"fit", "Fit a model by multistart maximum (penalized) likelihood"},
      {"ace", "Average causal effect of an intervention plan"},
      {"bootstrap", "Bootstrap percentile intervals for the ACE"},
      {"experiment-multistart", "Multistart success rate experiment"},
      {"experiment-coverage", "ACE RMSE and interval coverage experiment"},
      {"validate", "Check a run config without fitting"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "Run config (JSON)")->required();
    sub->add_option("--seed", seed, "Override every seed in the config");
    sub->add_option("--threads", threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    sub->add_option("--out-dir", out_dir, "Output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    Run run;
    run.config = read_config(config_path);
    if (!run.config.is_object()) throw CliFailure{1, "config: expected a JSON object"};
    if (run.config.contains("format_version") && run.config["format_version"] != 1)
      throw CliFailure{1, "config.format_version: unsupported value"};
    run.config_dir = fs::absolute(config_path).parent_path();
    apply_seed(run.config, seed);

    if (!out_dir.empty()) {
      run.out_dir = out_dir;
    } else if (run.config.contains("out_dir") && run.config["out_dir"].is_string()) {
      run.out_dir = run.input(run.config["out_dir"].get<std::string>());
    } else {
      run.out_dir = run.config_dir / "out";
    }

    int n_threads = 1;
    if (threads) {
      n_threads = *threads;
    } else if (run.config.contains("threads")) {
      if (!run.config["threads"].is_number_integer())
        throw CliFailure{1, "config.threads: expected an integer"};
      n_threads = run.config["threads"].get<int>();
    }
    check(fanhmm_set_threads(n_threads), "threads");

    if (command == "simulate") return cmd_simulate(run);
    if (command == "fit") return cmd_fit(run);
    if (command == "ace") return cmd_ace(run);
    if (command == "bootstrap") return cmd_bootstrap(run);
    if (command == "experiment-multistart") return cmd_experiment_multistart(run);
    if (command == "experiment-coverage") return cmd_experiment_coverage(run);
    return cmd_validate(run);
  } catch (const CliFailure& f) {
    std::cerr << "fanhmm " << command << ": " << f.message << '\n';
    return f.exit_code;
  } catch (const json::exception& e) {
    std::cerr << "fanhmm " << command << ": config: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "fanhmm " << command << ": out_dir: " << e.what() << '\n';
    return 1;
  }
}
