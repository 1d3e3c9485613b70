#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "actfn/activations.hpp"
#include "actfn/benchmark.hpp"
#include "actfn/dataset.hpp"
#include "actfn/gradcheck.hpp"
#include "actfn/train.hpp"

namespace actfn {

// Process exit codes shared by every subcommand.
enum ExitCode : int {
  exit_ok = 0,
  exit_usage = 1,        // bad flags or unusable config
  exit_verification = 2, // a property/gradient check failed
  exit_partial = 3,      // benchmark finished but some cells failed
};

// Everything a `run` needs, loaded from a JSON config file.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  std::optional<SynthPreset> preset;  // exactly one of preset/dataset_path
  std::string dataset_path;           // FNIRSET base path (no extension)
  double class_effect = 0.8;
  double noise_sigma = 0.5;
  BenchmarkPlan plan;
  TrainConfig train;
  int jobs = 0;  // 0 = unset
  nlohmann::json raw;
};

namespace cli {

inline const char* yn(bool b) { return b ? "yes" : "no"; }

// env ACTFN_JOBS overrides the flag; 0 means "decide from the hardware"
inline int resolve_jobs(int flag_value) {
  if (const char* env = std::getenv("ACTFN_JOBS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end && *end == '\0' && v >= 1) return static_cast<int>(v);
    std::fprintf(stderr, "warning: ignoring unparseable ACTFN_JOBS='%s'\n", env);
  }
  if (flag_value >= 1) return flag_value;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config: " + std::string(e.what()));
  }

  static const std::vector<std::string> known{"seed",        "output_dir", "dataset",
                                              "architectures", "activations", "train",
                                              "network",     "jobs"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::invalid_argument("config: unknown field '" + key + "'");

  ExperimentConfig cfg;
  cfg.raw = j;
  try {
    cfg.seed = j.value("seed", std::uint64_t{0});
    cfg.output_dir = j.value("output_dir", std::string("out"));
    cfg.jobs = j.value("jobs", 0);

    if (!j.contains("dataset") || !j["dataset"].is_object())
      throw std::invalid_argument("config: missing 'dataset' object");
    const auto& d = j["dataset"];
    const bool has_preset = d.contains("preset"), has_path = d.contains("path");
    if (has_preset == has_path)
      throw std::invalid_argument("config: dataset needs exactly one of 'preset' or 'path'");
    if (has_preset) cfg.preset = parse_preset(d["preset"].get<std::string>());
    if (has_path) cfg.dataset_path = d["path"].get<std::string>();
    cfg.class_effect = d.value("class_effect", 0.8);
    cfg.noise_sigma = d.value("noise_sigma", 0.5);

    if (!j.contains("architectures") || !j["architectures"].is_array() || j["architectures"].empty())
      throw std::invalid_argument("config: 'architectures' must be a non-empty array");
    cfg.plan.architectures = j["architectures"].get<std::vector<std::string>>();
    if (!j.contains("activations") || !j["activations"].is_array() || j["activations"].empty())
      throw std::invalid_argument("config: 'activations' must be a non-empty array");
    for (const auto& name : j["activations"].get<std::vector<std::string>>())
      cfg.plan.activations.push_back(ActivationSpec::parse(name));  // rejects unknown names

    if (j.contains("train")) {
      const auto& t = j["train"];
      cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
      cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
      cfg.train.select_epochs = t.value("select_epochs", cfg.train.select_epochs);
      cfg.train.refit_epochs = t.value("refit_epochs", cfg.train.refit_epochs);
      cfg.train.folds = t.value("folds", cfg.train.folds);
    }
    cfg.train.seed = cfg.seed;

    if (j.contains("network")) {
      const auto& n = j["network"];
      cfg.plan.net_defaults.dropout_rate = n.value("dropout_rate", cfg.plan.net_defaults.dropout_rate);
      cfg.plan.net_defaults.temporal_kernel =
          n.value("temporal_kernel", cfg.plan.net_defaults.temporal_kernel);
      cfg.plan.net_defaults.branch_filters =
          n.value("branch_filters", cfg.plan.net_defaults.branch_filters);
      cfg.plan.net_defaults.deep_filters = n.value("deep_filters", cfg.plan.net_defaults.deep_filters);
      cfg.plan.net_defaults.pool_width = n.value("pool_width", cfg.plan.net_defaults.pool_width);
      if (n.contains("batch_norm")) cfg.plan.net_defaults.batch_norm = n["batch_norm"].get<bool>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config: " + std::string(e.what()));
  }

  cfg.plan.validate();  // unknown architectures rejected before any work
  cfg.train.validate();
  return cfg;
}

/// `check`: empirical property booleans against the declared table.
inline int run_check(const std::string& which) {
  std::vector<ActivationSpec> specs;
  if (which == "all") {
    specs = ActivationSpec::named_seven();
  } else {
    specs.push_back(ActivationSpec::parse(which));
  }
  int mismatches = 0;
  std::printf("%-12s %-6s %-11s %-10s %-7s %-8s %-10s\n", "activation", "", "parametric", "monotonic", "smooth",
              "bounded", "symmetric");
  for (const auto& spec : specs) {
    const ActivationProperties expect = declared_properties(spec);
    const ActivationProperties got = check_properties(spec);
    const bool ok = got == expect;
    if (!ok) ++mismatches;
    std::printf("%-12s %-6s %-11s %-10s %-7s %-8s %-10s\n", spec.name().c_str(), "found", yn(got.parametric),
                yn(got.monotonic), yn(got.smooth), yn(got.bounded), yn(got.symmetric));
    std::printf("%-12s %-6s %-11s %-10s %-7s %-8s %-10s %s\n", "", "table", yn(expect.parametric),
                yn(expect.monotonic), yn(expect.smooth), yn(expect.bounded), yn(expect.symmetric),
                ok ? "ok" : "MISMATCH");
  }
  if (mismatches > 0) {
    std::printf("%d activation(s) deviate from the declared table\n", mismatches);
    return exit_verification;
  }
  return exit_ok;
}

/// `gradcheck`: finite-difference suite, worst relative error per op.
inline int run_gradcheck(std::uint64_t seed, const std::string& op_filter) {
  int failures = 0, shown = 0;
  for (const auto& r : gradcheck_suite(seed)) {
    if (!op_filter.empty() && r.name.find(op_filter) == std::string::npos) continue;
    ++shown;
    std::printf("%-28s worst rel err %.3e  (tol %.0e)  %s\n", r.name.c_str(), r.worst_rel_err, r.tolerance,
                r.pass ? "ok" : "FAIL");
    if (!r.pass) ++failures;
  }
  if (shown == 0) {
    std::fprintf(stderr, "error: no gradient check matches --op '%s'\n", op_filter.c_str());
    return exit_usage;
  }
  if (failures > 0) {
    std::printf("%d gradient check(s) above tolerance\n", failures);
    return exit_verification;
  }
  return exit_ok;
}

/// `gen-data`: synthesize a dataset and write it in FNIRSET form.
inline int run_gen_data(const std::string& preset_name, std::uint64_t seed, double noise,
                        double effect, const std::string& out_dir) {
  const SynthPreset preset = parse_preset(preset_name);
  Rng rng = SeedSequence(seed).with("data").rng();
  auto set = synth_preset(preset, effect, noise, rng);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    std::fprintf(stderr, "error: cannot create '%s': %s\n", out_dir.c_str(), ec.message().c_str());
    return exit_usage;
  }
  const std::string base = (std::filesystem::path(out_dir) / "dataset").string();
  save_fnirset(set, base);
  std::printf("wrote %s.json and %s.bin: (%lld, %lld, %lld), effect %g, noise %g, seed %llu\n",
              base.c_str(), base.c_str(), static_cast<long long>(set.size()),
              static_cast<long long>(set.channels()), static_cast<long long>(set.timepoints()),
              effect, noise, static_cast<unsigned long long>(seed));
  return exit_ok;
}

/// `run`: full benchmark from a config file; writes CSV, markdown, manifest.
inline int run_experiment(const std::string& config_path, int jobs_flag) {
  ExperimentConfig cfg;
  try {
    cfg = load_experiment_config(config_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_usage;
  }

  TrialSet<double> dataset;
  try {
    if (cfg.preset) {
      Rng rng = SeedSequence(cfg.seed).with("data").rng();
      dataset = synth_preset(*cfg.preset, cfg.class_effect, cfg.noise_sigma, rng);
    } else {
      dataset = load_fnirset(cfg.dataset_path);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: dataset: %s\n", e.what());
    return exit_usage;
  }
  std::printf("dataset: (%lld, %lld, %lld)\n", static_cast<long long>(dataset.size()),
              static_cast<long long>(dataset.channels()),
              static_cast<long long>(dataset.timepoints()));

  const int jobs = resolve_jobs(jobs_flag >= 1 ? jobs_flag : cfg.jobs);
  std::printf("grid: %zu architectures x %zu activations, %d folds, %d worker(s)\n",
              cfg.plan.architectures.size(), cfg.plan.activations.size(), cfg.train.folds, jobs);

  BenchmarkReport report = run_benchmark(cfg.plan, dataset, cfg.train, jobs,
                                         [](const std::string& line) { std::printf("  %s\n", line.c_str()); });

  std::error_code ec;
  std::filesystem::create_directories(cfg.output_dir, ec);
  if (ec) {
    std::fprintf(stderr, "error: cannot create '%s': %s\n", cfg.output_dir.c_str(),
                 ec.message().c_str());
    return exit_usage;
  }
  const std::filesystem::path out(cfg.output_dir);
  const std::string csv = write_benchmark_csv(report);
  std::ofstream(out / "results.csv") << csv;
  std::ofstream(out / "report.md") << markdown_report(report);
  std::ofstream(out / "manifest.json") << make_manifest(cfg.raw, cfg.seed).dump(2) << '\n';
  std::printf("wrote %s, %s, %s\n", (out / "results.csv").c_str(), (out / "report.md").c_str(),
              (out / "manifest.json").c_str());

  if (!report.all_ok()) {
    for (const auto& c : report.cells)
      if (!c.ok())
        std::fprintf(stderr, "failed cell %s/%s: %s\n", c.architecture.c_str(),
                     c.activation.name().c_str(), c.error.c_str());
    return exit_partial;
  }
  return exit_ok;
}

/// `report`: re-aggregate an existing CSV into the markdown layout.
inline int run_report(const std::string& csv_path, const std::string& out_path) {
  std::ifstream f(csv_path);
  if (!f) {
    std::fprintf(stderr, "error: cannot open '%s'\n", csv_path.c_str());
    return exit_usage;
  }
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::string md;
  try {
    md = markdown_report(parse_benchmark_csv(text));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_usage;
  }
  if (out_path.empty() || out_path == "-") {
    std::fputs(md.c_str(), stdout);
  } else {
    std::ofstream o(out_path);
    if (!o) {
      std::fprintf(stderr, "error: cannot write '%s'\n", out_path.c_str());
      return exit_usage;
    }
    o << md;
    std::printf("wrote %s\n", out_path.c_str());
  }
  return exit_ok;
}

}  // namespace cli

inline int cli_main(int argc, char** argv) {
  CLI::App app{"activation-function benchmark harness for hemodynamic signal classification"};
  app.require_subcommand(1);

  auto* check_cmd = app.add_subcommand("check", "verify activation properties against the declared table");
  std::string check_which = "all";
  check_cmd->add_option("activation", check_which, "activation name or 'all'")->capture_default_str();

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::uint64_t grad_seed = 1618;
  std::string grad_op;
  grad_cmd->add_option("--seed", grad_seed, "sampling seed")->capture_default_str();
  grad_cmd->add_option("--op", grad_op, "only report checks whose name contains this substring");

  auto* gen_cmd = app.add_subcommand("gen-data", "synthesize a dataset in FNIRSET form");
  std::string gen_preset = "small", gen_out = "data";
  std::uint64_t gen_seed = 1618;
  double gen_noise = 0.5, gen_effect = 0.8;
  gen_cmd->add_option("--preset", gen_preset, "paper or small")->capture_default_str();
  gen_cmd->add_option("--seed", gen_seed, "master seed")->capture_default_str();
  gen_cmd->add_option("--noise", gen_noise, "noise sigma")->capture_default_str();
  gen_cmd->add_option("--effect", gen_effect, "class amplitude contrast")->capture_default_str();
  gen_cmd->add_option("--out", gen_out, "output directory")->capture_default_str();

  auto* run_cmd = app.add_subcommand("run", "run a benchmark described by a JSON config");
  std::string run_config;
  int run_jobs = 0;
  run_cmd->add_option("--config", run_config, "experiment config file")->required();
  run_cmd->add_option("--jobs", run_jobs, "worker count (ACTFN_JOBS overrides; default: hardware)");

  auto* report_cmd = app.add_subcommand("report", "re-aggregate an existing results CSV");
  std::string report_csv, report_out;
  report_cmd->add_option("--csv", report_csv, "per-fold results CSV")->required();
  report_cmd->add_option("--out", report_out, "markdown output path ('-' for stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_usage;
  }

  try {
    if (check_cmd->parsed()) return cli::run_check(check_which);
    if (grad_cmd->parsed()) return cli::run_gradcheck(grad_seed, grad_op);
    if (gen_cmd->parsed())
      return cli::run_gen_data(gen_preset, gen_seed, gen_noise, gen_effect, gen_out);
    if (run_cmd->parsed()) return cli::run_experiment(run_config, run_jobs);
    if (report_cmd->parsed()) return cli::run_report(report_csv, report_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_usage;
  }
  return exit_usage;
}

}  // namespace actfn
