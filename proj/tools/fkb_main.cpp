// fkb command-line front end. Talks to the library only through fkb.h.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fkb/fkb.h"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitSelfCheck = 4;

template <class T, void (*Free)(T*)>
struct HandleDeleter {
  void operator()(T* p) const { Free(p); }
};

using ConfigPtr = std::unique_ptr<fkb_config, HandleDeleter<fkb_config, fkb_config_free>>;
using ReportPtr = std::unique_ptr<fkb_report, HandleDeleter<fkb_report, fkb_report_free>>;
using SweepPtr = std::unique_ptr<fkb_sweep, HandleDeleter<fkb_sweep, fkb_sweep_free>>;
using DatasetPtr = std::unique_ptr<fkb_dataset, HandleDeleter<fkb_dataset, fkb_dataset_free>>;

struct OwnedString {
  char* s = nullptr;
  ~OwnedString() { fkb_string_free(s); }
};

int report_failure(fkb_status status, const std::string& context) {
  std::cerr << "fkb: " << context << ": " << fkb_last_error() << " [" << fkb_status_name(status) << "]\n";
  return fkb_exit_code(status);
}

struct Override {
  std::string key;
  std::string value;
};

// Unrecognized arguments must all be --dotted.key=value overrides.
std::optional<std::vector<Override>> parse_overrides(const std::vector<std::string>& extras) {
  std::vector<Override> out;
  for (const auto& arg : extras) {
    const auto eq = arg.find('=');
    if (arg.rfind("--", 0) != 0 || eq == std::string::npos || eq <= 2) {
      std::cerr << "fkb: unexpected argument '" << arg << "' (overrides use --key=value)\n";
      return std::nullopt;
    }
    out.push_back({arg.substr(2, eq - 2), arg.substr(eq + 1)});
  }
  return out;
}

// Loads `path` (or defaults when empty) and applies overrides.
std::optional<ConfigPtr> load_config(const std::string& path, const std::vector<Override>& overrides, int& exit_code) {
  fkb_config* raw = nullptr;
  const fkb_status st = path.empty() ? fkb_config_default(&raw) : fkb_config_from_file(path.c_str(), &raw);
  if (st != FKB_OK) {
    exit_code = report_failure(st, path.empty() ? "default config" : path);
    return std::nullopt;
  }
  ConfigPtr cfg(raw);
  for (const auto& o : overrides) {
    const fkb_status s = fkb_config_set(cfg.get(), o.key.c_str(), o.value.c_str());
    if (s != FKB_OK) {
      exit_code = report_failure(s, "--" + o.key);
      return std::nullopt;
    }
  }
  return cfg;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, int threads, bool timing,
            const std::vector<std::string>& extras) {
  auto overrides = parse_overrides(extras);
  if (!overrides) return kExitConfig;
  int code = 0;
  auto cfg = load_config(config_path, *overrides, code);
  if (!cfg) return code;

  fkb_report* raw = nullptr;
  const fkb_status st = fkb_run(cfg->get(), threads, &raw);
  ReportPtr report(raw);
  if (report) {
    const fkb_status w = fkb_report_write(report.get(), out_dir.c_str(), timing ? 1 : 0);
    if (w != FKB_OK) return report_failure(w, "writing reports");
  }
  if (st != FKB_OK) return report_failure(st, "run");

  double mean = 0.0, sd = 0.0;
  size_t ok = 0, failed = 0;
  fkb_report_summary(report.get(), &mean, &sd, &ok, &failed);
  std::printf("final accuracy %.4f +/- %.4f over %zu seed(s), %zu failed\n", mean, sd, ok, failed);
  std::printf("wrote %s/report.json and %s/report.csv\n", out_dir.c_str(), out_dir.c_str());
  return 0;
}

void print_line(const char* line, void*) { std::printf("%s\n", line); }

int cmd_sweep(const std::string& file, const std::string& preset, const std::string& out_dir, int threads,
              const std::vector<std::string>& extras) {
  auto overrides = parse_overrides(extras);
  if (!overrides) return kExitConfig;
  if (file.empty() == preset.empty()) {
    std::cerr << "fkb: sweep needs exactly one of FILE or --preset\n";
    return kExitConfig;
  }
  fkb_sweep* raw = nullptr;
  fkb_status st = file.empty() ? fkb_sweep_preset(preset.c_str(), &raw) : fkb_sweep_from_file(file.c_str(), &raw);
  if (st != FKB_OK) return report_failure(st, file.empty() ? preset : file);
  SweepPtr sweep(raw);
  for (const auto& o : *overrides) {
    st = fkb_sweep_set_base(sweep.get(), o.key.c_str(), o.value.c_str());
    if (st != FKB_OK) return report_failure(st, "--" + o.key);
  }
  if (!out_dir.empty()) fkb_sweep_set_output(sweep.get(), out_dir.c_str());

  std::printf("running %zu sweep point(s)\n", fkb_sweep_point_count(sweep.get()));
  size_t succeeded = 0;
  st = fkb_sweep_run(sweep.get(), threads, print_line, nullptr, &succeeded);
  if (st != FKB_OK) return report_failure(st, "sweep");
  std::printf("%zu of %zu point(s) succeeded\n", succeeded, fkb_sweep_point_count(sweep.get()));
  return 0;
}

int cmd_gradcheck(const std::string& model, std::optional<int> grid, std::uint64_t seed, bool corrupt) {
  std::vector<std::string> presets;
  if (model == "all") {
    for (size_t i = 0; i < fkb_model_preset_count(); ++i) presets.emplace_back(fkb_model_preset_name(i));
  } else {
    presets.push_back(model);
  }
  int code = 0;
  for (const auto& p : presets) {
    std::vector<int> grids;
    if (grid) {
      grids.push_back(*grid);
    } else if (p.rfind("kan", 0) == 0 && model == "all") {
      grids = {3, 5, 10};
    } else {
      grids.push_back(5);
    }
    for (int g : grids) {
      double err = 0.0;
      OwnedString table;
      const fkb_status st = fkb_gradcheck(p.c_str(), g, seed, corrupt ? FKB_GRADCHECK_CORRUPT : 0u, &err, &table.s);
      if (st != FKB_OK && st != FKB_ERR_SELF_CHECK) return report_failure(st, "gradcheck " + p);
      std::printf("%-8s g=%-2d max relative error %.3e  %s\n", p.c_str(), g, err, st == FKB_OK ? "ok" : "FAIL");
      if (st == FKB_ERR_SELF_CHECK) {
        std::printf("  %-20s %-14s %s\n", "tensor", "rel-error", "coords");
        std::string rows = table.s ? table.s : "";
        std::size_t pos = 0;
        while (pos < rows.size()) {
          const auto nl = rows.find('\n', pos);
          std::string line = rows.substr(pos, nl - pos);
          const auto t1 = line.find('\t');
          const auto t2 = line.find('\t', t1 + 1);
          std::printf("  %-20s %-14s %s\n", line.substr(0, t1).c_str(), line.substr(t1 + 1, t2 - t1 - 1).c_str(),
                      line.substr(t2 + 1).c_str());
          pos = nl == std::string::npos ? rows.size() : nl + 1;
        }
        code = kExitSelfCheck;
      }
    }
  }
  return code;
}

int cmd_partition_stats(const std::string& config_path, const std::string& data, int clients, double alpha,
                        std::uint64_t seed, const std::string& out, const std::vector<std::string>& extras) {
  auto overrides = parse_overrides(extras);
  if (!overrides) return kExitConfig;
  if (!data.empty()) {
    overrides->push_back({"dataset.path", data});
    overrides->push_back({"dataset.source", "fkb"});
  }
  int code = 0;
  auto cfg = load_config(config_path, *overrides, code);
  if (!cfg) return code;
  double score = 0.0;
  const fkb_status st =
      fkb_partition_stats(cfg->get(), clients, alpha, seed, out.empty() ? nullptr : out.c_str(), &score);
  if (st != FKB_OK) return report_failure(st, "partition-stats");
  std::printf("heterogeneity_score=%.6f\n", score);
  if (!out.empty()) std::printf("wrote %s\n", out.c_str());
  return 0;
}

int cmd_export(const std::string& config_path, const std::string& out, const std::vector<std::string>& extras) {
  auto overrides = parse_overrides(extras);
  if (!overrides) return kExitConfig;
  int code = 0;
  auto cfg = load_config(config_path, *overrides, code);
  if (!cfg) return code;
  fkb_dataset* raw = nullptr;
  fkb_status st = fkb_dataset_from_config(cfg->get(), &raw);
  if (st != FKB_OK) return report_failure(st, "export");
  DatasetPtr ds(raw);
  st = fkb_dataset_save(ds.get(), out.c_str());
  if (st != FKB_OK) return report_failure(st, out);
  size_t n = 0, d = 0;
  int c = 0;
  fkb_dataset_shape(ds.get(), &n, &d, &c);
  std::printf("wrote %s: %zu samples, %zu features, %d classes\n", out.c_str(), n, d, c);
  return 0;
}

int cmd_report(const std::vector<std::string>& files, const std::string& out, const std::string& json) {
  for (const auto& f : files) {
    const char* kind = nullptr;
    size_t rows = 0;
    const fkb_status st = fkb_csv_validate(f.c_str(), &kind, &rows);
    if (st != FKB_OK) return report_failure(st, f);
    std::printf("%s: %s, %zu row(s)\n", f.c_str(), kind, rows);
  }
  if (!json.empty()) {
    if (files.size() != 1) {
      std::cerr << "fkb: --json checks exactly one report CSV\n";
      return kExitConfig;
    }
    const fkb_status st = fkb_report_check(json.c_str(), files.front().c_str());
    if (st != FKB_OK) return report_failure(st, json);
    std::printf("%s matches %s\n", files.front().c_str(), json.c_str());
  }
  if (!out.empty()) {
    std::vector<const char*> paths;
    for (const auto& f : files) paths.push_back(f.c_str());
    size_t rows = 0;
    const fkb_status st = fkb_csv_merge(paths.data(), paths.size(), out.c_str(), &rows);
    if (st != FKB_OK) return report_failure(st, "merge");
    std::printf("wrote %s: %zu row(s)\n", out.c_str(), rows);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated KAN/MLP benchmark simulator"};
  app.set_version_flag("--version", std::string(fkb_version()));
  app.require_subcommand(1);

  int threads = 0;

  auto* run = app.add_subcommand("run", "Run one federated configuration");
  std::string run_config, run_out = "fkb-out";
  bool timing = false;
  run->add_option("config", run_config, "JSON configuration file")->required();
  run->add_option("--out", run_out, "Output directory for report.json/report.csv");
  run->add_option("--threads", threads, "Worker threads (default: FKB_THREADS or all cores)");
  run->add_flag("--timing", timing, "Include per-round wall time in report.json");
  run->allow_extras();
  run->footer("Any --dotted.key=value argument overrides a config entry, e.g. --local.epochs=1");

  auto* sweep = app.add_subcommand("sweep", "Run a grid of configurations");
  std::string sweep_file, sweep_preset, sweep_out;
  sweep->add_option("file", sweep_file, "Sweep JSON file");
  sweep->add_option("--preset", sweep_preset, "Built-in grid: fig1, fig2 or ablation");
  sweep->add_option("--out", sweep_out, "Output directory");
  sweep->add_option("--threads", threads, "Worker threads");
  sweep->allow_extras();
  sweep->footer("--dotted.key=value arguments override the base configuration of every point");

  auto* grad = app.add_subcommand("gradcheck", "Compare backward against finite differences");
  std::string grad_model = "all";
  std::optional<int> grad_grid;
  std::uint64_t grad_seed = 1;
  bool corrupt = false;
  grad->add_option("--model", grad_model, "Model preset, or 'all'");
  grad->add_option("--grid", grad_grid, "KAN grid size (default 5; 'all' checks 3, 5 and 10)");
  grad->add_option("--seed", grad_seed, "Random seed");
  grad->add_flag("--corrupt", corrupt, "Negative control: perturb the analytic gradient");

  auto* part = app.add_subcommand("partition-stats", "Dirichlet partition histogram and heterogeneity");
  std::string part_config, part_data, part_out;
  int part_clients = 100;
  double part_alpha = 1.0;
  std::uint64_t part_seed = 1;
  part->add_option("--config", part_config, "Config file providing the dataset section");
  part->add_option("--data", part_data, "FKB dataset file (overrides the config's dataset)");
  part->add_option("--clients", part_clients, "Number of clients");
  part->add_option("--alpha", part_alpha, "Dirichlet concentration");
  part->add_option("--seed", part_seed, "Partition seed");
  part->add_option("--out", part_out, "Histogram CSV path");
  part->allow_extras();

  auto* exp = app.add_subcommand("export", "Write the configured synthetic dataset as FKB");
  std::string exp_config, exp_out;
  exp->add_option("--config", exp_config, "Config file providing the dataset section");
  exp->add_option("--out", exp_out, "Output .fkb path")->required();
  exp->allow_extras();

  auto* rep = app.add_subcommand("report", "Validate and merge emitted CSV files");
  std::vector<std::string> rep_files;
  std::string rep_out, rep_json;
  rep->add_option("files", rep_files, "CSV files")->required();
  rep->add_option("--out", rep_out, "Write merged report rows here");
  rep->add_option("--json", rep_json, "Cross-check a single report CSV against this report.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (*run) return cmd_run(run_config, run_out, threads, timing, run->remaining());
  if (*sweep) return cmd_sweep(sweep_file, sweep_preset, sweep_out, threads, sweep->remaining());
  if (*grad) return cmd_gradcheck(grad_model, grad_grid, grad_seed, corrupt);
  if (*part) {
    return cmd_partition_stats(part_config, part_data, part_clients, part_alpha, part_seed, part_out,
                               part->remaining());
  }
  if (*exp) return cmd_export(exp_config, exp_out, exp->remaining());
  if (*rep) return cmd_report(rep_files, rep_out, rep_json);
  return kExitConfig;
}
