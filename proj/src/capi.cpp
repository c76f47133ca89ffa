#include "fkb/fkb.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <new>
#include <sstream>
#include <string>

#include "bench.hpp"
#include "engine.hpp"
#include "report.hpp"

using fkb::Error;
using fkb::ErrorKind;
using fkb::engine::Json;

struct fkb_config {
  Json doc;
  fkb::engine::FederationConfig cfg;
};

struct fkb_report {
  fkb::engine::RunReport report;
};

struct fkb_sweep {
  fkb::bench::SweepSpec spec;
};

struct fkb_dataset {
  fkb::datakit::Dataset ds;
};

namespace {

thread_local std::string g_last_error;

fkb_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Spec: return FKB_ERR_CONFIG;
    case ErrorKind::Io: return FKB_ERR_IO;
    case ErrorKind::Format: return FKB_ERR_FORMAT;
    case ErrorKind::Partition: return FKB_ERR_PARTITION;
    case ErrorKind::Generation:
    case ErrorKind::Client: return FKB_ERR_DATA;
    case ErrorKind::Divergence: return FKB_ERR_DIVERGED;
    default: return FKB_ERR_INTERNAL;
  }
}

fkb_status fail(fkb_status status, std::string msg) {
  g_last_error = std::move(msg);
  return status;
}

// Runs body, translating exceptions into status codes.
template <class F>
fkb_status guarded(F&& body) {
  try {
    g_last_error.clear();
    return body();
  } catch (const Error& e) {
    return fail(status_of(e.kind()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(FKB_ERR_CONFIG, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(FKB_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(FKB_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(FKB_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(FKB_ERR_INTERNAL, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

#define FKB_REQUIRE(cond)                                                  \
  do {                                                                     \
    if (!(cond)) return fail(FKB_ERR_INVALID_ARGUMENT, "invalid argument: " #cond); \
  } while (0)

fkb_status make_config(Json doc, fkb_config** out) {
  auto cfg = fkb::engine::config_from_json(doc);
  *out = new fkb_config{std::move(doc), std::move(cfg)};
  return FKB_OK;
}

}  // namespace

extern "C" {

const char* fkb_version(void) { return "1.0.0"; }

const char* fkb_last_error(void) { return g_last_error.c_str(); }

const char* fkb_status_name(fkb_status status) {
  switch (status) {
    case FKB_OK: return "ok";
    case FKB_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case FKB_ERR_CONFIG: return "config";
    case FKB_ERR_IO: return "io";
    case FKB_ERR_FORMAT: return "format";
    case FKB_ERR_PARTITION: return "partition";
    case FKB_ERR_DATA: return "data";
    case FKB_ERR_DIVERGED: return "diverged";
    case FKB_ERR_SELF_CHECK: return "self-check";
    case FKB_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

int fkb_exit_code(fkb_status status) {
  switch (status) {
    case FKB_OK: return 0;
    case FKB_ERR_INVALID_ARGUMENT:
    case FKB_ERR_CONFIG: return 2;
    case FKB_ERR_SELF_CHECK: return 4;
    default: return 3;
  }
}

void fkb_string_free(char* s) { std::free(s); }

fkb_status fkb_config_default(fkb_config** out) {
  FKB_REQUIRE(out);
  return guarded([&] { return make_config(Json::object(), out); });
}

fkb_status fkb_config_from_file(const char* path, fkb_config** out) {
  FKB_REQUIRE(path && out);
  return guarded([&] { return make_config(fkb::engine::read_json_file(path), out); });
}

fkb_status fkb_config_from_json(const char* json, fkb_config** out) {
  FKB_REQUIRE(json && out);
  return guarded([&] {
    Json doc = Json::parse(json, nullptr, false);
    if (doc.is_discarded()) return fail(FKB_ERR_CONFIG, "config is not valid JSON");
    return make_config(std::move(doc), out);
  });
}

fkb_status fkb_config_set(fkb_config* cfg, const char* dotted_key, const char* value) {
  FKB_REQUIRE(cfg && dotted_key && value);
  return guarded([&] {
    Json doc = cfg->doc;
    fkb::engine::apply_override(doc, dotted_key, value);
    auto parsed = fkb::engine::config_from_json(doc);
    cfg->doc = std::move(doc);
    cfg->cfg = std::move(parsed);
    return FKB_OK;
  });
}

fkb_status fkb_config_to_json(const fkb_config* cfg, char** out_json) {
  FKB_REQUIRE(cfg && out_json);
  return guarded([&] {
    *out_json = dup_string(fkb::engine::config_to_json(cfg->cfg).dump(2) + "\n");
    return FKB_OK;
  });
}

void fkb_config_free(fkb_config* cfg) { delete cfg; }

fkb_status fkb_run(const fkb_config* cfg, int threads, fkb_report** out) {
  FKB_REQUIRE(cfg && out);
  *out = nullptr;
  return guarded([&] {
    auto report = fkb::engine::run_federated(cfg->cfg, threads);
    const bool all_failed = report.all_failed();
    *out = new fkb_report{std::move(report)};
    if (all_failed) return fail(FKB_ERR_DIVERGED, "every seed diverged");
    return FKB_OK;
  });
}

fkb_status fkb_report_write(const fkb_report* report, const char* dir, int include_timing) {
  FKB_REQUIRE(report && dir);
  return guarded([&] {
    const std::filesystem::path d(dir);
    std::filesystem::create_directories(d);
    fkb::engine::write_text(d / "report.json", fkb::engine::report_json_text(report->report, include_timing != 0));
    fkb::engine::write_text(d / "report.csv", fkb::engine::report_to_csv(report->report));
    return FKB_OK;
  });
}

fkb_status fkb_report_json(const fkb_report* report, int include_timing, char** out_json) {
  FKB_REQUIRE(report && out_json);
  return guarded([&] {
    *out_json = dup_string(fkb::engine::report_json_text(report->report, include_timing != 0));
    return FKB_OK;
  });
}

fkb_status fkb_report_csv(const fkb_report* report, char** out_csv) {
  FKB_REQUIRE(report && out_csv);
  return guarded([&] {
    *out_csv = dup_string(fkb::engine::report_to_csv(report->report));
    return FKB_OK;
  });
}

fkb_status fkb_report_summary(const fkb_report* report, double* accuracy_mean, double* accuracy_std,
                              size_t* completed_seeds, size_t* failed_seeds) {
  FKB_REQUIRE(report);
  const auto& r = report->report;
  if (accuracy_mean) *accuracy_mean = r.final_accuracy_mean;
  if (accuracy_std) *accuracy_std = r.final_accuracy_std;
  if (completed_seeds) *completed_seeds = r.seeds.size() - r.failed_seeds.size();
  if (failed_seeds) *failed_seeds = r.failed_seeds.size();
  return FKB_OK;
}

fkb_status fkb_report_accuracies(const fkb_report* report, size_t seed_index, double* values, size_t capacity,
                                 size_t* rounds) {
  FKB_REQUIRE(report && rounds);
  FKB_REQUIRE(values || capacity == 0);
  if (seed_index >= report->report.seeds.size()) return fail(FKB_ERR_INVALID_ARGUMENT, "seed index out of range");
  const auto& series = report->report.seeds[seed_index].rounds;
  *rounds = series.size();
  for (size_t i = 0; i < series.size() && i < capacity; ++i) values[i] = series[i].test_accuracy;
  return FKB_OK;
}

void fkb_report_free(fkb_report* report) { delete report; }

fkb_status fkb_sweep_from_file(const char* path, fkb_sweep** out) {
  FKB_REQUIRE(path && out);
  return guarded([&] {
    *out = new fkb_sweep{fkb::bench::sweep_from_json(fkb::engine::read_json_file(path))};
    return FKB_OK;
  });
}

fkb_status fkb_sweep_preset(const char* name, fkb_sweep** out) {
  FKB_REQUIRE(name && out);
  return guarded([&] {
    *out = new fkb_sweep{fkb::bench::sweep_preset(name)};
    return FKB_OK;
  });
}

fkb_status fkb_sweep_set_base(fkb_sweep* sweep, const char* dotted_key, const char* value) {
  FKB_REQUIRE(sweep && dotted_key && value);
  return guarded([&] {
    auto spec = sweep->spec;
    fkb::engine::apply_override(spec.base, dotted_key, value);
    spec.validate();
    sweep->spec = std::move(spec);
    return FKB_OK;
  });
}

fkb_status fkb_sweep_set_output(fkb_sweep* sweep, const char* dir) {
  FKB_REQUIRE(sweep && dir && *dir);
  sweep->spec.output = dir;
  return FKB_OK;
}

size_t fkb_sweep_point_count(const fkb_sweep* sweep) { return sweep ? sweep->spec.size() : 0; }

fkb_status fkb_sweep_run(const fkb_sweep* sweep, int threads, fkb_log_fn log, void* user, size_t* succeeded) {
  FKB_REQUIRE(sweep);
  return guarded([&] {
    std::ostringstream buffer;
    auto result = fkb::bench::run_sweep(sweep->spec, threads, log ? &buffer : nullptr);
    if (log) {
      std::istringstream lines(buffer.str());
      for (std::string line; std::getline(lines, line);) log(line.c_str(), user);
    }
    if (succeeded) *succeeded = result.succeeded();
    if (result.succeeded() == 0) return fail(FKB_ERR_DIVERGED, "no sweep point succeeded");
    return FKB_OK;
  });
}

void fkb_sweep_free(fkb_sweep* sweep) { delete sweep; }

size_t fkb_model_preset_count(void) { return fkb::models::preset_names().size(); }

const char* fkb_model_preset_name(size_t index) {
  const auto& names = fkb::models::preset_names();
  return index < names.size() ? names[index].c_str() : nullptr;
}

fkb_status fkb_gradcheck(const char* preset, int grid, uint64_t seed, unsigned flags, double* max_rel_error,
                         char** table) {
  FKB_REQUIRE(preset);
  return guarded([&] {
    fkb::bench::GradcheckOptions opts;
    opts.corrupt = (flags & FKB_GRADCHECK_CORRUPT) != 0;
    const auto result = fkb::bench::gradcheck(preset, grid, seed, opts);
    if (max_rel_error) *max_rel_error = result.max_rel_error;
    if (table) {
      std::string text;
      for (const auto& t : result.tensors) {
        text += t.name + "\t" + fkb::engine::format_double(t.rel_error) + "\t" + std::to_string(t.checked) + "\n";
      }
      *table = dup_string(text);
    }
    if (!result.passed) {
      return fail(FKB_ERR_SELF_CHECK, std::string(preset) + ": relative error " +
                                          fkb::engine::format_double(result.max_rel_error) + " exceeds 1e-4");
    }
    return FKB_OK;
  });
}

fkb_status fkb_dataset_from_config(const fkb_config* cfg, fkb_dataset** out) {
  FKB_REQUIRE(cfg && out);
  return guarded([&] {
    *out = new fkb_dataset{fkb::engine::raw_dataset(cfg->cfg.dataset)};
    return FKB_OK;
  });
}

fkb_status fkb_dataset_load(const char* path, fkb_dataset** out) {
  FKB_REQUIRE(path && out);
  return guarded([&] {
    *out = new fkb_dataset{fkb::datakit::load_dataset(path)};
    return FKB_OK;
  });
}

fkb_status fkb_dataset_save(const fkb_dataset* ds, const char* path) {
  FKB_REQUIRE(ds && path);
  return guarded([&] {
    fkb::datakit::save_dataset(ds->ds, path);
    return FKB_OK;
  });
}

fkb_status fkb_dataset_shape(const fkb_dataset* ds, size_t* samples, size_t* dim, int* classes) {
  FKB_REQUIRE(ds);
  if (samples) *samples = ds->ds.size();
  if (dim) *dim = ds->ds.dim();
  if (classes) *classes = ds->ds.num_classes;
  return FKB_OK;
}

void fkb_dataset_free(fkb_dataset* ds) { delete ds; }

fkb_status fkb_partition_stats(const fkb_config* cfg, int clients, double alpha, uint64_t seed, const char* csv_path,
                               double* score) {
  FKB_REQUIRE(cfg);
  return guarded([&] {
    const auto rep = fkb::bench::partition_report(cfg->cfg.dataset, clients, alpha, cfg->cfg.min_samples, seed);
    if (csv_path) fkb::engine::write_text(csv_path, fkb::bench::histogram_csv(rep.stats, rep.num_classes));
    if (score) *score = rep.stats.heterogeneity;
    return FKB_OK;
  });
}

fkb_status fkb_csv_validate(const char* path, const char** kind, size_t* rows) {
  FKB_REQUIRE(path);
  return guarded([&] {
    const auto table = fkb::bench::read_table(fkb::engine::read_text(path));
    if (kind) *kind = fkb::bench::to_string(table.kind);
    if (rows) *rows = table.rows;
    return FKB_OK;
  });
}

fkb_status fkb_csv_merge(const char* const* paths, size_t count, const char* out_path, size_t* rows) {
  FKB_REQUIRE(paths && count > 0 && out_path);
  return guarded([&] {
    std::vector<std::string> texts;
    for (size_t i = 0; i < count; ++i) {
      if (!paths[i]) return fail(FKB_ERR_INVALID_ARGUMENT, "null path in merge list");
      texts.push_back(fkb::engine::read_text(paths[i]));
    }
    fkb::engine::write_text(out_path, fkb::bench::merge_report_csvs(texts, rows));
    return FKB_OK;
  });
}

fkb_status fkb_report_check(const char* json_path, const char* csv_path) {
  FKB_REQUIRE(json_path && csv_path);
  return guarded([&] {
    const Json doc = Json::parse(fkb::engine::read_text(json_path), nullptr, false);
    if (doc.is_discarded()) return fail(FKB_ERR_FORMAT, "report json does not parse");
    fkb::engine::cross_check(doc, fkb::engine::parse_report_csv(fkb::engine::read_text(csv_path)));
    return FKB_OK;
  });
}

}  // extern "C"
