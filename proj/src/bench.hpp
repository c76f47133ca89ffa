#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "engine.hpp"
#include "report.hpp"

namespace fkb::bench {

using engine::Json;

// ---- sweeps ---------------------------------------------------------------

struct SweepAxes {
  std::vector<std::string> algorithms;
  std::vector<std::string> models;
  std::vector<double> alphas;
  std::vector<int> grid_sizes;
};

struct SweepSpec {
  std::string preset;
  SweepAxes axes;
  Json base = Json::object();  // partial FederationConfig document
  std::filesystem::path output = "sweep-out";

  std::size_t size() const;
  void validate() const;
};

const std::vector<std::string>& sweep_preset_names();
SweepSpec sweep_preset(const std::string& name);
// A "preset" key seeds the axes; explicit axes replace the preset's.
SweepSpec sweep_from_json(const Json& doc);

struct SweepPoint {
  std::string algorithm;
  std::string model;
  double alpha = 1.0;
  int grid = 5;

  // Directory name; a pure function of the axis values.
  std::string dir_name() const;
  Json config_doc(const Json& base) const;
};

std::vector<SweepPoint> expand(const SweepSpec& spec);

inline constexpr const char* kSummaryCsvHeader =
    "algorithm,model,alpha,grid,status,completed_seeds,final_accuracy_mean,final_accuracy_std,"
    "convergence_round_mean";

struct PointOutcome {
  SweepPoint point;
  bool ok = false;
  std::string error;
  std::size_t completed_seeds = 0;
  double final_accuracy_mean = 0.0;
  double final_accuracy_std = 0.0;
  std::optional<double> convergence_round_mean;
};

struct SweepResult {
  std::vector<PointOutcome> points;
  std::size_t succeeded() const;
};

// Runs every point, writing <output>/<point>/report.{json,csv},
// <output>/sweep.csv and <output>/summary.csv.
SweepResult run_sweep(const SweepSpec& spec, int threads, std::ostream* log = nullptr);

std::string summary_csv(const SweepResult& result);

// ---- gradient self-check --------------------------------------------------

struct GradcheckOptions {
  int input_dim = 6;
  int classes = 4;
  int batch_rows = 3;
  int batches = 3;
  std::size_t max_coords = 400;  // per batch; all coordinates when the model is smaller
  double tolerance = 1e-4;
  bool corrupt = false;  // negative control: perturb the analytic gradient
};

struct TensorError {
  std::string name;
  double rel_error = 0.0;
  std::size_t checked = 0;
};

struct GradcheckResult {
  std::string preset;
  int grid = 0;
  double max_rel_error = 0.0;
  std::vector<TensorError> tensors;  // worst batch per tensor
  bool passed = false;
};

GradcheckResult gradcheck(const std::string& preset, int grid, std::uint64_t seed,
                          const GradcheckOptions& opts = {});

// ---- partition diagnostics ------------------------------------------------

struct PartitionReport {
  datakit::PartitionPlan plan;
  datakit::PartitionStats stats;
  int num_classes = 0;
};

// Partitions the training split of `source`.
PartitionReport partition_report(const engine::DatasetSource& source, int clients, double alpha, int min_samples,
                                 std::uint64_t seed);

std::string histogram_csv(const datakit::PartitionStats& stats, int num_classes);

// ---- CSV tables -----------------------------------------------------------

enum class TableKind { Report, Summary, Histogram };

struct CsvTable {
  TableKind kind = TableKind::Report;
  std::size_t rows = 0;
  std::vector<engine::CsvRow> report_rows;  // TableKind::Report only
};

const char* to_string(TableKind kind);
// Validates any CSV this tool emits, detected by its header.
CsvTable read_table(std::string_view text);
// Concatenates report-kind CSVs under one header.
std::string merge_report_csvs(const std::vector<std::string>& texts, std::size_t* rows = nullptr);

}  // namespace fkb::bench
