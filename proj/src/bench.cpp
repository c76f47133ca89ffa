#include "bench.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <limits>
#include <ostream>
#include <set>

namespace fkb::bench {

namespace fs = std::filesystem;

std::size_t SweepSpec::size() const { return expand(*this).size(); }

void SweepSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::Config, "sweep: " + msg); };
  if (axes.algorithms.empty() || axes.models.empty() || axes.alphas.empty() || axes.grid_sizes.empty()) {
    fail("every axis needs at least one value");
  }
  for (const auto& a : axes.algorithms) {
    if (!fedopt::parse_algorithm(a)) fail("unknown algorithm '" + a + "'");
  }
  for (const auto& m : axes.models) {
    if (!models::find_preset(m)) fail("unknown model preset '" + m + "'");
  }
  for (double a : axes.alphas) {
    if (!(a > 0.0) || !std::isfinite(a)) fail("alpha values must be positive");
  }
  for (int g : axes.grid_sizes) {
    if (g < 2) fail("grid sizes must be >= 2");
  }
  if (!base.is_object()) fail("base must be an object");
  if (output.empty()) fail("output directory is required");
  for (const auto& point : expand(*this)) {
    try {
      engine::config_from_json(point.config_doc(base));
    } catch (const Error& e) {
      fail(point.dir_name() + ": " + e.what());
    }
  }
}

const std::vector<std::string>& sweep_preset_names() {
  static const std::vector<std::string> names = {"fig1", "fig2", "ablation"};
  return names;
}

namespace {

std::vector<std::string> algorithm_names() {
  std::vector<std::string> out;
  for (auto a : fedopt::all_algorithms()) out.emplace_back(fedopt::to_string(a));
  return out;
}

}  // namespace

SweepSpec sweep_preset(const std::string& name) {
  SweepSpec s;
  s.preset = name;
  s.output = "sweep-" + name;
  if (name == "fig1") {
    s.axes = {algorithm_names(), {"kan-1", "mlp-3"}, {1.0}, {5}};
  } else if (name == "fig2") {
    s.axes = {algorithm_names(), {"kan-1"}, {0.001, 0.01, 0.1, 1.0}, {3, 5, 10}};
  } else if (name == "ablation") {
    // kan-w1 has the same hidden layer as kan-d1, so it is not repeated.
    s.axes = {{"fedavg"}, {"kan-d1", "kan-d3", "kan-d5", "kan-w3", "kan-w5"}, {1.0}, {5}};
  } else {
    throw Error(ErrorKind::Config, "unknown sweep preset '" + name + "' (fig1|fig2|ablation)");
  }
  return s;
}

SweepSpec sweep_from_json(const Json& doc) {
  if (!doc.is_object()) throw Error(ErrorKind::Config, "sweep file must be a JSON object");
  for (const auto& [key, _] : doc.items()) {
    if (key != "preset" && key != "axes" && key != "base" && key != "output") {
      throw Error(ErrorKind::Config, "sweep: '" + key + "' is not a recognized key");
    }
  }
  SweepSpec s;
  // Axes neither named by a preset nor listed explicitly hold one default value.
  s.axes = {{"fedavg"}, {"kan-1"}, {1.0}, {5}};
  if (doc.contains("preset")) {
    if (!doc["preset"].is_string()) throw Error(ErrorKind::Config, "sweep: 'preset' must be a string");
    s = sweep_preset(doc["preset"].get<std::string>());
  }
  if (doc.contains("axes")) {
    const Json& axes = doc["axes"];
    if (!axes.is_object()) throw Error(ErrorKind::Config, "sweep: 'axes' must be an object");
    for (const auto& [key, value] : axes.items()) {
      if (!value.is_array()) throw Error(ErrorKind::Config, "sweep: axes." + key + " must be an array");
      try {
        if (key == "algorithm") {
          s.axes.algorithms = value.get<std::vector<std::string>>();
        } else if (key == "model") {
          s.axes.models = value.get<std::vector<std::string>>();
        } else if (key == "alpha") {
          s.axes.alphas = value.get<std::vector<double>>();
        } else if (key == "grid_size") {
          s.axes.grid_sizes = value.get<std::vector<int>>();
        } else {
          throw Error(ErrorKind::Config, "sweep: axes." + key + " is not a recognized axis");
        }
      } catch (const nlohmann::json::exception&) {
        throw Error(ErrorKind::Config, "sweep: axes." + key + " has values of the wrong type");
      }
    }
  }
  if (doc.contains("base")) s.base = doc["base"];
  if (doc.contains("output")) {
    if (!doc["output"].is_string()) throw Error(ErrorKind::Config, "sweep: 'output' must be a string");
    s.output = doc["output"].get<std::string>();
  }
  s.validate();
  return s;
}

std::string SweepPoint::dir_name() const {
  return algorithm + "__" + model + "__alpha-" + engine::format_double(alpha) + "__g" + std::to_string(grid);
}

Json SweepPoint::config_doc(const Json& base) const {
  Json doc = base.is_null() ? Json::object() : base;
  engine::apply_override(doc, "local.algorithm", Json(algorithm).dump());
  engine::apply_override(doc, "model.preset", Json(model).dump());
  engine::apply_override(doc, "alpha", engine::format_double(alpha));
  if (grid > 0) engine::apply_override(doc, "model.grid_size", std::to_string(grid));
  return doc;
}

std::vector<SweepPoint> expand(const SweepSpec& spec) {
  std::vector<SweepPoint> points;
  for (const auto& a : spec.axes.algorithms) {
    for (const auto& m : spec.axes.models) {
      // Grid size only applies to KAN; MLP points carry grid 0 and appear once.
      const auto preset = models::find_preset(m);
      const bool kan = !preset || preset->kind == models::ModelKind::Kan;
      for (double alpha : spec.axes.alphas) {
        for (int g : spec.axes.grid_sizes) {
          points.push_back({a, m, alpha, kan ? g : 0});
          if (!kan) break;
        }
      }
    }
  }
  return points;
}

std::size_t SweepResult::succeeded() const {
  return static_cast<std::size_t>(std::count_if(points.begin(), points.end(), [](const auto& p) { return p.ok; }));
}

std::string summary_csv(const SweepResult& result) {
  std::string out = std::string(kSummaryCsvHeader) + "\n";
  for (const auto& p : result.points) {
    out += p.point.algorithm + "," + p.point.model + "," + engine::format_double(p.point.alpha) + "," +
           std::to_string(p.point.grid) + "," + (p.ok ? "ok" : "failed") + "," + std::to_string(p.completed_seeds) +
           ",";
    if (p.ok) {
      out += engine::format_double(p.final_accuracy_mean) + "," + engine::format_double(p.final_accuracy_std) + ",";
      if (p.convergence_round_mean) out += engine::format_double(*p.convergence_round_mean);
    } else {
      out += ",,";
    }
    out += "\n";
  }
  return out;
}

SweepResult run_sweep(const SweepSpec& spec, int threads, std::ostream* log) {
  spec.validate();
  fs::create_directories(spec.output);
  SweepResult result;
  std::string combined = std::string(engine::kReportCsvHeader) + "\n";
  for (const auto& point : expand(spec)) {
    PointOutcome outcome;
    outcome.point = point;
    try {
      const auto cfg = engine::config_from_json(point.config_doc(spec.base));
      const auto report = engine::run_federated(cfg, threads);
      const fs::path dir = spec.output / point.dir_name();
      fs::create_directories(dir);
      engine::write_text(dir / "report.json", engine::report_json_text(report));
      const auto csv = engine::report_to_csv(report, false);
      engine::write_text(dir / "report.csv", std::string(engine::kReportCsvHeader) + "\n" + csv);
      combined += csv;
      outcome.completed_seeds = report.seeds.size() - report.failed_seeds.size();
      outcome.ok = !report.all_failed();
      if (!outcome.ok) outcome.error = "all seeds diverged";
      outcome.final_accuracy_mean = report.final_accuracy_mean;
      outcome.final_accuracy_std = report.final_accuracy_std;
      outcome.convergence_round_mean = report.convergence_round_mean;
    } catch (const std::exception& e) {
      outcome.ok = false;
      outcome.error = e.what();
    }
    if (log) {
      *log << point.dir_name() << ": "
           << (outcome.ok ? "ok, final accuracy " + engine::format_double(outcome.final_accuracy_mean)
                          : "failed: " + outcome.error)
           << "\n";
    }
    result.points.push_back(std::move(outcome));
  }
  engine::write_text(spec.output / "sweep.csv", combined);
  engine::write_text(spec.output / "summary.csv", summary_csv(result));
  return result;
}

namespace {

constexpr double kKinkMargin = 1e-3;

double min_relu_margin(const models::Model& model, const numkit::Batch& batch) {
  const auto fwd = models::forward(model, batch);
  const auto& layers = model.layers();
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t li = 0; li + 1 < layers.size(); ++li) {
    if (layers[li].kan) continue;
    for (double v : fwd.cache.layers[li].pre.data) margin = std::min(margin, std::abs(v));
  }
  return margin;
}

}  // namespace

GradcheckResult gradcheck(const std::string& preset, int grid, std::uint64_t seed, const GradcheckOptions& opts) {
  const auto spec = models::spec_from_preset(preset, opts.input_dim, opts.classes, grid);
  Rng rng = make_stream(seed, StreamTag::GradCheck);
  auto model = models::build_model(spec, rng);
  // Non-zero biases so their gradients are not trivially structured.
  {
    auto params = model.params();
    std::normal_distribution<double> small(0.0, 0.1);
    for (std::size_t t = 1; t < params.layout().size(); t += 2) {
      for (double& b : params.segment(t)) b = small(rng);
    }
    model.set_params(std::move(params));
  }

  GradcheckResult result;
  result.preset = preset;
  result.grid = spec.kind == models::ModelKind::Kan ? grid : 0;
  const auto& layout = model.params().layout();
  result.tensors.resize(layout.size());
  for (std::size_t t = 0; t < layout.size(); ++t) result.tensors[t].name = layout[t].name;

  const std::size_t total = model.params().size();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, opts.classes - 1);

  for (int b = 0; b < opts.batches; ++b) {
    numkit::Batch batch{numkit::Matrix(static_cast<std::size_t>(opts.batch_rows),
                                       static_cast<std::size_t>(opts.input_dim)),
                        std::vector<int>(static_cast<std::size_t>(opts.batch_rows))};
    // Redraw batches that put a ReLU input next to its kink, where the
    // difference quotient straddles two linear pieces.
    for (int attempt = 0;; ++attempt) {
      for (double& v : batch.features.data) v = normal(rng);
      for (int& y : batch.labels) y = label(rng);
      if (min_relu_margin(model, batch) > kKinkMargin) break;
      if (attempt == 100) throw Error(ErrorKind::Numeric, "gradcheck: could not draw a batch away from ReLU kinks");
    }

    auto analytic = models::loss_and_gradient(model, batch).grad;
    if (opts.corrupt) {
      for (double& g : analytic.segment(0)) g *= 1.1;
    }

    // Coordinates per tensor, all of them when the model is small.
    std::vector<std::vector<std::size_t>> coords(layout.size());
    const std::size_t per_tensor = std::max<std::size_t>(8, opts.max_coords / layout.size());
    for (std::size_t t = 0; t < layout.size(); ++t) {
      const std::size_t off = model.params().offset(t);
      const std::size_t n = layout[t].size();
      std::vector<std::size_t> all(n);
      for (std::size_t i = 0; i < n; ++i) all[i] = off + i;
      if (total <= opts.max_coords || n <= per_tensor) {
        coords[t] = std::move(all);
      } else {
        std::sample(all.begin(), all.end(), std::back_inserter(coords[t]), per_tensor, rng);
      }
    }

    models::Model probe_model = model;
    const numkit::ScalarFn f = [&](const numkit::ParamVector& theta) {
      probe_model.set_params(theta);
      return models::loss(probe_model, batch);
    };

    std::vector<double> all_a, all_fd;
    for (std::size_t t = 0; t < layout.size(); ++t) {
      const auto fd = numkit::extrapolated_difference_gradient(f, model.params(), coords[t]);
      std::vector<double> a;
      a.reserve(coords[t].size());
      for (std::size_t k : coords[t]) a.push_back(analytic[k]);
      const double err = numkit::relative_error(a, fd);
      auto& te = result.tensors[t];
      te.rel_error = std::max(te.rel_error, err);
      te.checked = std::max(te.checked, coords[t].size());
      all_a.insert(all_a.end(), a.begin(), a.end());
      all_fd.insert(all_fd.end(), fd.begin(), fd.end());
    }
    result.max_rel_error = std::max(result.max_rel_error, numkit::relative_error(all_a, all_fd));
  }
  result.passed = result.max_rel_error <= opts.tolerance;
  return result;
}

PartitionReport partition_report(const engine::DatasetSource& source, int clients, double alpha, int min_samples,
                                 std::uint64_t seed) {
  const auto split = engine::prepare_data(source);
  PartitionReport out;
  out.num_classes = split.train.num_classes;
  out.plan = datakit::dirichlet_partition(split.train.labels, out.num_classes, clients, alpha, min_samples, seed);
  out.stats = datakit::partition_stats(out.plan, split.train.labels, out.num_classes);
  return out;
}

std::string histogram_csv(const datakit::PartitionStats& stats, int num_classes) {
  std::string out = "client";
  for (int c = 0; c < num_classes; ++c) out += ",class_" + std::to_string(c);
  out += "\n";
  for (std::size_t k = 0; k < stats.counts.size(); ++k) {
    out += std::to_string(k);
    for (std::size_t v : stats.counts[k]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

const char* to_string(TableKind kind) {
  switch (kind) {
    case TableKind::Report: return "report";
    case TableKind::Summary: return "summary";
    case TableKind::Histogram: return "histogram";
  }
  return "unknown";
}

namespace {

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
  }
  return lines;
}

std::vector<std::string_view> fields_of(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) return out;
    start = comma + 1;
  }
}

template <class T>
bool parses(std::string_view s) {
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

[[noreturn]] void table_error(std::size_t line, const std::string& msg) {
  throw Error(ErrorKind::Format, "csv line " + std::to_string(line) + ": " + msg);
}

std::string row_to_csv(const engine::CsvRow& r) {
  return std::to_string(r.seed) + "," + std::to_string(r.round) + "," + r.algorithm + "," + r.model + "," +
         engine::format_double(r.alpha) + "," + std::to_string(r.grid) + "," + engine::format_double(r.accuracy) +
         "," + engine::format_double(r.loss) + "\n";
}

}  // namespace

CsvTable read_table(std::string_view text) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw Error(ErrorKind::Format, "csv is empty");
  const auto header = lines.front();
  if (header == engine::kReportCsvHeader) {
    CsvTable t;
    t.kind = TableKind::Report;
    t.report_rows = engine::parse_report_csv(text);
    t.rows = t.report_rows.size();
    return t;
  }
  if (header == kSummaryCsvHeader) {
    CsvTable t;
    t.kind = TableKind::Summary;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const auto f = fields_of(lines[i]);
      if (f.size() != 9) table_error(i + 1, "expected 9 fields");
      if (!fedopt::parse_algorithm(f[0])) table_error(i + 1, "unknown algorithm");
      if (!models::find_preset(std::string(f[1]))) table_error(i + 1, "unknown model");
      if (!parses<double>(f[2]) || !parses<int>(f[3])) table_error(i + 1, "bad alpha/grid");
      if (f[4] != "ok" && f[4] != "failed") table_error(i + 1, "status must be ok or failed");
      if (!parses<std::size_t>(f[5])) table_error(i + 1, "bad completed_seeds");
      const bool ok = f[4] == "ok";
      if (ok && (!parses<double>(f[6]) || !parses<double>(f[7]))) table_error(i + 1, "bad accuracy statistics");
      if (!ok && (!f[6].empty() || !f[7].empty())) table_error(i + 1, "failed point carries statistics");
      if (!f[8].empty() && !parses<double>(f[8])) table_error(i + 1, "bad convergence_round_mean");
      ++t.rows;
    }
    return t;
  }
  const auto head = fields_of(header);
  if (head.size() >= 2 && head[0] == "client") {
    for (std::size_t c = 1; c < head.size(); ++c) {
      if (head[c] != "class_" + std::to_string(c - 1)) table_error(1, "bad histogram header");
    }
    CsvTable t;
    t.kind = TableKind::Histogram;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const auto f = fields_of(lines[i]);
      if (f.size() != head.size()) table_error(i + 1, "field count does not match header");
      for (auto v : f) {
        if (!parses<std::size_t>(v)) table_error(i + 1, "non-integer count");
      }
      ++t.rows;
    }
    return t;
  }
  throw Error(ErrorKind::Format, "unrecognized csv header '" + std::string(header) + "'");
}

std::string merge_report_csvs(const std::vector<std::string>& texts, std::size_t* rows) {
  std::string out = std::string(engine::kReportCsvHeader) + "\n";
  std::size_t count = 0;
  for (const auto& text : texts) {
    for (const auto& r : engine::parse_report_csv(text)) {
      out += row_to_csv(r);
      ++count;
    }
  }
  if (rows) *rows = count;
  return out;
}

}  // namespace fkb::bench
