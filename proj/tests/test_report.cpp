#include <filesystem>
#include <set>

#include "bench.hpp"
#include "doctest.h"
#include "report.hpp"

using namespace fkb;
using namespace fkb::engine;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::Io;
}

Json tiny_doc() {
  return Json::parse(R"({"clients": 4, "participation": 0.5, "rounds": 2, "seeds": [1, 2],
    "local": {"epochs": 1, "batch_size": 16},
    "dataset": {"num_classes": 3, "dim": 5, "per_class": 20}})");
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("fkb_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("config echo roundtrips") {
  FederationConfig cfg;
  cfg.clients = 17;
  cfg.local.algorithm = fedopt::Algorithm::FedSmoo;
  cfg.model.preset = "mlp-3";
  cfg.model.kind = models::ModelKind::Mlp;
  cfg.model.hidden = {64, 64};
  cfg.dataset.seed = 12;
  const auto doc = config_to_json(cfg);
  CHECK(doc["local"]["algorithm"] == "fedsmoo");
  CHECK(doc["model"]["preset"] == "mlp-3");
  const auto back = config_from_json(doc);
  CHECK(config_to_json(back).dump() == doc.dump());
}

TEST_CASE("missing keys keep defaults, unknown keys are rejected") {
  const auto cfg = config_from_json(Json::parse(R"({"rounds": 7})"));
  CHECK(cfg.rounds == 7);
  CHECK(cfg.clients == 100);
  CHECK(cfg.participation == 0.1);
  CHECK(cfg.seeds.size() == 5);
  CHECK(kind_of([] { config_from_json(Json::parse(R"({"round": 7})")); }) == ErrorKind::Config);
  CHECK(kind_of([] { config_from_json(Json::parse(R"({"local": {"epoch": 1}})")); }) == ErrorKind::Config);
  CHECK(kind_of([] { config_from_json(Json::parse(R"({"rounds": "ten"})")); }) == ErrorKind::Config);
  CHECK(kind_of([] { config_from_json(Json::parse(R"({"local": {"algorithm": "sgd"}})")); }) == ErrorKind::Config);
  CHECK(kind_of([] { config_from_json(Json::parse(R"({"local": {"epochs": 0}})")); }) == ErrorKind::Config);
  CHECK(kind_of([] { config_from_json(Json::parse(R"([1, 2])")); }) == ErrorKind::Config);
}

TEST_CASE("dotted overrides") {
  auto doc = tiny_doc();
  apply_override(doc, "local.epochs", "3");
  apply_override(doc, "local.algorithm", "FedDyn");
  apply_override(doc, "alpha", "0.01");
  apply_override(doc, "seeds", "[4,5]");
  const auto cfg = config_from_json(doc);
  CHECK(cfg.local.epochs == 3);
  CHECK(cfg.local.algorithm == fedopt::Algorithm::FedDyn);
  CHECK(cfg.alpha == 0.01);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{4, 5});
  apply_override(doc, "local.epochs", "0");
  CHECK(kind_of([&] { config_from_json(doc); }) == ErrorKind::Config);
  auto bad = tiny_doc();
  apply_override(bad, "local.typo", "1");
  CHECK(kind_of([&] { config_from_json(bad); }) == ErrorKind::Config);
}

TEST_CASE("model preset and explicit shape") {
  auto doc = tiny_doc();
  doc["model"] = Json::parse(R"({"preset": "", "kind": "kan", "hidden": [7, 3], "grid_size": 4})");
  const auto cfg = config_from_json(doc);
  const auto spec = cfg.model.resolve(5, 3);
  CHECK(spec.hidden_widths == std::vector<int>{7, 3});
  CHECK(spec.grid_size == 4);
  auto conflict = tiny_doc();
  conflict["model"] = Json::parse(R"({"preset": "kan-d3", "hidden": [9]})");
  CHECK(kind_of([&] { config_from_json(conflict); }) == ErrorKind::Config);
}

TEST_CASE("missing config file is a config error naming the path") {
  try {
    read_json_file("/no/such/dir/config.json");
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
    CHECK(std::string(e.what()).find("/no/such/dir/config.json") != std::string::npos);
  }
}

TEST_CASE("double formatting is shortest round trip") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
  CHECK(format_double(0.001) == "0.001");
  for (double v : {1.0 / 3.0, 2.0794415416798357, 1e-300, 123456.789}) {
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("report json and csv cross-validate") {
  const auto cfg = config_from_json(tiny_doc());
  const auto rep = run_federated(cfg, 2);
  const auto json = report_to_json(rep);
  CHECK(json["schema"] == "fkb-report/1");
  CHECK(json.dump().find("wall_ms") == std::string::npos);
  CHECK(report_to_json(rep, true).dump().find("wall_ms") != std::string::npos);
  const auto csv = report_to_csv(rep);
  CHECK(csv.rfind(std::string(kReportCsvHeader) + "\n", 0) == 0);
  const auto rows = parse_report_csv(csv);
  CHECK(rows.size() == 4);
  CHECK(rows[0].algorithm == "fedavg");
  CHECK(rows[0].model == "kan-1");
  CHECK(rows[0].grid == 5);
  CHECK_NOTHROW(cross_check(json, rows));
  auto tampered = rows;
  tampered[1].accuracy += 0.001;
  CHECK(kind_of([&] { cross_check(json, tampered); }) == ErrorKind::Format);
  tampered = rows;
  tampered.pop_back();
  CHECK(kind_of([&] { cross_check(json, tampered); }) == ErrorKind::Format);
  CHECK(report_json_text(rep) == report_json_text(run_federated(cfg, 1)));
}

TEST_CASE("csv reader rejects malformed input") {
  const std::string h = std::string(kReportCsvHeader) + "\n";
  CHECK(parse_report_csv(h).empty());
  CHECK(parse_report_csv(h + "1,1,fedavg,kan-1,1,5,0.5,1.2\n").size() == 1);
  CHECK(kind_of([&] { parse_report_csv("seed,round\n"); }) == ErrorKind::Format);
  CHECK(kind_of([&] { parse_report_csv(h + "1,1,fedavg,kan-1,1,5,0.5\n"); }) == ErrorKind::Format);
  CHECK(kind_of([&] { parse_report_csv(h + "1,x,fedavg,kan-1,1,5,0.5,1\n"); }) == ErrorKind::Format);
}

TEST_CASE("sweep presets have the paper's grid sizes") {
  CHECK(bench::sweep_preset("fig1").size() == 12);
  CHECK(bench::sweep_preset("fig2").size() == 72);
  CHECK(bench::sweep_preset("ablation").size() == 5);
  CHECK(kind_of([] { bench::sweep_preset("fig9"); }) == ErrorKind::Config);
  const auto pts = bench::expand(bench::sweep_preset("ablation"));
  for (const auto& p : pts) CHECK(p.algorithm == "fedavg");
  CHECK(pts[0].dir_name() == "fedavg__kan-d1__alpha-1__g5");
  const auto fig1 = bench::expand(bench::sweep_preset("fig1"));
  std::set<std::string> names;
  for (const auto& p : fig1) names.insert(p.dir_name());
  CHECK(names.size() == 12);
  CHECK(names.count("fedspeed__mlp-3__alpha-1__g0") == 1);
}

TEST_CASE("sweep file parsing") {
  const auto spec = bench::sweep_from_json(Json::parse(
      R"({"preset": "fig1", "axes": {"algorithm": ["fedavg"]}, "base": {"rounds": 2}, "output": "x"})"));
  CHECK(spec.size() == 2);
  CHECK(spec.output == "x");
  CHECK(kind_of([] { bench::sweep_from_json(Json::parse(R"({"axes": {"algo": ["fedavg"]}})")); }) ==
        ErrorKind::Config);
  CHECK(kind_of([] { bench::sweep_from_json(Json::parse(R"({"axes": {"algorithm": []}})")); }) ==
        ErrorKind::Config);
}

TEST_CASE("small sweep writes consistent outputs") {
  auto spec = bench::sweep_from_json(Json::parse(R"({"axes": {"algorithm": ["fedavg", "fedsam"],
      "model": ["kan-1", "mlp-1"], "alpha": [1.0], "grid_size": [3]}})"));
  spec.base = tiny_doc();
  spec.output = scratch("sweep");
  const auto result = bench::run_sweep(spec, 2);
  CHECK(result.succeeded() == 4);
  const auto summary = bench::read_table(read_text(spec.output / "summary.csv"));
  CHECK(summary.kind == bench::TableKind::Summary);
  CHECK(summary.rows == 4);
  const auto sweep = bench::read_table(read_text(spec.output / "sweep.csv"));
  CHECK(sweep.kind == bench::TableKind::Report);
  CHECK(sweep.rows == 4 * 2 * 2);
  const auto dir = spec.output / "fedsam__kan-1__alpha-1__g3";
  CHECK(std::filesystem::exists(dir / "report.json"));
  cross_check(read_json_file(dir / "report.json"), parse_report_csv(read_text(dir / "report.csv")));
  std::size_t merged = 0;
  bench::merge_report_csvs({read_text(dir / "report.csv"), read_text(spec.output / "sweep.csv")}, &merged);
  CHECK(merged == 4 + 16);
  std::filesystem::remove_all(spec.output);
}

TEST_CASE("failed sweep points are recorded") {
  auto spec = bench::sweep_from_json(Json::parse(R"({"axes": {"algorithm": ["fedavg"], "model": ["mlp-2", "kan-1"]}})"));
  spec.base = tiny_doc();
  spec.base["local"]["learning_rate"] = 1e300;
  spec.output = scratch("sweep_fail");
  const auto result = bench::run_sweep(spec, 1);
  REQUIRE(result.points.size() == 2);
  CHECK_FALSE(result.points[1].ok == result.points[0].ok);
  const auto text = read_text(spec.output / "summary.csv");
  CHECK(text.find(",failed,0,,,") != std::string::npos);
  CHECK(bench::read_table(text).rows == 2);
  std::filesystem::remove_all(spec.output);
}

TEST_CASE("gradcheck result and negative control") {
  const auto ok = bench::gradcheck("kan-d3", 5, 1);
  CHECK(ok.passed);
  CHECK(ok.max_rel_error <= 1e-4);
  CHECK(ok.tensors.size() == 8);
  bench::GradcheckOptions opts;
  opts.corrupt = true;
  const auto bad = bench::gradcheck("mlp-3", 5, 1, opts);
  CHECK_FALSE(bad.passed);
  CHECK(bad.tensors[0].rel_error > 1e-4);
  CHECK(bench::gradcheck("mlp-3", 5, 1).passed);
}

TEST_CASE("partition report and histogram table") {
  DatasetSource src;
  src.per_class = 50;
  const auto one = bench::partition_report(src, 1, 0.5, 2, 1);
  CHECK(one.stats.heterogeneity == 0.0);
  const auto rep = bench::partition_report(src, 20, 1.0, 2, 1);
  const auto csv = bench::histogram_csv(rep.stats, rep.num_classes);
  const auto table = bench::read_table(csv);
  CHECK(table.kind == bench::TableKind::Histogram);
  CHECK(table.rows == 20);
  CHECK(csv.rfind("client,class_0,class_1,class_2,class_3,class_4,class_5,class_6,class_7\n", 0) == 0);
  CHECK(kind_of([] { bench::read_table("what,ever\n1,2\n"); }) == ErrorKind::Format);
}

TEST_CASE("config accepts seeds built from signed integers") {
  engine::Json doc = engine::Json::object();
  doc["seeds"] = {1, 2, 3};
  CHECK(engine::config_from_json(doc).seeds == std::vector<std::uint64_t>{1, 2, 3});
  doc["seeds"] = {1, -2};
  CHECK_THROWS(engine::config_from_json(doc));
}
