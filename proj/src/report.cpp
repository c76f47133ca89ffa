#include "report.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fkb::engine {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& msg) {
  throw Error(ErrorKind::Config, "config: '" + path + "' " + msg);
}

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

void check_keys(const Json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) config_error(path.empty() ? "<root>" : path, "must be an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) config_error(join(path, key), "is not a recognized key");
  }
}

template <class T>
void read(const Json& obj, const std::string& path, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  const std::string full = join(path, key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!it->is_boolean()) config_error(full, "must be a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!it->is_number_integer()) config_error(full, "must be an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (it->is_number_integer() && !it->is_number_unsigned()) config_error(full, "must be non-negative");
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!it->is_number()) config_error(full, "must be a number");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!it->is_string()) config_error(full, "must be a string");
  }
  out = it->template get<T>();
}

template <class T>
void read_list(const Json& obj, const std::string& path, const char* key, std::vector<T>& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  const std::string full = join(path, key);
  if (!it->is_array()) config_error(full, "must be an array");
  std::vector<T> values;
  for (const auto& v : *it) {
    if (!v.is_number_integer() || (std::is_unsigned_v<T> && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      config_error(full, "must contain only non-negative integers");
    }
    values.push_back(v.template get<T>());
  }
  out = std::move(values);
}

}  // namespace

Json config_to_json(const FederationConfig& cfg) {
  Json j;
  j["clients"] = cfg.clients;
  j["participation"] = cfg.participation;
  j["rounds"] = cfg.rounds;
  j["alpha"] = cfg.alpha;
  j["min_samples"] = cfg.min_samples;
  j["seeds"] = cfg.seeds;
  j["convergence_fraction"] = cfg.convergence_fraction;

  const auto& l = cfg.local;
  j["local"] = {{"algorithm", fedopt::to_string(l.algorithm)},
                {"epochs", l.epochs},
                {"batch_size", l.batch_size},
                {"learning_rate", l.learning_rate},
                {"rho", l.rho},
                {"alpha_dyn", l.alpha_dyn},
                {"prox_weight", l.prox_weight},
                {"merge_alpha", l.merge_alpha}};

  const auto& m = cfg.model;
  models::ModelKind kind = m.kind;
  std::vector<int> hidden = m.hidden;
  if (!m.preset.empty()) {
    if (auto p = models::find_preset(m.preset, m.mlp_width)) {
      kind = p->kind;
      hidden = p->hidden_widths;
    }
  }
  j["model"] = {{"preset", m.preset},
                {"kind", models::to_string(kind)},
                {"hidden", hidden},
                {"grid_size", m.grid_size},
                {"grid_range", {m.grid_min, m.grid_max}},
                {"mlp_width", m.mlp_width}};

  const auto& d = cfg.dataset;
  j["dataset"] = {{"source", d.kind == DatasetSource::Kind::File ? "fkb" : "synthetic"},
                  {"path", d.path},
                  {"num_classes", d.num_classes},
                  {"dim", d.dim},
                  {"per_class", d.per_class},
                  {"spread", d.spread},
                  {"seed", d.seed},
                  {"test_fraction", d.test_fraction}};
  return j;
}

FederationConfig config_from_json(const Json& doc) {
  FederationConfig cfg;
  check_keys(doc, "", {"clients", "participation", "rounds", "alpha", "min_samples", "seeds",
                       "convergence_fraction", "local", "model", "dataset"});
  read(doc, "", "clients", cfg.clients);
  read(doc, "", "participation", cfg.participation);
  read(doc, "", "rounds", cfg.rounds);
  read(doc, "", "alpha", cfg.alpha);
  read(doc, "", "min_samples", cfg.min_samples);
  read_list(doc, "", "seeds", cfg.seeds);
  read(doc, "", "convergence_fraction", cfg.convergence_fraction);

  if (auto it = doc.find("local"); it != doc.end()) {
    const Json& l = *it;
    check_keys(l, "local", {"algorithm", "epochs", "batch_size", "learning_rate", "rho", "alpha_dyn",
                            "prox_weight", "merge_alpha"});
    std::string algo = fedopt::to_string(cfg.local.algorithm);
    read(l, "local", "algorithm", algo);
    auto parsed = fedopt::parse_algorithm(algo);
    if (!parsed) config_error("local.algorithm", "must be one of fedavg|feddyn|fedsam|fedgamma|fedsmoo|fedspeed");
    cfg.local.algorithm = *parsed;
    read(l, "local", "epochs", cfg.local.epochs);
    read(l, "local", "batch_size", cfg.local.batch_size);
    read(l, "local", "learning_rate", cfg.local.learning_rate);
    read(l, "local", "rho", cfg.local.rho);
    read(l, "local", "alpha_dyn", cfg.local.alpha_dyn);
    read(l, "local", "prox_weight", cfg.local.prox_weight);
    read(l, "local", "merge_alpha", cfg.local.merge_alpha);
  }

  if (auto it = doc.find("model"); it != doc.end()) {
    const Json& m = *it;
    check_keys(m, "model", {"preset", "kind", "hidden", "grid_size", "grid_range", "mlp_width"});
    auto& mc = cfg.model;
    read(m, "model", "preset", mc.preset);
    read(m, "model", "grid_size", mc.grid_size);
    read(m, "model", "mlp_width", mc.mlp_width);
    if (auto r = m.find("grid_range"); r != m.end()) {
      if (!r->is_array() || r->size() != 2 || !(*r)[0].is_number() || !(*r)[1].is_number()) {
        config_error("model.grid_range", "must be a [min, max] pair");
      }
      mc.grid_min = (*r)[0].get<double>();
      mc.grid_max = (*r)[1].get<double>();
    }
    const bool has_kind = m.contains("kind");
    const bool has_hidden = m.contains("hidden");
    std::string kind = models::to_string(mc.kind);
    read(m, "model", "kind", kind);
    if (kind != "kan" && kind != "mlp") config_error("model.kind", "must be 'kan' or 'mlp'");
    std::vector<int> hidden = mc.hidden;
    if (has_hidden) {
      const Json& h = m["hidden"];
      if (!h.is_array()) config_error("model.hidden", "must be an array");
      hidden.clear();
      for (const auto& v : h) {
        if (!v.is_number_integer()) config_error("model.hidden", "must contain integers");
        hidden.push_back(v.get<int>());
      }
    }
    const auto parsed_kind = kind == "kan" ? models::ModelKind::Kan : models::ModelKind::Mlp;
    if (!mc.preset.empty()) {
      auto p = models::find_preset(mc.preset, mc.mlp_width);
      if (!p) config_error("model.preset", "unknown preset '" + mc.preset + "'");
      if ((has_kind && parsed_kind != p->kind) || (has_hidden && hidden != p->hidden_widths)) {
        config_error("model", "kind/hidden conflict with preset '" + mc.preset + "'");
      }
      mc.kind = p->kind;
      mc.hidden = p->hidden_widths;
    } else {
      mc.kind = parsed_kind;
      mc.hidden = hidden;
    }
  }

  if (auto it = doc.find("dataset"); it != doc.end()) {
    const Json& d = *it;
    check_keys(d, "dataset", {"source", "path", "num_classes", "dim", "per_class", "spread", "seed",
                              "test_fraction"});
    auto& ds = cfg.dataset;
    std::string source = ds.kind == DatasetSource::Kind::File ? "fkb" : "synthetic";
    read(d, "dataset", "source", source);
    if (source == "synthetic") {
      ds.kind = DatasetSource::Kind::Synthetic;
    } else if (source == "fkb") {
      ds.kind = DatasetSource::Kind::File;
    } else {
      config_error("dataset.source", "must be 'synthetic' or 'fkb'");
    }
    read(d, "dataset", "path", ds.path);
    read(d, "dataset", "num_classes", ds.num_classes);
    read(d, "dataset", "dim", ds.dim);
    read(d, "dataset", "per_class", ds.per_class);
    read(d, "dataset", "spread", ds.spread);
    read(d, "dataset", "seed", ds.seed);
    read(d, "dataset", "test_fraction", ds.test_fraction);
  }
  cfg.validate();
  return cfg;
}

void apply_override(Json& doc, std::string_view dotted_key, std::string_view value) {
  if (dotted_key.empty()) throw Error(ErrorKind::Config, "empty override key");
  Json parsed = Json::parse(value.begin(), value.end(), nullptr, false);
  if (parsed.is_discarded()) parsed = std::string(value);

  Json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = dotted_key.find('.', start);
    const std::string key(dotted_key.substr(start, dot == std::string_view::npos ? dotted_key.npos : dot - start));
    if (key.empty()) throw Error(ErrorKind::Config, "malformed override key '" + std::string(dotted_key) + "'");
    if (!node->is_object()) {
      if (!node->is_null()) {
        throw Error(ErrorKind::Config, "override '" + std::string(dotted_key) + "' descends into a non-object");
      }
      *node = Json::object();
    }
    if (dot == std::string_view::npos) {
      (*node)[key] = std::move(parsed);
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot open config file '" + path.string() + "'");
  Json doc = Json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorKind::Config, "'" + path.string() + "' is not valid JSON");
  return doc;
}

Json report_to_json(const RunReport& report, bool include_timing) {
  Json j;
  j["schema"] = kReportSchema;
  j["config"] = config_to_json(report.config);
  Json seeds = Json::array();
  for (const auto& s : report.seeds) {
    Json js;
    js["seed"] = s.seed;
    js["status"] = s.failed ? "failed" : "ok";
    js["error"] = s.failed ? Json(s.error) : Json(nullptr);
    js["convergence_round"] = s.convergence_round ? Json(*s.convergence_round) : Json(nullptr);
    js["final_accuracy"] = !s.failed && !s.rounds.empty() ? Json(s.rounds.back().test_accuracy) : Json(nullptr);
    Json rounds = Json::array();
    for (const auto& r : s.rounds) {
      Json jr = {{"round", r.round},
                 {"test_accuracy", r.test_accuracy},
                 {"test_loss", r.test_loss},
                 {"mean_local_loss", r.mean_local_loss},
                 {"participants", r.participants}};
      if (include_timing) jr["wall_ms"] = r.wall_ms;
      rounds.push_back(std::move(jr));
    }
    js["rounds"] = std::move(rounds);
    seeds.push_back(std::move(js));
  }
  j["seeds"] = std::move(seeds);
  j["summary"] = {{"final_accuracy_mean", report.final_accuracy_mean},
                  {"final_accuracy_std", report.final_accuracy_std},
                  {"convergence_round_mean",
                   report.convergence_round_mean ? Json(*report.convergence_round_mean) : Json(nullptr)},
                  {"completed_seeds", report.seeds.size() - report.failed_seeds.size()},
                  {"failed_seeds", report.failed_seeds}};
  return j;
}

std::string report_json_text(const RunReport& report, bool include_timing) {
  return report_to_json(report, include_timing).dump(2) + "\n";
}

std::string report_to_csv(const RunReport& report, bool header) {
  std::string out;
  if (header) out += std::string(kReportCsvHeader) + "\n";
  const auto& cfg = report.config;
  const std::string algo = fedopt::to_string(cfg.local.algorithm);
  const std::string model = cfg.model.label();
  const std::string alpha = format_double(cfg.alpha);
  const bool kan = !cfg.model.preset.empty()
                       ? models::find_preset(cfg.model.preset)->kind == models::ModelKind::Kan
                       : cfg.model.kind == models::ModelKind::Kan;
  const std::string grid = std::to_string(kan ? cfg.model.grid_size : 0);
  for (const auto& s : report.seeds) {
    if (s.failed) continue;
    for (const auto& r : s.rounds) {
      out += std::to_string(s.seed) + "," + std::to_string(r.round) + "," + algo + "," + model + "," + alpha + "," +
             grid + "," + format_double(r.test_accuracy) + "," + format_double(r.test_loss) + "\n";
    }
  }
  return out;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view s, std::size_t line_no, const char* field) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorKind::Format, "csv line " + std::to_string(line_no) + ": bad " + field + " '" +
                                       std::string(s) + "'");
  }
  return v;
}

}  // namespace

std::vector<CsvRow> parse_report_csv(std::string_view text) {
  std::vector<CsvRow> rows;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool saw_header = false;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!saw_header) {
      if (line != kReportCsvHeader) {
        throw Error(ErrorKind::Format, "csv header mismatch: expected '" + std::string(kReportCsvHeader) + "'");
      }
      saw_header = true;
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 8) {
      throw Error(ErrorKind::Format, "csv line " + std::to_string(line_no) + ": expected 8 fields");
    }
    CsvRow r;
    r.seed = parse_number<std::uint64_t>(f[0], line_no, "seed");
    r.round = parse_number<int>(f[1], line_no, "round");
    r.algorithm = std::string(f[2]);
    r.model = std::string(f[3]);
    r.alpha = parse_number<double>(f[4], line_no, "alpha");
    r.grid = parse_number<int>(f[5], line_no, "grid");
    r.accuracy = parse_number<double>(f[6], line_no, "accuracy");
    r.loss = parse_number<double>(f[7], line_no, "loss");
    if (!fedopt::parse_algorithm(r.algorithm)) {
      throw Error(ErrorKind::Format, "csv line " + std::to_string(line_no) + ": unknown algorithm");
    }
    if (r.accuracy < 0.0 || r.accuracy > 1.0) {
      throw Error(ErrorKind::Format, "csv line " + std::to_string(line_no) + ": accuracy outside [0, 1]");
    }
    rows.push_back(std::move(r));
  }
  if (!saw_header) throw Error(ErrorKind::Format, "csv is empty");
  return rows;
}

void cross_check(const Json& report, const std::vector<CsvRow>& rows) {
  if (!report.is_object() || report.value("schema", "") != kReportSchema) {
    throw Error(ErrorKind::Format, std::string("report json: schema is not ") + kReportSchema);
  }
  std::map<std::pair<std::uint64_t, int>, const CsvRow*> index;
  for (const auto& r : rows) {
    if (!index.emplace(std::make_pair(r.seed, r.round), &r).second) {
      throw Error(ErrorKind::Format, "csv has duplicate (seed, round) rows");
    }
  }
  try {
    const std::string algo = report.at("config").at("local").at("algorithm").get<std::string>();
    std::size_t matched = 0;
    for (const auto& s : report.at("seeds")) {
      if (s.at("status") != "ok") continue;
      const auto seed = s.at("seed").get<std::uint64_t>();
      for (const auto& r : s.at("rounds")) {
        const int round = r.at("round").get<int>();
        auto it = index.find({seed, round});
        if (it == index.end()) {
          throw Error(ErrorKind::Format, "csv is missing seed " + std::to_string(seed) + " round " +
                                             std::to_string(round));
        }
        const CsvRow& row = *it->second;
        if (row.accuracy != r.at("test_accuracy").get<double>() || row.loss != r.at("test_loss").get<double>() ||
            row.algorithm != algo) {
          throw Error(ErrorKind::Format, "csv disagrees with json at seed " + std::to_string(seed) + " round " +
                                             std::to_string(round));
        }
        ++matched;
      }
    }
    if (matched != rows.size()) throw Error(ErrorKind::Format, "csv has rows not present in the json report");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, std::string("report json: ") + e.what());
  }
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fkb::engine
