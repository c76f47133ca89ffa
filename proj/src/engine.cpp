#include "engine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <numeric>
#include <thread>

namespace fkb::engine {

models::ModelSpec ModelConfig::resolve(int input_dim, int output_dim) const {
  if (!preset.empty()) return models::spec_from_preset(preset, input_dim, output_dim, grid_size, mlp_width);
  models::ModelSpec spec;
  spec.kind = kind;
  spec.hidden_widths = hidden;
  spec.input_dim = input_dim;
  spec.output_dim = output_dim;
  spec.grid_size = grid_size;
  spec.grid_min = grid_min;
  spec.grid_max = grid_max;
  spec.validate();
  return spec;
}

std::string ModelConfig::label() const {
  if (!preset.empty()) return preset;
  return std::string("custom-") + models::to_string(kind);
}

void FederationConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::Config, msg); };
  if (clients < 1) fail("clients must be >= 1");
  if (!(participation > 0.0 && participation <= 1.0)) fail("participation must lie in (0, 1]");
  if (rounds < 1) fail("rounds must be >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) fail("alpha must be positive");
  if (min_samples < 1) fail("min_samples must be >= 1");
  if (seeds.empty()) fail("seeds must be non-empty");
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    for (std::size_t j = i + 1; j < seeds.size(); ++j) {
      if (seeds[i] == seeds[j]) fail("seeds must be distinct");
    }
  }
  if (!(convergence_fraction > 0.0 && convergence_fraction <= 1.0)) {
    fail("convergence_fraction must lie in (0, 1]");
  }
  local.validate();
  if ((local.algorithm == fedopt::Algorithm::FedDyn || local.algorithm == fedopt::Algorithm::FedSmoo) &&
      local.alpha_dyn == 0.0) {
    fail(std::string(fedopt::to_string(local.algorithm)) + " requires local.alpha_dyn > 0");
  }
  if (!model.preset.empty() && !models::find_preset(model.preset)) {
    fail("unknown model preset '" + model.preset + "'");
  }
  if (model.grid_size < 2) fail("model.grid_size must be >= 2");
  if (model.mlp_width < 1) fail("model.mlp_width must be >= 1");
  if (dataset.kind == DatasetSource::Kind::File && dataset.path.empty()) fail("dataset.path is required");
  if (!(dataset.test_fraction > 0.0 && dataset.test_fraction < 1.0)) {
    fail("dataset.test_fraction must lie in (0, 1)");
  }
  // Real input/output dims are known only after loading the data.
  try {
    model.resolve(2, 2);
  } catch (const Error& e) {
    fail(e.what());
  }
}

std::vector<int> sample_clients(int round, int clients, double participation, std::uint64_t run_seed) {
  const auto want = static_cast<int>(std::lround(participation * clients));
  const auto k = static_cast<std::size_t>(std::clamp(want, 1, clients));
  Rng rng = make_stream(run_seed, StreamTag::Sampling, {static_cast<std::uint64_t>(round)});
  auto order = fedopt::shuffle_order(static_cast<std::size_t>(clients), rng);
  std::vector<int> ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(ids.begin(), ids.end());
  return ids;
}

Evaluation evaluate(const numkit::ParamVector& params, const models::ModelSpec& spec,
                    const datakit::Dataset& testset) {
  if (testset.size() == 0) throw Error(ErrorKind::Config, "evaluate: empty test set");
  const models::Model model(spec, params);
  const auto logits = models::predict(model, testset.features);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const auto row = logits.row(r);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == testset.labels[r]) ++correct;
  }
  const double loss = numkit::softmax_cross_entropy(logits, testset.labels).loss;
  return {static_cast<double>(correct) / static_cast<double>(testset.size()), loss};
}

std::optional<int> convergence_round(const std::vector<double>& series, double fraction) {
  if (series.empty()) return std::nullopt;
  const std::size_t tail = std::min<std::size_t>(10, series.size());
  double sum = 0.0;
  for (std::size_t i = series.size() - tail; i < series.size(); ++i) sum += series[i];
  const double threshold = fraction * (sum / static_cast<double>(tail));
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i] >= threshold) return static_cast<int>(i + 1);
  }
  return std::nullopt;
}

datakit::Dataset raw_dataset(const DatasetSource& source) {
  if (source.kind == DatasetSource::Kind::File) return datakit::load_dataset(source.path);
  Rng rng = make_stream(source.seed, StreamTag::Data);
  return datakit::synthetic_blobs(source.num_classes, source.dim, source.per_class, source.spread, rng);
}

datakit::Split prepare_data(const DatasetSource& source) {
  const auto ds = raw_dataset(source);
  Rng rng = make_stream(source.seed, StreamTag::Split);
  auto split = datakit::stratified_split(ds, source.test_fraction, rng);
  datakit::standardize(split.train, split.test);
  return split;
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("FKB_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(std::min<long>(v, 1024));
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

namespace {

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body) {
  const auto workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) body(i);
    });
  }
}

}  // namespace

Simulation::Simulation(const FederationConfig& cfg, std::shared_ptr<const datakit::Split> data,
                       std::uint64_t seed)
    : cfg_(cfg), data_(std::move(data)), seed_(seed) {
  const auto& train = data_->train;
  plan_ = datakit::dirichlet_partition(train.labels, train.num_classes, cfg_.clients, cfg_.alpha,
                                       cfg_.min_samples, seed_);
  const auto spec = cfg_.model.resolve(static_cast<int>(train.dim()), train.num_classes);
  Rng init = make_stream(seed_, StreamTag::Init);
  model_ = models::build_model(spec, init);
  server_ = fedopt::ServerState::initial(model_.params());
  clients_.resize(static_cast<std::size_t>(cfg_.clients));
  for (int i = 0; i < cfg_.clients; ++i) clients_[static_cast<std::size_t>(i)].client_id = i;
}

RoundRecord Simulation::run_round(int threads) {
  const auto started = std::chrono::steady_clock::now();
  const int round = server_.round_index + 1;
  RoundRecord rec;
  rec.round = round;
  rec.participants = sample_clients(round, cfg_.clients, cfg_.participation, seed_);

  const auto& train = data_->train;
  std::vector<fedopt::LocalResult> results(rec.participants.size());
  std::vector<std::exception_ptr> errors(rec.participants.size());
  const fedopt::ServerState& snapshot = server_;
  parallel_for(rec.participants.size(), threads, [&](std::size_t k) {
    const int id = rec.participants[k];
    try {
      const auto& client = clients_[static_cast<std::size_t>(id)];
      fedopt::ClientData data{&train.features, &train.labels, plan_.assignments[static_cast<std::size_t>(id)]};
      Rng rng = make_stream(seed_, StreamTag::Client,
                            {static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(id)});
      results[k] = fedopt::local_train(model_, snapshot, client, data, cfg_.local, rng, round);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  });
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<fedopt::ClientReturn> returns;
  returns.reserve(results.size());
  double loss_sum = 0.0;
  for (std::size_t k = 0; k < results.size(); ++k) {
    auto& client = clients_[static_cast<std::size_t>(rec.participants[k])];
    returns.push_back(fedopt::make_return(client, results[k]));
    client = std::move(results[k].state);
    const auto& trace = results[k].loss_trace;
    loss_sum += std::accumulate(trace.begin(), trace.end(), 0.0) / static_cast<double>(trace.size());
  }
  rec.mean_local_loss = loss_sum / static_cast<double>(results.size());

  server_ = fedopt::server_update(cfg_.local, server_, std::move(returns), cfg_.clients);
  for (double v : server_.global_params.values()) {
    if (!std::isfinite(v)) {
      throw DivergenceError(round, -1, "non-finite global parameters after aggregation in round " +
                                           std::to_string(round));
    }
  }

  const auto eval = evaluate(server_.global_params, model_.spec(), data_->test);
  rec.test_accuracy = eval.accuracy;
  rec.test_loss = eval.loss;
  rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started)
                    .count();
  return rec;
}

void summarize(RunReport& report) {
  report.failed_seeds.clear();
  std::vector<double> finals;
  std::vector<double> conv;
  for (auto& s : report.seeds) {
    if (s.failed) {
      report.failed_seeds.push_back(s.seed);
      continue;
    }
    std::vector<double> series;
    for (const auto& r : s.rounds) series.push_back(r.test_accuracy);
    s.convergence_round = convergence_round(series, report.config.convergence_fraction);
    if (!series.empty()) finals.push_back(series.back());
    if (s.convergence_round) conv.push_back(*s.convergence_round);
  }
  report.final_accuracy_mean = 0.0;
  report.final_accuracy_std = 0.0;
  report.convergence_round_mean.reset();
  if (!finals.empty()) {
    const double n = static_cast<double>(finals.size());
    const double mean = std::accumulate(finals.begin(), finals.end(), 0.0) / n;
    double var = 0.0;
    for (double f : finals) var += (f - mean) * (f - mean);
    report.final_accuracy_mean = mean;
    report.final_accuracy_std = std::sqrt(var / n);
  }
  if (!conv.empty()) {
    report.convergence_round_mean = std::accumulate(conv.begin(), conv.end(), 0.0) / static_cast<double>(conv.size());
  }
}

RunReport run_federated(const FederationConfig& cfg, int threads) {
  cfg.validate();
  const int workers = resolve_threads(threads);
  auto data = std::make_shared<const datakit::Split>(prepare_data(cfg.dataset));

  RunReport report;
  report.config = cfg;
  for (std::uint64_t seed : cfg.seeds) {
    SeedRun run;
    run.seed = seed;
    try {
      Simulation sim(report.config, data, seed);
      for (int r = 0; r < cfg.rounds; ++r) run.rounds.push_back(sim.run_round(workers));
    } catch (const DivergenceError& e) {
      run.failed = true;
      run.error = e.what();
    }
    report.seeds.push_back(std::move(run));
  }
  summarize(report);
  return report;
}

}  // namespace fkb::engine
