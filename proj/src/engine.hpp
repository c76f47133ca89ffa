#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "datakit.hpp"
#include "fedopt.hpp"
#include "models.hpp"

namespace fkb::engine {

struct DatasetSource {
  enum class Kind { Synthetic, File };
  Kind kind = Kind::Synthetic;
  std::string path;  // Kind::File
  int num_classes = 8;
  int dim = 64;
  int per_class = 625;
  double spread = 0.75;
  std::uint64_t seed = 0;  // generation and train/test split
  double test_fraction = 0.2;
};

struct ModelConfig {
  std::string preset = "kan-1";  // empty: use kind + hidden
  models::ModelKind kind = models::ModelKind::Kan;
  std::vector<int> hidden = {5};
  int grid_size = 5;
  double grid_min = -2.0;
  double grid_max = 2.0;
  int mlp_width = 64;

  models::ModelSpec resolve(int input_dim, int output_dim) const;
  std::string label() const;  // preset name, or "custom-kan"/"custom-mlp"
};

struct FederationConfig {
  int clients = 100;
  double participation = 0.1;
  int rounds = 100;
  double alpha = 1.0;  // Dirichlet concentration
  int min_samples = datakit::kDefaultMinSamples;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  double convergence_fraction = 0.99;
  fedopt::LocalTrainConfig local;
  ModelConfig model;
  DatasetSource dataset;

  void validate() const;
};

struct RoundRecord {
  int round = 0;
  double test_accuracy = 0.0;
  double test_loss = 0.0;
  double mean_local_loss = 0.0;
  std::vector<int> participants;
  std::int64_t wall_ms = 0;
};

struct SeedRun {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  std::vector<RoundRecord> rounds;
  std::optional<int> convergence_round;
};

struct RunReport {
  FederationConfig config;
  std::vector<SeedRun> seeds;
  double final_accuracy_mean = 0.0;
  double final_accuracy_std = 0.0;
  std::optional<double> convergence_round_mean;
  std::vector<std::uint64_t> failed_seeds;

  bool all_failed() const { return failed_seeds.size() == seeds.size(); }
};

// Uniform sample of max(1, round(participation * N)) ids, sorted ascending.
std::vector<int> sample_clients(int round, int clients, double participation, std::uint64_t run_seed);

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;
};

// Ties in argmax resolve to the lowest class index.
Evaluation evaluate(const numkit::ParamVector& params, const models::ModelSpec& spec,
                    const datakit::Dataset& testset);

// First 1-based round with accuracy >= fraction * mean(last min(10, n) rounds).
std::optional<int> convergence_round(const std::vector<double>& series, double fraction);

// Standardized train/test data for a dataset source.
datakit::Split prepare_data(const DatasetSource& source);
datakit::Dataset raw_dataset(const DatasetSource& source);

// FKB_THREADS when requested <= 0, else hardware concurrency.
int resolve_threads(int requested);

// One seed's simulation state.
class Simulation {
 public:
  Simulation(const FederationConfig& cfg, std::shared_ptr<const datakit::Split> data, std::uint64_t seed);

  const fedopt::ServerState& server() const { return server_; }
  const datakit::PartitionPlan& plan() const { return plan_; }
  const models::Model& model() const { return model_; }
  const std::vector<fedopt::ClientState>& clients() const { return clients_; }

  // Samples, trains participants (up to `threads` at once), aggregates and
  // evaluates.
  RoundRecord run_round(int threads);

 private:
  const FederationConfig& cfg_;
  std::shared_ptr<const datakit::Split> data_;
  std::uint64_t seed_;
  datakit::PartitionPlan plan_;
  models::Model model_;
  fedopt::ServerState server_;
  std::vector<fedopt::ClientState> clients_;
};

RunReport run_federated(const FederationConfig& cfg, int threads = 0);

// Mean/std/convergence fields recomputed from the per-seed series.
void summarize(RunReport& report);

}  // namespace fkb::engine
