#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "models.hpp"
#include "rng.hpp"

namespace fkb::fedopt {

using numkit::GradVector;
using numkit::ParamVector;

enum class Algorithm { FedAvg, FedDyn, FedSam, FedGamma, FedSmoo, FedSpeed };

const char* to_string(Algorithm a);
// Case-insensitive.
std::optional<Algorithm> parse_algorithm(std::string_view name);
const std::vector<Algorithm>& all_algorithms();

struct LocalTrainConfig {
  Algorithm algorithm = Algorithm::FedAvg;
  int epochs = 5;
  int batch_size = 32;
  double learning_rate = 0.05;
  double rho = 0.05;          // SAM radius
  double alpha_dyn = 0.1;     // dynamic regularization weight
  double prox_weight = 0.1;   // FedSpeed proximal weight
  double merge_alpha = 0.5;   // FedSpeed blend of perturbed/plain gradients

  void validate() const;
};

// Per-client persistent state. Arrays stay empty (= zero) until the
// algorithm first writes them.
struct ClientState {
  int client_id = 0;
  ParamVector dyn_dual;
  ParamVector control_variate;
  ParamVector speed_correction;
};

struct ServerState {
  ParamVector global_params;
  ParamVector dyn_h;
  ParamVector global_control;
  int round_index = 0;

  static ServerState initial(ParamVector params);
};

// A client's view of the shared training set.
struct ClientData {
  const numkit::Matrix* features = nullptr;
  const std::vector<int>* labels = nullptr;
  std::span<const std::size_t> indices;

  std::size_t size() const { return indices.size(); }
  numkit::Batch gather(std::span<const std::size_t> positions) const;
};

// rho * g / max(||g||, 1e-12)
GradVector sam_perturbation(const GradVector& g, double rho);

// Shuffle order used for a client's local epochs.
std::vector<std::size_t> shuffle_order(std::size_t n, Rng& rng);

struct LocalResult {
  ParamVector params;
  ClientState state;
  std::vector<double> loss_trace;  // batch loss before each step
  int steps = 0;
};

// Runs cfg.epochs passes over one shuffle order drawn from rng. `round` only
// tags divergence errors.
LocalResult local_train(const models::Model& model, const ServerState& server, const ClientState& client,
                        const ClientData& data, const LocalTrainConfig& cfg, Rng& rng, int round = 0);

struct ClientReturn {
  int client_id = 0;
  ParamVector params;
  ParamVector control_delta;  // FedGamma: c_n(new) - c_n(old); empty otherwise
};

ClientReturn make_return(const ClientState& before, const LocalResult& result);

ServerState server_update(const LocalTrainConfig& cfg, const ServerState& server,
                          std::vector<ClientReturn> returns, int total_clients);

}  // namespace fkb::fedopt
