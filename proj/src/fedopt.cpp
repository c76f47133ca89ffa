#include "fedopt.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

namespace fkb::fedopt {

namespace {

struct AlgorithmName {
  Algorithm algorithm;
  const char* name;
};

constexpr AlgorithmName kNames[] = {
    {Algorithm::FedAvg, "fedavg"},     {Algorithm::FedDyn, "feddyn"},   {Algorithm::FedSam, "fedsam"},
    {Algorithm::FedGamma, "fedgamma"}, {Algorithm::FedSmoo, "fedsmoo"}, {Algorithm::FedSpeed, "fedspeed"},
};

bool uses_dual(Algorithm a) { return a == Algorithm::FedDyn || a == Algorithm::FedSmoo; }
bool uses_sam(Algorithm a) {
  return a == Algorithm::FedSam || a == Algorithm::FedGamma || a == Algorithm::FedSmoo ||
         a == Algorithm::FedSpeed;
}

ParamVector zeros_if_empty(const ParamVector& v, const std::shared_ptr<const numkit::Layout>& layout) {
  return v.size() == 0 ? ParamVector::zeros(layout) : v;
}

}  // namespace

const char* to_string(Algorithm a) {
  for (const auto& n : kNames) {
    if (n.algorithm == a) return n.name;
  }
  return "unknown";
}

std::optional<Algorithm> parse_algorithm(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (const auto& n : kNames) {
    if (lower == n.name) return n.algorithm;
  }
  return std::nullopt;
}

const std::vector<Algorithm>& all_algorithms() {
  static const std::vector<Algorithm> all = {Algorithm::FedAvg,   Algorithm::FedDyn,  Algorithm::FedSam,
                                             Algorithm::FedGamma, Algorithm::FedSmoo, Algorithm::FedSpeed};
  return all;
}

void LocalTrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::Config, "local: " + msg); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!std::isfinite(learning_rate) || learning_rate <= 0.0) fail("learning_rate must be positive");
  if (!std::isfinite(rho) || rho < 0.0) fail("rho must be >= 0");
  if (!std::isfinite(alpha_dyn) || alpha_dyn < 0.0) fail("alpha_dyn must be >= 0");
  if (!std::isfinite(prox_weight) || prox_weight < 0.0) fail("prox_weight must be >= 0");
  if (!std::isfinite(merge_alpha) || merge_alpha < 0.0 || merge_alpha > 1.0) {
    fail("merge_alpha must lie in [0, 1]");
  }
}

ServerState ServerState::initial(ParamVector params) {
  ServerState s;
  s.global_params = std::move(params);
  return s;
}

numkit::Batch ClientData::gather(std::span<const std::size_t> positions) const {
  const std::size_t d = features->cols;
  numkit::Batch batch{numkit::Matrix(positions.size(), d), std::vector<int>(positions.size())};
  for (std::size_t r = 0; r < positions.size(); ++r) {
    const std::size_t idx = indices[positions[r]];
    std::copy_n(features->data.begin() + idx * d, d, batch.features.data.begin() + r * d);
    batch.labels[r] = (*labels)[idx];
  }
  return batch;
}

GradVector sam_perturbation(const GradVector& g, double rho) {
  GradVector eps = GradVector::zeros(g.shared_layout());
  const double norm = g.norm();
  if (rho == 0.0 || norm <= 1e-12) return eps;
  const double scale = rho / std::max(norm, 1e-12);
  for (std::size_t i = 0; i < g.size(); ++i) eps[i] = scale * g[i];
  return eps;
}

std::vector<std::size_t> shuffle_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

LocalResult local_train(const models::Model& model, const ServerState& server, const ClientState& client,
                        const ClientData& data, const LocalTrainConfig& cfg, Rng& rng, int round) {
  if (data.size() == 0) {
    throw Error(ErrorKind::Client, "client " + std::to_string(client.client_id) + " has no data");
  }
  const auto& layout = server.global_params.shared_layout();
  if (!server.global_params.compatible(model.params())) {
    throw Error(ErrorKind::Layout, "local_train: server parameters do not match model layout");
  }
  const Algorithm algo = cfg.algorithm;
  const double eta = cfg.learning_rate;

  LocalResult out;
  out.state = client;
  ClientState& st = out.state;
  if (uses_dual(algo)) st.dyn_dual = zeros_if_empty(st.dyn_dual, layout);
  if (algo == Algorithm::FedGamma) st.control_variate = zeros_if_empty(st.control_variate, layout);
  if (algo == Algorithm::FedSpeed) st.speed_correction = zeros_if_empty(st.speed_correction, layout);
  const ParamVector global_control = algo == Algorithm::FedGamma
                                         ? zeros_if_empty(server.global_control, layout)
                                         : ParamVector();

  const ParamVector& theta_g = server.global_params;
  ParamVector theta = theta_g;
  models::Model local = model;

  const auto order = shuffle_order(data.size(), rng);
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::span<const std::size_t> order_view(order);
  std::vector<double> step(theta.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const auto batch = data.gather(order_view.subspan(start, std::min(bs, order.size() - start)));

      local.set_params(theta);
      auto [batch_loss, g1] = models::loss_and_gradient(local, batch);
      if (!std::isfinite(batch_loss)) {
        throw DivergenceError(round, client.client_id,
                              "non-finite loss at round " + std::to_string(round) + ", client " +
                                  std::to_string(client.client_id));
      }
      out.loss_trace.push_back(batch_loss);

      GradVector g_sam = g1;
      if (uses_sam(algo) && cfg.rho > 0.0) {
        auto perturbed = numkit::axpy(1.0, sam_perturbation(g1, cfg.rho), theta);
        local.set_params(std::move(perturbed));
        g_sam = models::loss_and_gradient(local, batch).grad;
      }

      // Correction terms are written as subtractions so that zero
      // coefficients leave the plain gradient bit-for-bit unchanged.
      switch (algo) {
        case Algorithm::FedAvg:
          for (std::size_t i = 0; i < step.size(); ++i) step[i] = g1[i];
          break;
        case Algorithm::FedSam:
          for (std::size_t i = 0; i < step.size(); ++i) step[i] = g_sam[i];
          break;
        case Algorithm::FedDyn:
        case Algorithm::FedSmoo: {
          const GradVector& g = algo == Algorithm::FedDyn ? g1 : g_sam;
          for (std::size_t i = 0; i < step.size(); ++i) {
            const double corr = st.dyn_dual[i] - cfg.alpha_dyn * (theta[i] - theta_g[i]);
            step[i] = g[i] - corr;
          }
          break;
        }
        case Algorithm::FedGamma:
          for (std::size_t i = 0; i < step.size(); ++i) {
            step[i] = g_sam[i] - (st.control_variate[i] - global_control[i]);
          }
          break;
        case Algorithm::FedSpeed:
          for (std::size_t i = 0; i < step.size(); ++i) {
            const double blended = g1[i] - cfg.merge_alpha * (g1[i] - g_sam[i]);
            step[i] = blended - (st.speed_correction[i] - cfg.prox_weight * (theta[i] - theta_g[i]));
          }
          break;
      }
      auto values = theta.values();
      for (std::size_t i = 0; i < values.size(); ++i) values[i] = -eta * step[i] + values[i];
      ++out.steps;
    }
  }

  switch (algo) {
    case Algorithm::FedDyn:
    case Algorithm::FedSmoo:
      for (std::size_t i = 0; i < theta.size(); ++i) {
        st.dyn_dual[i] = st.dyn_dual[i] - cfg.alpha_dyn * (theta[i] - theta_g[i]);
      }
      break;
    case Algorithm::FedGamma: {
      const double denom = static_cast<double>(out.steps) * eta;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        st.control_variate[i] = st.control_variate[i] - global_control[i] + (theta_g[i] - theta[i]) / denom;
      }
      break;
    }
    case Algorithm::FedSpeed:
      for (std::size_t i = 0; i < theta.size(); ++i) {
        st.speed_correction[i] = st.speed_correction[i] - cfg.prox_weight * (theta[i] - theta_g[i]);
      }
      break;
    default:
      break;
  }
  out.params = std::move(theta);
  return out;
}

ClientReturn make_return(const ClientState& before, const LocalResult& result) {
  ClientReturn r{before.client_id, result.params, {}};
  if (result.state.control_variate.size() != 0) {
    const auto& layout = result.params.shared_layout();
    const ParamVector old = zeros_if_empty(before.control_variate, layout);
    r.control_delta = numkit::axpy(-1.0, old, result.state.control_variate);
  }
  return r;
}

ServerState server_update(const LocalTrainConfig& cfg, const ServerState& server,
                          std::vector<ClientReturn> returns, int total_clients) {
  if (returns.empty()) throw Error(ErrorKind::Config, "server_update: no client returns");
  if (total_clients < 1) throw Error(ErrorKind::Config, "server_update: total_clients must be >= 1");
  const Algorithm algo = cfg.algorithm;
  if (uses_dual(algo) && cfg.alpha_dyn == 0.0) {
    throw Error(ErrorKind::Config, std::string(to_string(algo)) + " requires alpha_dyn > 0");
  }
  const auto& prev = server.global_params;
  const auto& layout = prev.shared_layout();
  for (const auto& r : returns) {
    if (!r.params.compatible(prev)) throw Error(ErrorKind::Layout, "server_update: client layout mismatch");
  }
  std::sort(returns.begin(), returns.end(),
            [](const ClientReturn& a, const ClientReturn& b) { return a.client_id < b.client_id; });

  const std::size_t n = prev.size();
  const double count = static_cast<double>(returns.size());
  const double total = static_cast<double>(total_clients);

  std::vector<double> sum(n, 0.0);
  for (const auto& r : returns) {
    for (std::size_t i = 0; i < n; ++i) sum[i] += r.params[i];
  }
  ParamVector mean = ParamVector::zeros(layout);
  for (std::size_t i = 0; i < n; ++i) mean[i] = sum[i] / count;

  ServerState next = server;
  next.round_index = server.round_index + 1;

  switch (algo) {
    case Algorithm::FedDyn:
    case Algorithm::FedSmoo: {
      std::vector<double> drift(n, 0.0);
      for (const auto& r : returns) {
        for (std::size_t i = 0; i < n; ++i) drift[i] += r.params[i] - prev[i];
      }
      next.dyn_h = zeros_if_empty(server.dyn_h, layout);
      for (std::size_t i = 0; i < n; ++i) {
        next.dyn_h[i] = next.dyn_h[i] - cfg.alpha_dyn * (1.0 / total) * drift[i];
        mean[i] = mean[i] - (1.0 / cfg.alpha_dyn) * next.dyn_h[i];
      }
      break;
    }
    case Algorithm::FedGamma: {
      std::vector<double> delta(n, 0.0);
      for (const auto& r : returns) {
        if (r.control_delta.size() == 0) continue;
        if (!r.control_delta.compatible(prev)) {
          throw Error(ErrorKind::Layout, "server_update: control delta layout mismatch");
        }
        for (std::size_t i = 0; i < n; ++i) delta[i] += r.control_delta[i];
      }
      next.global_control = zeros_if_empty(server.global_control, layout);
      for (std::size_t i = 0; i < n; ++i) next.global_control[i] = next.global_control[i] + (1.0 / total) * delta[i];
      break;
    }
    default:
      break;
  }
  next.global_params = std::move(mean);
  return next;
}

}  // namespace fkb::fedopt
