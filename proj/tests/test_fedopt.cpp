#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "fedopt.hpp"

using namespace fkb;
using namespace fkb::fedopt;
using numkit::Matrix;

namespace {

ParamVector vec(std::vector<double> v) { return numkit::flatten({numkit::Tensor{"v", {v.size()}, std::move(v)}}); }

std::vector<double> values(const ParamVector& p) { return {p.values().begin(), p.values().end()}; }

struct Toy {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
  models::Model model;

  ClientData data() const { return {&features, &labels, indices}; }
};

Toy make_toy(const std::string& preset, std::size_t n, int dim, int classes, std::uint64_t seed) {
  Toy t;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  t.features = Matrix(n, static_cast<std::size_t>(dim));
  for (double& v : t.features.data) v = nd(rng);
  t.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.labels[i] = static_cast<int>(i % static_cast<std::size_t>(classes));
  t.indices.resize(n);
  std::iota(t.indices.begin(), t.indices.end(), std::size_t{0});
  Rng init = make_stream(seed, StreamTag::Init);
  t.model = models::build_model(models::spec_from_preset(preset, dim, classes, 3), init);
  return t;
}

LocalResult train(const Toy& t, const ServerState& s, const ClientState& c, const LocalTrainConfig& cfg) {
  Rng rng = make_stream(99, StreamTag::Client, {1, 2});
  return local_train(t.model, s, c, t.data(), cfg, rng, 1);
}

}  // namespace

TEST_CASE("algorithm names parse case-insensitively") {
  CHECK(parse_algorithm("FedAvg") == Algorithm::FedAvg);
  CHECK(parse_algorithm("FEDSPEED") == Algorithm::FedSpeed);
  CHECK(parse_algorithm("fedsmoo") == Algorithm::FedSmoo);
  CHECK_FALSE(parse_algorithm("scaffold"));
  for (auto a : all_algorithms()) CHECK(parse_algorithm(to_string(a)) == a);
  CHECK(all_algorithms().size() == 6);
}

TEST_CASE("config validation") {
  LocalTrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.merge_alpha = 1.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.rho = -1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("sam perturbation examples") {
  const auto g = vec({3, 4}).as<numkit::GradTag>();
  const auto e = sam_perturbation(g, 1.0);
  CHECK(e[0] == doctest::Approx(0.6));
  CHECK(e[1] == doctest::Approx(0.8));
  const auto none = sam_perturbation(g, 0.0);
  for (double v : none.values()) CHECK(v == 0.0);
  const auto degenerate = sam_perturbation(vec({0, 0}).as<numkit::GradTag>(), 0.5);
  for (double v : degenerate.values()) CHECK(v == 0.0);
  const auto big = vec({1e-3, -7, 2.5, 0.1}).as<numkit::GradTag>();
  CHECK(sam_perturbation(big, 0.05).norm() == doctest::Approx(0.05).epsilon(1e-14));
}

TEST_CASE("reduction identities hold bit-exactly") {
  const auto t = make_toy("kan-1", 45, 4, 3, 5);
  const auto server = ServerState::initial(t.model.params());
  ClientState client;
  client.client_id = 3;
  LocalTrainConfig base;
  base.epochs = 2;
  base.batch_size = 8;
  const auto avg = values(train(t, server, client, base).params);

  auto cfg = base;
  cfg.algorithm = Algorithm::FedDyn;
  cfg.alpha_dyn = 0.0;
  CHECK(values(train(t, server, client, cfg).params) == avg);

  cfg = base;
  cfg.algorithm = Algorithm::FedSam;
  cfg.rho = 0.0;
  CHECK(values(train(t, server, client, cfg).params) == avg);

  cfg = base;
  cfg.algorithm = Algorithm::FedGamma;
  cfg.rho = 0.0;
  CHECK(values(train(t, server, client, cfg).params) == avg);

  cfg = base;
  cfg.algorithm = Algorithm::FedSpeed;
  cfg.rho = 0.0;
  cfg.prox_weight = 0.0;
  cfg.merge_alpha = 0.0;
  CHECK(values(train(t, server, client, cfg).params) == avg);

  cfg = base;
  cfg.algorithm = Algorithm::FedSmoo;
  cfg.rho = 0.0;
  cfg.alpha_dyn = 0.3;
  auto dyn = cfg;
  dyn.algorithm = Algorithm::FedDyn;
  CHECK(values(train(t, server, client, cfg).params) == values(train(t, server, client, dyn).params));

  cfg = base;
  cfg.algorithm = Algorithm::FedSam;
  CHECK(values(train(t, server, client, cfg).params) != avg);
}

TEST_CASE("FedDyn local training matches a scalar hand-trace") {
  // mlp-1 with one input and two classes: logits z_j = w_j x + b_j.
  const auto t = make_toy("mlp-1", 5, 1, 2, 7);
  auto server = ServerState::initial(vec({0.0, 0.0, 0.0, 0.0}));
  {
    auto p = t.model.params();
    p[0] = 0.4;
    p[1] = -0.3;
    p[2] = 0.05;
    p[3] = -0.1;
    server.global_params = p;
  }
  ClientState client;
  client.client_id = 0;
  LocalTrainConfig cfg;
  cfg.algorithm = Algorithm::FedDyn;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.learning_rate = 0.3;
  cfg.alpha_dyn = 0.2;
  const auto result = train(t, server, client, cfg);

  // Independent replay with the same shuffle order.
  Rng rng = make_stream(99, StreamTag::Client, {1, 2});
  const auto order = shuffle_order(5, rng);
  double th[4], tg[4];
  for (int i = 0; i < 4; ++i) th[i] = tg[i] = server.global_params[static_cast<std::size_t>(i)];
  for (int e = 0; e < 2; ++e) {
    for (std::size_t s = 0; s < 5; s += 2) {
      const std::size_t m = std::min<std::size_t>(2, 5 - s);
      double g[4] = {0, 0, 0, 0};
      for (std::size_t r = 0; r < m; ++r) {
        const std::size_t i = order[s + r];
        const double x = t.features.data[i];
        const double z0 = th[0] * x + th[2], z1 = th[1] * x + th[3];
        const double p1 = 1.0 / (1.0 + std::exp(z0 - z1));
        const double d1 = (p1 - (t.labels[i] == 1 ? 1.0 : 0.0)) / static_cast<double>(m);
        const double d0 = -d1;
        g[0] += d0 * x;
        g[1] += d1 * x;
        g[2] += d0;
        g[3] += d1;
      }
      for (int k = 0; k < 4; ++k) th[k] -= cfg.learning_rate * (g[k] + cfg.alpha_dyn * (th[k] - tg[k]));
    }
  }
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(result.params[k] == doctest::Approx(th[k]).epsilon(1e-12));
    CHECK(result.state.dyn_dual[k] == doctest::Approx(-cfg.alpha_dyn * (th[k] - tg[k])).epsilon(1e-12));
  }
  CHECK(result.steps == 6);
  CHECK(result.loss_trace.size() == 6);
}

TEST_CASE("FedGamma control variate update") {
  const auto t = make_toy("mlp-1", 12, 3, 2, 8);
  const auto server = ServerState::initial(t.model.params());
  ClientState client;
  LocalTrainConfig cfg;
  cfg.algorithm = Algorithm::FedGamma;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  const auto r = train(t, server, client, cfg);
  REQUIRE(r.steps == 3);
  for (std::size_t i = 0; i < r.params.size(); ++i) {
    const double expect = (server.global_params[i] - r.params[i]) / (3 * cfg.learning_rate);
    CHECK(r.state.control_variate[i] == doctest::Approx(expect).epsilon(1e-12));
  }
  const auto ret = make_return(client, r);
  for (std::size_t i = 0; i < r.params.size(); ++i) CHECK(ret.control_delta[i] == r.state.control_variate[i]);
}

TEST_CASE("local training errors") {
  auto t = make_toy("mlp-1", 4, 2, 2, 1);
  const auto server = ServerState::initial(t.model.params());
  ClientState client;
  client.client_id = 17;
  LocalTrainConfig cfg;
  t.indices.clear();
  try {
    train(t, server, client, cfg);
    FAIL("expected client error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Client);
  }
  t = make_toy("mlp-1", 4, 2, 2, 1);
  for (double& v : t.features.data) v *= 1e200;
  cfg.learning_rate = 1e200;
  try {
    train(t, server, client, cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.kind() == ErrorKind::Divergence);
    CHECK(e.client() == 17);
    CHECK(e.round() == 1);
  }
}

TEST_CASE("server averaging examples") {
  LocalTrainConfig cfg;
  const auto server = ServerState::initial(vec({0, 0}));
  const auto next = server_update(cfg, server, {{2, vec({4, 6}), {}}, {1, vec({0, 2}), {}}}, 10);
  CHECK(values(next.global_params) == std::vector<double>{2, 4});
  CHECK(next.round_index == 1);

  for (auto a : all_algorithms()) {
    cfg.algorithm = a;
    const auto same = server_update(cfg, ServerState::initial(vec({1.5, -2})),
                                    {{0, vec({1.5, -2}), {}}, {5, vec({1.5, -2}), {}}}, 6);
    CHECK(values(same.global_params) == std::vector<double>{1.5, -2});
  }
}

TEST_CASE("server aggregation is order independent") {
  LocalTrainConfig cfg;
  std::vector<ClientReturn> rets;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0, 1e3);
  for (int c = 0; c < 7; ++c) rets.push_back({c, vec({nd(rng), nd(rng), nd(rng)}), {}});
  const auto server = ServerState::initial(vec({0, 0, 0}));
  const auto a = server_update(cfg, server, rets, 7);
  std::reverse(rets.begin(), rets.end());
  const auto b = server_update(cfg, server, rets, 7);
  CHECK(values(a.global_params) == values(b.global_params));
  for (std::size_t i = 0; i < 3; ++i) {
    double lo = 1e300, hi = -1e300;
    for (const auto& r : rets) {
      lo = std::min(lo, r.params[i]);
      hi = std::max(hi, r.params[i]);
    }
    CHECK(a.global_params[i] >= lo);
    CHECK(a.global_params[i] <= hi);
  }
}

TEST_CASE("FedDyn server update matches the scalar oracle") {
  LocalTrainConfig cfg;
  cfg.algorithm = Algorithm::FedDyn;
  cfg.alpha_dyn = 0.1;
  const auto next = server_update(cfg, ServerState::initial(vec({0})), {{0, vec({1}), {}}, {1, vec({3}), {}}}, 4);
  // independent scalar implementation
  const double alpha = 0.1, n = 4, prev = 0, h0 = 0;
  const double h = h0 - alpha * (1 / n) * ((1 - prev) + (3 - prev));
  const double theta = (1 + 3) / 2.0 - h / alpha;
  CHECK(next.dyn_h[0] == doctest::Approx(h).epsilon(1e-15));
  CHECK(next.global_params[0] == doctest::Approx(theta).epsilon(1e-15));
  CHECK(next.dyn_h[0] == doctest::Approx(-0.1));
  CHECK(next.global_params[0] == doctest::Approx(3.0));

  cfg.alpha_dyn = 0.0;
  try {
    server_update(cfg, ServerState::initial(vec({0})), {{0, vec({1}), {}}}, 4);
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
}

TEST_CASE("FedGamma server control update") {
  LocalTrainConfig cfg;
  cfg.algorithm = Algorithm::FedGamma;
  auto server = ServerState::initial(vec({0, 0}));
  server.global_control = vec({1, -1});
  const auto next = server_update(cfg, server, {{0, vec({2, 2}), vec({0.4, 0.8})}, {1, vec({4, 0}), vec({-0.2, 0.4})}}, 10);
  CHECK(values(next.global_params) == std::vector<double>{3, 1});
  CHECK(next.global_control[0] == doctest::Approx(1 + 0.2 / 10));
  CHECK(next.global_control[1] == doctest::Approx(-1 + 1.2 / 10));
}

TEST_CASE("server update rejects layout mismatches") {
  LocalTrainConfig cfg;
  CHECK_THROWS_AS(server_update(cfg, ServerState::initial(vec({0, 0})), {{0, vec({1, 2, 3}), {}}}, 3), Error);
  CHECK_THROWS_AS(server_update(cfg, ServerState::initial(vec({0, 0})), {}, 3), Error);
}
