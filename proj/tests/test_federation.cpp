#include <doctest.h>

#include <cmath>

#include "fedad/data.hpp"
#include "fedad/errors.hpp"
#include "fedad/federation.hpp"
#include "fedad/rng.hpp"

using namespace fedad;
using namespace fedad::fed;

namespace {

backbone::BackboneConfig small_model() {
  backbone::BackboneConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.patch_len = 5;
  cfg.input_dim = 1;
  cfg.max_patches = 4;
  cfg.tune_last_k = 1;
  return cfg;
}

adms::AdmsConfig small_adms() {
  adms::AdmsConfig cfg;
  cfg.patch_len = 5;
  cfg.ssa_window = 2;
  return cfg;
}

std::vector<Matrix> noisy_windows(std::size_t count, std::size_t len, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Matrix> out;
  for (std::size_t w = 0; w < count; ++w) {
    Matrix m(len, 1);
    for (std::size_t t = 0; t < len; ++t) {
      m.at(t, 0) = std::sin(0.5 * static_cast<double>(t)) + rng.normal(0.0, 0.1);
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<ClientData> make_clients(std::size_t n, std::size_t windows_each) {
  std::vector<ClientData> clients;
  for (std::size_t i = 0; i < n; ++i) {
    ClientData cd;
    cd.id = static_cast<int>(i);
    cd.windows = noisy_windows(windows_each, 20, 100 + i);
    clients.push_back(std::move(cd));
  }
  return clients;
}

TrainConfig fast_train(std::size_t n_clients, std::size_t rounds) {
  TrainConfig cfg;
  cfg.n_clients = n_clients;
  cfg.global_rounds = rounds;
  cfg.local_epochs = 1;
  cfg.learning_rate = 0.01;
  cfg.lambda = 0.0;
  cfg.batch_size = 8;
  cfg.seed = 9;
  return cfg;
}

std::vector<double> all_weights(const backbone::Model& m) {
  std::vector<double> out;
  for (const auto& [id, t] : m.registry) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

}  // namespace

TEST_CASE("serialize round trip") {
  Rng rng(3);
  std::vector<double> v(37);
  for (auto& x : v) x = rng.normal();
  CHECK(deserialize_f64(serialize_f64(v)) == v);
  CHECK(serialize_f64(v).size() == 37 * 8);
}

TEST_CASE("aggregate oracle") {
  SUBCASE("single client returns its vector exactly") {
    const std::vector<double> a = {1.0, -2.0, 3.5};
    CHECK(aggregate({a}, {17.0}) == a);
  }

  SUBCASE("equal weights average symmetrically") {
    const std::vector<double> a = {2.0, 4.0};
    const std::vector<double> b = {4.0, 0.0};
    const auto g = aggregate({a, b}, {3.0, 3.0});
    CHECK(g[0] == doctest::Approx(3.0));
    CHECK(g[1] == doctest::Approx(2.0));
  }

  SUBCASE("weights 1 and 3 blend 0.25/0.75") {
    const std::vector<double> a = {4.0};
    const std::vector<double> b = {8.0};
    const auto g = aggregate({a, b}, {1.0, 3.0});
    CHECK(g[0] == doctest::Approx(0.25 * 4.0 + 0.75 * 8.0).epsilon(1e-15));
  }

  SUBCASE("matches an independent weighted mean on random sets") {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t clients = 1 + rng.uniform_index(6);
      const std::size_t len = 1 + rng.uniform_index(20);
      std::vector<std::vector<double>> vecs(clients, std::vector<double>(len));
      std::vector<double> weights(clients);
      for (auto& v : vecs)
        for (auto& x : v) x = rng.normal();
      for (auto& w : weights) w = 1.0 + rng.uniform_index(50);
      const auto got = aggregate(vecs, weights);
      double total = 0.0;
      for (double w : weights) total += w;
      for (std::size_t i = 0; i < len; ++i) {
        double expect = 0.0;
        for (std::size_t c = 0; c < clients; ++c) expect += weights[c] / total * vecs[c][i];
        CHECK(std::abs(got[i] - expect) <= 1e-12);
      }
    }
  }

  SUBCASE("aggregate of identical vectors is that vector") {
    const std::vector<double> a = {0.25, -1.75, 2.0};
    const auto g = aggregate({a, a, a}, {1.0, 2.0, 5.0});
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(g[i] == doctest::Approx(a[i]).epsilon(1e-12));
  }

  CHECK_THROWS_AS(aggregate({{1.0}, {1.0, 2.0}}, {1.0, 1.0}), ProtocolError);
  CHECK_THROWS_AS(aggregate({{1.0}}, {0.0}), ProtocolError);
  CHECK_THROWS_AS(aggregate({}, {}), ProtocolError);
}

TEST_CASE("run_training ledger accounting and broadcast effect") {
  const auto model_cfg = small_model();
  const auto adms_cfg = small_adms();
  const auto clients = make_clients(3, 4);
  TrainConfig cfg = fast_train(3, 2);

  WireLog wire;
  const TrainResult res = run_training(cfg, model_cfg, adms_cfg, clients, {}, 1, true, true, 77,
                                       &wire);

  const auto part = backbone::partition_parameters(res.global_model, 1);
  REQUIRE(res.ledger.rounds.size() == 2);
  for (const auto& round : res.ledger.rounds) {
    std::size_t downs = 0, ups = 0;
    for (const auto& m : round.messages) {
      CHECK(m.payload_bytes == part.trainable_count * 8);
      (m.dir == Direction::down ? downs : ups)++;
    }
    CHECK(downs == 3);
    CHECK(ups == 3);
  }
  CHECK(res.ledger.total_bytes() == 2 * 3 * 2 * part.trainable_count * 8);
  CHECK(comm_cost_bytes(res.ledger) == res.ledger.total_bytes());
  CHECK(comm_cost_gib(res.ledger) ==
        doctest::Approx(static_cast<double>(res.ledger.total_bytes()) / std::pow(2.0, 30)));
  CHECK(wire.payloads.size() == 2 * 3 * 2);
}

TEST_CASE("zero rounds returns the initial checkpoint unchanged") {
  const auto model_cfg = small_model();
  const auto clients = make_clients(2, 2);
  TrainConfig cfg = fast_train(2, 0);
  const TrainResult res = run_training(cfg, model_cfg, small_adms(), clients, {}, 1, true, true, 5);
  CHECK(res.ledger.rounds.empty());
  CHECK(all_weights(res.global_model) == all_weights(backbone::build_model(model_cfg, 5)));
}

TEST_CASE("frozen parameters are bit-identical before and after training") {
  const auto model_cfg = small_model();
  const auto clients = make_clients(2, 3);
  TrainConfig cfg = fast_train(2, 2);
  const TrainResult res = run_training(cfg, model_cfg, small_adms(), clients, {}, 1, true, true, 7);

  const backbone::Model fresh = backbone::build_model(model_cfg, 7);
  const auto part = backbone::partition_parameters(fresh, 1);
  bool any_trainable_changed = false;
  for (const auto& e : part.entries) {
    const auto& before = fresh.param(e.id).values();
    const auto& after = res.global_model.param(e.id).values();
    if (e.role == backbone::Role::frozen) {
      CHECK(before == after);
    } else if (before != after) {
      any_trainable_changed = true;
    }
  }
  CHECK(any_trainable_changed);
}

TEST_CASE("federated single client equals the centralized loop bit for bit") {
  const auto model_cfg = small_model();
  const auto adms_cfg = small_adms();
  const auto clients = make_clients(1, 4);
  TrainConfig cfg = fast_train(1, 3);
  cfg.optimizer = Optimizer::sgd;

  const TrainResult fed_res =
      run_training(cfg, model_cfg, adms_cfg, clients, {}, 1, true, true, 21);
  const backbone::Model central =
      centralized_train(cfg, model_cfg, adms_cfg, clients[0], 1, true, true, 21);

  CHECK(all_weights(fed_res.global_model) == all_weights(central));
}

TEST_CASE("deterministic across client execution order") {
  const auto model_cfg = small_model();
  const auto adms_cfg = small_adms();
  const auto clients = make_clients(3, 3);

  TrainConfig par = fast_train(3, 2);
  par.parallel_clients = true;
  TrainConfig seq = par;
  seq.parallel_clients = false;

  const TrainResult a = run_training(par, model_cfg, adms_cfg, clients, {}, 1, true, true, 33);
  const TrainResult b = run_training(seq, model_cfg, adms_cfg, clients, {}, 1, true, true, 33);

  CHECK(all_weights(a.global_model) == all_weights(b.global_model));
  REQUIRE(a.ledger.rounds.size() == b.ledger.rounds.size());
  for (std::size_t r = 0; r < a.ledger.rounds.size(); ++r) {
    CHECK(a.ledger.rounds[r].aggregate_checksum == b.ledger.rounds[r].aggregate_checksum);
    CHECK(a.ledger.rounds[r].client_final_loss == b.ledger.rounds[r].client_final_loss);
  }
}

TEST_CASE("consistency term vanishes when the client equals the snapshot") {
  const auto model_cfg = small_model();
  const auto adms_cfg = small_adms();
  const auto clients = make_clients(1, 3);
  const auto shared = noisy_windows(2, 20, 55);

  // single batch per epoch, single epoch: the loss is evaluated before any
  // update, so theta_i == snapshot and the consistency term contributes 0
  TrainConfig with = fast_train(1, 1);
  with.batch_size = 16;
  with.lambda = 5.0;
  TrainConfig without = with;
  without.lambda = 0.0;

  const TrainResult a =
      run_training(with, model_cfg, adms_cfg, clients, shared, 1, true, true, 13);
  const TrainResult b =
      run_training(without, model_cfg, adms_cfg, clients, {}, 1, true, true, 13);
  REQUIRE(a.ledger.rounds.size() == 1);
  CHECK(a.ledger.rounds[0].client_final_loss[0] ==
        doctest::Approx(b.ledger.rounds[0].client_final_loss[0]).epsilon(1e-12));
}

TEST_CASE("lambda > 0 without a shared dataset is a protocol error") {
  TrainConfig cfg = fast_train(1, 1);
  cfg.lambda = 1.0;
  CHECK_THROWS_AS(
      run_training(cfg, small_model(), small_adms(), make_clients(1, 2), {}, 1, true, true, 1),
      ProtocolError);
}

TEST_CASE("no fine-tuning moves zero bytes and leaves the model at init") {
  const auto model_cfg = small_model();
  const auto clients = make_clients(2, 2);
  TrainConfig cfg = fast_train(2, 2);
  const TrainResult res =
      run_training(cfg, model_cfg, small_adms(), clients, {}, 1, /*fine_tune=*/false, true, 71);
  CHECK(res.ledger.total_bytes() == 0);
  CHECK(all_weights(res.global_model) == all_weights(backbone::build_model(model_cfg, 71)));
  // messages still flow, they are just empty
  for (const auto& r : res.ledger.rounds) CHECK(r.messages.size() == 4);
}

TEST_CASE("adam optimizer also trains deterministically") {
  const auto model_cfg = small_model();
  const auto clients = make_clients(2, 3);
  TrainConfig cfg = fast_train(2, 2);
  cfg.optimizer = Optimizer::adam;
  cfg.learning_rate = 1e-3;
  const TrainResult a = run_training(cfg, model_cfg, small_adms(), clients, {}, 1, true, true, 3);
  const TrainResult b = run_training(cfg, model_cfg, small_adms(), clients, {}, 1, true, true, 3);
  CHECK(all_weights(a.global_model) == all_weights(b.global_model));
}

TEST_CASE("training reduces the reconstruction loss") {
  const auto model_cfg = small_model();
  const auto clients = make_clients(1, 6);
  TrainConfig cfg = fast_train(1, 6);
  cfg.local_epochs = 2;
  cfg.learning_rate = 0.02;
  const TrainResult res = run_training(cfg, model_cfg, small_adms(), clients, {}, 2, true, true, 2);
  const auto& rounds = res.ledger.rounds;
  CHECK(rounds.back().client_final_loss[0] < rounds.front().client_final_loss[0]);
}
