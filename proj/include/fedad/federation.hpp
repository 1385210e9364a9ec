#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedad/adms.hpp"
#include "fedad/backbone.hpp"
#include "fedad/matrix.hpp"

namespace fedad::fed {

enum class Optimizer { sgd, adam };

struct TrainConfig {
  std::size_t n_clients = 4;
  std::size_t global_rounds = 10;
  std::size_t local_epochs = 2;
  double learning_rate = 1e-2;
  double lambda = 0.0;          // distillation weight
  std::size_t batch_size = 32;  // windows per gradient step
  Optimizer optimizer = Optimizer::sgd;
  bool parallel_clients = true;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Direction { down, up };

struct Message {
  Direction dir;
  int client_id;
  std::size_t payload_bytes;
};

struct RoundRecord {
  std::size_t round = 0;  // 1-based
  std::vector<Message> messages;
  std::vector<double> client_final_loss;  // client-id order
  std::uint64_t aggregate_checksum = 0;
};

struct RoundLedger {
  std::vector<RoundRecord> rounds;
  std::size_t total_bytes() const;
};

// Captures every serialized inter-party payload so privacy assertions can
// scan the raw traffic bytes.
struct WireLog {
  std::vector<std::vector<std::uint8_t>> payloads;
};

std::vector<std::uint8_t> serialize_f64(const std::vector<double>& values);
std::vector<double> deserialize_f64(const std::vector<std::uint8_t>& bytes);

struct ClientData {
  int id = 0;
  std::vector<Matrix> windows;  // normalized training windows
};

struct ClientState {
  int id = 0;
  backbone::Model model;
  std::size_t sample_count = 0;                     // |T_i|, the aggregation weight
  std::vector<Tensor> windows_cache;                // patched windows as constant tensors
  std::vector<adms::PatchScoreTable> score_tables;  // one per window; data-derived
  std::vector<adms::PatchScoreTable> uniform_tables;
};

// Element-wise weighted mean, fixed client order; weights are |T_i| and get
// normalized to sum 1.
std::vector<double> aggregate(const std::vector<std::vector<double>>& vectors,
                              const std::vector<double>& weights);

// One client round: T_l epochs of mini-batch masked-reconstruction descent
// on theta_e, with an optional consistency term against the round's global
// snapshot evaluated on the shared windows. Returns the last batch loss.
double local_train(ClientState& client, const backbone::ParameterPartition& part,
                   const backbone::Model& snapshot, const std::vector<Matrix>& shared_windows,
                   const TrainConfig& cfg, const adms::AdmsConfig& adms_cfg, std::size_t round,
                   bool use_adms);

struct TrainResult {
  backbone::Model global_model;
  RoundLedger ledger;
};

// Full Algorithm-1 style run: broadcast, parallel local training, upload,
// weighted aggregation; every parameter message is serialized and counted.
TrainResult run_training(const TrainConfig& cfg, const backbone::BackboneConfig& model_cfg,
                         const adms::AdmsConfig& adms_cfg,
                         const std::vector<ClientData>& clients,
                         const std::vector<Matrix>& shared_windows, std::size_t tune_last_k,
                         bool fine_tune, bool use_adms, std::uint64_t model_seed,
                         WireLog* wire = nullptr);

// Single-model loop with the same per-round RNG streams as federated client
// id 0; the N=1, lambda=0 degenerate case must match it bit-for-bit.
backbone::Model centralized_train(const TrainConfig& cfg,
                                  const backbone::BackboneConfig& model_cfg,
                                  const adms::AdmsConfig& adms_cfg, const ClientData& client,
                                  std::size_t tune_last_k, bool fine_tune, bool use_adms,
                                  std::uint64_t model_seed);

std::size_t comm_cost_bytes(const RoundLedger& ledger);
double comm_cost_gib(const RoundLedger& ledger);

void export_ledger_csv(const std::string& path, const RoundLedger& ledger);
void export_losses_csv(const std::string& path, const RoundLedger& ledger);

}  // namespace fedad::fed
