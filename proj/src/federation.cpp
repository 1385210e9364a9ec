#include "fedad/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>

#include "fedad/errors.hpp"
#include "fedad/rng.hpp"

namespace fedad::fed {

void TrainConfig::validate() const {
  if (n_clients < 1) throw ConfigError("train config: n_clients must be >= 1");
  if (local_epochs < 1) throw ConfigError("train config: local_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (learning_rate <= 0.0) throw ConfigError("train config: learning_rate must be positive");
  if (lambda < 0.0) throw ConfigError("train config: lambda must be >= 0");
}

std::size_t RoundLedger::total_bytes() const {
  std::size_t total = 0;
  for (const auto& r : rounds)
    for (const auto& m : r.messages) total += m.payload_bytes;
  return total;
}

std::vector<std::uint8_t> serialize_f64(const std::vector<double>& values) {
  std::vector<std::uint8_t> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &values[i], 8);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<std::uint8_t>((bits >> (8 * b)) & 0xff);
  }
  return bytes;
}

std::vector<double> deserialize_f64(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() % 8 != 0) throw ProtocolError("deserialize_f64: byte count not a multiple of 8");
  std::vector<double> values(bytes.size() / 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    std::memcpy(&values[i], &bits, 8);
  }
  return values;
}

std::vector<double> aggregate(const std::vector<std::vector<double>>& vectors,
                              const std::vector<double>& weights) {
  if (vectors.empty()) throw ProtocolError("aggregate: no client updates");
  if (vectors.size() != weights.size()) throw ProtocolError("aggregate: weight count mismatch");
  const std::size_t len = vectors[0].size();
  for (const auto& v : vectors) {
    if (v.size() != len) throw ProtocolError("aggregate: update length mismatch");
  }
  double total = 0.0;
  for (double w : weights) {
    if (w <= 0.0) throw ProtocolError("aggregate: weights must be positive");
    total += w;
  }
  if (total <= 0.0) throw ProtocolError("aggregate: zero total weight");

  std::vector<double> out(len, 0.0);
  for (std::size_t c = 0; c < vectors.size(); ++c) {
    const double w = weights[c] / total;
    const auto& v = vectors[c];
    for (std::size_t i = 0; i < len; ++i) out[i] += w * v[i];
  }
  return out;
}

namespace {

// Adam with bias correction; state lives for one local_train call.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;
};

Tensor patches_tensor(const Matrix& window, std::size_t patch_len) {
  const std::size_t n_patches = window.rows / patch_len;
  const std::size_t pw = patch_len * window.cols;
  std::vector<double> flat(n_patches * pw);
  for (std::size_t p = 0; p < n_patches; ++p)
    for (std::size_t t = 0; t < patch_len; ++t)
      for (std::size_t d = 0; d < window.cols; ++d)
        flat[p * pw + t * window.cols + d] = window.at(p * patch_len + t, d);
  return Tensor({n_patches, pw}, std::move(flat));
}

std::vector<Tensor> trainable_params(backbone::Model& model,
                                     const backbone::ParameterPartition& part) {
  std::vector<Tensor> out;
  for (const auto& e : part.entries) {
    if (e.role == backbone::Role::trainable) out.push_back(model.param(e.id));
  }
  return out;
}

void apply_update(std::vector<Tensor>& params, const TrainConfig& cfg, AdamState& adam) {
  if (cfg.optimizer == Optimizer::sgd) {
    for (auto& p : params) {
      auto& v = p.mutable_values();
      const auto& g = p.grad();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= cfg.learning_rate * g[i];
    }
    return;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (adam.m.empty()) {
    adam.m.resize(params.size());
    adam.v.resize(params.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
      adam.m[k].assign(params[k].size(), 0.0);
      adam.v[k].assign(params[k].size(), 0.0);
    }
  }
  ++adam.t;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& v = params[k].mutable_values();
    const auto& g = params[k].grad();
    for (std::size_t i = 0; i < v.size(); ++i) {
      adam.m[k][i] = b1 * adam.m[k][i] + (1.0 - b1) * g[i];
      adam.v[k][i] = b2 * adam.v[k][i] + (1.0 - b2) * g[i] * g[i];
      const double mh = adam.m[k][i] / c1;
      const double vh = adam.v[k][i] / c2;
      v[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + eps);
    }
  }
}

adms::PatchScoreTable uniform_table(std::size_t n_patches) {
  adms::PatchScoreTable t;
  t.rows.resize(n_patches);  // all unflagged: every patch samples at weight 1
  return t;
}

std::vector<double> snapshot_reconstruction(const backbone::Model& snapshot,
                                            const Tensor& patches) {
  autograd::NoGradGuard guard;
  return backbone::forward(snapshot, patches, {}).values();
}

}  // namespace

double local_train(ClientState& client, const backbone::ParameterPartition& part,
                   const backbone::Model& snapshot, const std::vector<Matrix>& shared_windows,
                   const TrainConfig& cfg, const adms::AdmsConfig& adms_cfg, std::size_t round,
                   bool use_adms) {
  const std::size_t l_p = client.model.cfg.patch_len;
  const std::size_t n_windows = client.windows_cache.size();
  if (n_windows == 0) throw TrainingError("local_train: client has no training windows");

  // no trainable parameters: nothing to descend on, just report the loss
  if (part.trainable_count == 0) {
    autograd::NoGradGuard guard;
    double acc = 0.0;
    for (const auto& pt : client.windows_cache) {
      acc += mse(backbone::forward(client.model, pt, {}), pt).item();
    }
    return acc / static_cast<double>(n_windows);
  }

  std::vector<Tensor> params = trainable_params(client.model, part);
  AdamState adam;

  // distillation targets on the shared windows, fixed for the whole round
  std::vector<Tensor> shared_patches;
  std::vector<Tensor> shared_targets;
  if (cfg.lambda > 0.0 && !shared_windows.empty()) {
    for (const auto& w : shared_windows) {
      Tensor pt = patches_tensor(w, l_p);
      shared_targets.emplace_back(pt.shape(), snapshot_reconstruction(snapshot, pt));
      shared_patches.push_back(std::move(pt));
    }
  }

  double last_loss = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    Rng mask_rng(derive_seed(cfg.seed, "mask/c" + std::to_string(client.id) + "/r" +
                                           std::to_string(round) + "/e" + std::to_string(epoch)));
    Rng distill_rng(derive_seed(cfg.seed, "distill/c" + std::to_string(client.id) + "/r" +
                                              std::to_string(round) + "/e" +
                                              std::to_string(epoch)));

    // per-epoch distillation batch: whole shared set when small, otherwise a
    // seeded subsample of batch_size windows
    std::vector<std::size_t> distill_idx;
    if (!shared_patches.empty()) {
      if (shared_patches.size() <= cfg.batch_size) {
        distill_idx.resize(shared_patches.size());
        std::iota(distill_idx.begin(), distill_idx.end(), 0);
      } else {
        std::vector<std::size_t> pool(shared_patches.size());
        std::iota(pool.begin(), pool.end(), 0);
        for (std::size_t k = 0; k < cfg.batch_size; ++k) {
          const std::size_t j = k + distill_rng.uniform_index(pool.size() - k);
          std::swap(pool[k], pool[j]);
          distill_idx.push_back(pool[k]);
        }
      }
    }

    for (std::size_t start = 0; start < n_windows; start += cfg.batch_size) {
      const std::size_t stop = std::min(start + cfg.batch_size, n_windows);

      Tensor recon_loss;
      for (std::size_t w = start; w < stop; ++w) {
        const Tensor& pt = client.windows_cache[w];
        const adms::PatchScoreTable& table =
            use_adms ? client.score_tables[w] : client.uniform_tables[w];
        const adms::MaskPlan plan = adms::select_mask(
            table, adms_cfg.mask_ratio, use_adms ? adms_cfg.weight_boost : 1.0, mask_rng);
        Tensor out = backbone::forward(client.model, pt, plan.masked_indices);
        Tensor l = mse(out, pt);
        recon_loss = recon_loss.defined() ? add(recon_loss, l) : l;
      }
      Tensor loss = scale(recon_loss, 1.0 / static_cast<double>(stop - start));

      if (!distill_idx.empty()) {
        Tensor cons;
        for (std::size_t j : distill_idx) {
          Tensor out = backbone::forward(client.model, shared_patches[j], {});
          Tensor l = mse(out, shared_targets[j]);
          cons = cons.defined() ? add(cons, l) : l;
        }
        cons = scale(cons, 1.0 / static_cast<double>(distill_idx.size()));
        loss = add(loss, scale(cons, cfg.lambda));
      }

      last_loss = loss.item();
      if (!std::isfinite(last_loss)) {
        throw TrainingError("local_train: NaN loss at round " + std::to_string(round) +
                            ", epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(start / cfg.batch_size) + ", client " +
                            std::to_string(client.id));
      }

      backward(loss);
      apply_update(params, cfg, adam);
      for (auto& [id, t] : client.model.registry) t.zero_grad();
    }
  }
  return last_loss;
}

namespace {

ClientState make_client_state(const ClientData& data, const backbone::BackboneConfig& model_cfg,
                              const adms::AdmsConfig& adms_cfg, bool use_adms,
                              std::uint64_t model_seed) {
  ClientState st;
  st.id = data.id;
  st.model = backbone::build_model(model_cfg, model_seed);
  st.sample_count = data.windows.size();
  st.windows_cache.reserve(data.windows.size());
  for (const auto& w : data.windows) {
    st.windows_cache.push_back(patches_tensor(w, model_cfg.patch_len));
    const std::size_t n_patches = w.rows / model_cfg.patch_len;
    st.uniform_tables.push_back(uniform_table(n_patches));
    if (use_adms) st.score_tables.push_back(adms::score_window(w, adms_cfg));
  }
  if (!use_adms) st.score_tables = st.uniform_tables;
  return st;
}

}  // namespace

TrainResult run_training(const TrainConfig& cfg, const backbone::BackboneConfig& model_cfg,
                         const adms::AdmsConfig& adms_cfg, const std::vector<ClientData>& clients,
                         const std::vector<Matrix>& shared_windows, std::size_t tune_last_k,
                         bool fine_tune, bool use_adms, std::uint64_t model_seed, WireLog* wire) {
  cfg.validate();
  model_cfg.validate();
  if (clients.size() != cfg.n_clients) {
    throw ProtocolError("run_training: client count does not match config");
  }
  if (cfg.lambda > 0.0 && shared_windows.empty()) {
    throw ProtocolError("run_training: lambda > 0 requires a shared dataset");
  }

  backbone::Model initial = backbone::build_model(model_cfg, model_seed);
  const backbone::ParameterPartition part =
      fine_tune ? backbone::partition_parameters(initial, tune_last_k)
                : backbone::partition_frozen(initial);

  TrainResult result;
  result.global_model = std::move(initial);
  if (cfg.global_rounds == 0) return result;

  std::vector<ClientState> states;
  states.reserve(clients.size());
  for (const auto& c : clients) {
    states.push_back(make_client_state(c, model_cfg, adms_cfg, use_adms, model_seed));
  }
  std::sort(states.begin(), states.end(),
            [](const ClientState& a, const ClientState& b) { return a.id < b.id; });

  std::vector<double> theta_g = backbone::flatten_trainable(result.global_model, part);

  for (std::size_t round = 1; round <= cfg.global_rounds; ++round) {
    RoundRecord rec;
    rec.round = round;

    // broadcast: every client's theta_e overwritten by the global vector
    for (auto& st : states) {
      auto payload = serialize_f64(theta_g);
      rec.messages.push_back({Direction::down, st.id, payload.size()});
      backbone::load_trainable(st.model, part, theta_g);
      if (wire) wire->payloads.push_back(std::move(payload));
    }

    // global snapshot for the consistency term, fixed for this round
    backbone::Model snapshot = backbone::build_model(model_cfg, model_seed);
    backbone::load_trainable(snapshot, part, theta_g);

    std::vector<double> finals(states.size(), 0.0);
    std::vector<std::exception_ptr> errors(states.size());
    auto train_one = [&](std::size_t idx) {
      try {
        finals[idx] = local_train(states[idx], part, snapshot, shared_windows, cfg, adms_cfg,
                                  round, use_adms);
      } catch (...) {
        errors[idx] = std::current_exception();
      }
    };

    if (cfg.parallel_clients && states.size() > 1) {
      std::vector<std::thread> threads;
      threads.reserve(states.size());
      for (std::size_t i = 0; i < states.size(); ++i) threads.emplace_back(train_one, i);
      for (auto& t : threads) t.join();
    } else {
      for (std::size_t i = 0; i < states.size(); ++i) train_one(i);
    }
    for (std::size_t i = 0; i < states.size(); ++i) {
      if (errors[i]) {
        try {
          std::rethrow_exception(errors[i]);
        } catch (const std::exception& e) {
          throw TrainingError("client " + std::to_string(states[i].id) + " failed at round " +
                              std::to_string(round) + ": " + e.what());
        }
      }
    }

    // uploads, in client-id order
    std::vector<std::vector<double>> updates;
    std::vector<double> weights;
    for (std::size_t i = 0; i < states.size(); ++i) {
      auto& st = states[i];
      std::vector<double> theta_i = backbone::flatten_trainable(st.model, part);
      auto payload = serialize_f64(theta_i);
      rec.messages.push_back({Direction::up, st.id, payload.size()});
      if (wire) wire->payloads.push_back(std::move(payload));
      updates.push_back(std::move(theta_i));
      weights.push_back(static_cast<double>(st.sample_count));
      rec.client_final_loss.push_back(finals[i]);
    }

    theta_g = aggregate(updates, weights);
    const auto agg_bytes = serialize_f64(theta_g);
    rec.aggregate_checksum = fnv1a64(agg_bytes.data(), agg_bytes.size());
    result.ledger.rounds.push_back(std::move(rec));
  }

  backbone::load_trainable(result.global_model, part, theta_g);
  return result;
}

backbone::Model centralized_train(const TrainConfig& cfg,
                                  const backbone::BackboneConfig& model_cfg,
                                  const adms::AdmsConfig& adms_cfg, const ClientData& client,
                                  std::size_t tune_last_k, bool fine_tune, bool use_adms,
                                  std::uint64_t model_seed) {
  cfg.validate();
  ClientState st = make_client_state(client, model_cfg, adms_cfg, use_adms, model_seed);
  const backbone::ParameterPartition part =
      fine_tune ? backbone::partition_parameters(st.model, tune_last_k)
                : backbone::partition_frozen(st.model);
  for (std::size_t round = 1; round <= cfg.global_rounds; ++round) {
    local_train(st, part, st.model, {}, cfg, adms_cfg, round, use_adms);
  }
  return std::move(st.model);
}

std::size_t comm_cost_bytes(const RoundLedger& ledger) { return ledger.total_bytes(); }

double comm_cost_gib(const RoundLedger& ledger) {
  return static_cast<double>(ledger.total_bytes()) / 1073741824.0;
}

void export_ledger_csv(const std::string& path, const RoundLedger& ledger) {
  std::ofstream os(path);
  if (!os) throw InputError("export_ledger_csv: cannot open " + path);
  os << "round,direction,client_id,bytes\n";
  for (const auto& r : ledger.rounds) {
    for (const auto& m : r.messages) {
      os << r.round << "," << (m.dir == Direction::down ? "down" : "up") << "," << m.client_id
         << "," << m.payload_bytes << "\n";
    }
  }
}

void export_losses_csv(const std::string& path, const RoundLedger& ledger) {
  std::ofstream os(path);
  if (!os) throw InputError("export_losses_csv: cannot open " + path);
  os << "round,client_index,final_loss\n";
  char buf[64];
  for (const auto& r : ledger.rounds) {
    for (std::size_t i = 0; i < r.client_final_loss.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", r.client_final_loss[i]);
      os << r.round << "," << i << "," << buf << "\n";
    }
  }
}

}  // namespace fedad::fed
