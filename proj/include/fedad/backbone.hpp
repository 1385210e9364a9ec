#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fedad/tensor.hpp"

namespace fedad::backbone {

// Compact transformer that reconstructs patched windows. Stands in for a
// large pretrained backbone: every party derives bit-identical "pretrained"
// weights from a shared seed.
struct BackboneConfig {
  std::size_t d_model = 32;
  std::size_t n_layers = 8;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t patch_len = 10;
  std::size_t input_dim = 1;
  std::size_t max_patches = 32;   // capacity of the positional table
  std::size_t tune_last_k = 3;

  void validate() const;
  std::size_t patch_width() const { return patch_len * input_dim; }
};

struct Block {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1, w2, b2;
};

struct Model {
  BackboneConfig cfg;
  std::uint64_t seed = 0;
  Tensor embed_w, embed_b;
  Tensor pos;         // max_patches x d_model
  Tensor mask_token;  // 1 x d_model
  std::vector<Block> blocks;
  Tensor final_gain, final_bias;
  Tensor out_w, out_b;

  // registry in stable construction order; handles alias the fields above
  std::vector<std::pair<std::string, Tensor>> registry;

  Tensor& param(const std::string& id);
  const Tensor& param(const std::string& id) const;
};

enum class Role { trainable, frozen };

struct PartitionEntry {
  std::string id;
  Role role;
  Shape shape;
};

struct ParameterPartition {
  std::vector<PartitionEntry> entries;  // registry order, exhaustive
  std::size_t trainable_count = 0;
  std::size_t frozen_count = 0;
};

Model build_model(const BackboneConfig& cfg, std::uint64_t seed);

// Trainable set: input embedding, positional table, mask token, output
// projection, plus attention and feed-forward weights of the last
// tune_last_k blocks. Layer norms and all earlier blocks stay frozen.
ParameterPartition partition_parameters(const Model& model, std::size_t tune_last_k);

// Everything frozen (the no-fine-tuning ablation); trainable_count == 0.
ParameterPartition partition_frozen(const Model& model);

// patches: n_patches x (patch_len*input_dim); masked patch indices are
// replaced by the mask token at the embedding stage. Output reconstructs
// every patch with the same shape as the input.
Tensor forward(const Model& model, const Tensor& patches, const std::vector<std::size_t>& masked);

std::vector<double> flatten_trainable(const Model& model, const ParameterPartition& part);
void load_trainable(Model& model, const ParameterPartition& part, const std::vector<double>& flat);

void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

// Total parameter scalars, split by partition role (oracle-checkable).
std::size_t total_parameter_count(const Model& model);

}  // namespace fedad::backbone
