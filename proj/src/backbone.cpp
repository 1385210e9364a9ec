#include "fedad/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "fedad/errors.hpp"
#include "fedad/rng.hpp"

namespace fedad::backbone {

void BackboneConfig::validate() const {
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || patch_len == 0 ||
      input_dim == 0 || max_patches == 0) {
    throw ConfigError("backbone config: all dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ConfigError("backbone config: d_model not divisible by n_heads");
  if (tune_last_k < 1 || tune_last_k > n_layers) {
    throw ConfigError("backbone config: tune_last_k out of range [1, n_layers]");
  }
}

Tensor& Model::param(const std::string& id) {
  for (auto& [pid, t] : registry)
    if (pid == id) return t;
  throw ContractError("unknown parameter id: " + id);
}

const Tensor& Model::param(const std::string& id) const {
  for (const auto& [pid, t] : registry)
    if (pid == id) return t;
  throw ContractError("unknown parameter id: " + id);
}

namespace {

Tensor init_weight(Rng& rng, std::size_t rows, std::size_t cols, std::size_t fan_in) {
  std::vector<double> v(rows * cols);
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& x : v) x = rng.normal() * s;
  return Tensor({rows, cols}, std::move(v), true);
}

Tensor init_vector(std::size_t n, double fill) {
  return Tensor(Shape{n}, std::vector<double>(n, fill), true);
}

}  // namespace

Model build_model(const BackboneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  m.seed = seed;
  Rng rng(seed);

  const std::size_t pw = cfg.patch_width();
  const std::size_t d = cfg.d_model;

  auto reg = [&m](const std::string& id, const Tensor& t) { m.registry.emplace_back(id, t); };

  m.embed_w = init_weight(rng, pw, d, pw);
  m.embed_b = init_vector(d, 0.0);
  reg("embed.weight", m.embed_w);
  reg("embed.bias", m.embed_b);

  m.pos = init_weight(rng, cfg.max_patches, d, d);
  reg("pos.embedding", m.pos);

  m.mask_token = init_weight(rng, 1, d, d);
  reg("mask.token", m.mask_token);

  m.blocks.resize(cfg.n_layers);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    auto& b = m.blocks[i];
    const std::string p = "block" + std::to_string(i) + ".";
    b.ln1_gain = init_vector(d, 1.0);
    b.ln1_bias = init_vector(d, 0.0);
    reg(p + "ln1.gain", b.ln1_gain);
    reg(p + "ln1.bias", b.ln1_bias);
    b.wq = init_weight(rng, d, d, d);
    b.bq = init_vector(d, 0.0);
    b.wk = init_weight(rng, d, d, d);
    b.bk = init_vector(d, 0.0);
    b.wv = init_weight(rng, d, d, d);
    b.bv = init_vector(d, 0.0);
    b.wo = init_weight(rng, d, d, d);
    b.bo = init_vector(d, 0.0);
    reg(p + "attn.wq", b.wq);
    reg(p + "attn.bq", b.bq);
    reg(p + "attn.wk", b.wk);
    reg(p + "attn.bk", b.bk);
    reg(p + "attn.wv", b.wv);
    reg(p + "attn.bv", b.bv);
    reg(p + "attn.wo", b.wo);
    reg(p + "attn.bo", b.bo);
    b.ln2_gain = init_vector(d, 1.0);
    b.ln2_bias = init_vector(d, 0.0);
    reg(p + "ln2.gain", b.ln2_gain);
    reg(p + "ln2.bias", b.ln2_bias);
    b.w1 = init_weight(rng, d, cfg.d_ff, d);
    b.b1 = init_vector(cfg.d_ff, 0.0);
    b.w2 = init_weight(rng, cfg.d_ff, d, cfg.d_ff);
    b.b2 = init_vector(d, 0.0);
    reg(p + "ff.w1", b.w1);
    reg(p + "ff.b1", b.b1);
    reg(p + "ff.w2", b.w2);
    reg(p + "ff.b2", b.b2);
  }

  m.final_gain = init_vector(d, 1.0);
  m.final_bias = init_vector(d, 0.0);
  reg("final_norm.gain", m.final_gain);
  reg("final_norm.bias", m.final_bias);

  m.out_w = init_weight(rng, d, pw, d);
  m.out_b = init_vector(pw, 0.0);
  reg("out_proj.weight", m.out_w);
  reg("out_proj.bias", m.out_b);

  return m;
}

namespace {

bool block_index_of(const std::string& id, std::size_t& out) {
  if (id.rfind("block", 0) != 0) return false;
  const auto dot = id.find('.');
  out = static_cast<std::size_t>(std::stoul(id.substr(5, dot - 5)));
  return true;
}

bool is_layer_norm(const std::string& id) {
  return id.find(".ln1.") != std::string::npos || id.find(".ln2.") != std::string::npos ||
         id.rfind("final_norm.", 0) == 0;
}

ParameterPartition build_partition(const Model& model,
                                   const std::function<bool(const std::string&)>& trainable_pred) {
  ParameterPartition part;
  for (const auto& [id, t] : model.registry) {
    PartitionEntry e;
    e.id = id;
    e.shape = t.shape();
    e.role = trainable_pred(id) ? Role::trainable : Role::frozen;
    if (e.role == Role::trainable)
      part.trainable_count += t.size();
    else
      part.frozen_count += t.size();
    part.entries.push_back(std::move(e));
  }
  return part;
}

}  // namespace

ParameterPartition partition_parameters(const Model& model, std::size_t tune_last_k) {
  const std::size_t n_layers = model.cfg.n_layers;
  if (tune_last_k < 1 || tune_last_k > n_layers) {
    throw ConfigError("partition_parameters: tune_last_k out of range [1, n_layers]");
  }
  const std::size_t first_tuned = n_layers - tune_last_k;
  return build_partition(model, [first_tuned](const std::string& id) {
    if (is_layer_norm(id)) return false;
    std::size_t bi = 0;
    if (block_index_of(id, bi)) return bi >= first_tuned;
    // embed / pos / mask token / output projection
    return true;
  });
}

ParameterPartition partition_frozen(const Model& model) {
  return build_partition(model, [](const std::string&) { return false; });
}

Tensor forward(const Model& model, const Tensor& patches, const std::vector<std::size_t>& masked) {
  const auto& cfg = model.cfg;
  if (patches.rank() != 2 || patches.cols() != cfg.patch_width()) {
    throw ShapeError("forward: patches must be n_patches x " + std::to_string(cfg.patch_width()));
  }
  const std::size_t n_p = patches.rows();
  if (n_p == 0) throw ShapeError("forward: empty patch batch");
  if (n_p > cfg.max_patches) throw ShapeError("forward: window exceeds positional table capacity");
  for (auto idx : masked)
    if (idx >= n_p) throw ContractError("forward: masked index out of range");

  const std::size_t d = cfg.d_model;

  Tensor h = add_rowwise(matmul(patches, model.embed_w), model.embed_b);

  if (!masked.empty()) {
    // masked rows: content embedding zeroed out and replaced by the mask token
    std::vector<double> keep(n_p * d, 1.0);
    std::vector<double> sel(n_p, 0.0);
    for (auto idx : masked) {
      sel[idx] = 1.0;
      std::fill(keep.begin() + idx * d, keep.begin() + (idx + 1) * d, 0.0);
    }
    Tensor keep_t({n_p, d}, std::move(keep));
    Tensor sel_t({n_p, 1}, std::move(sel));
    h = add(multiply(h, keep_t), matmul(sel_t, model.mask_token));
  }

  h = add(h, slice_rows(model.pos, 0, n_p));

  const std::size_t d_h = d / cfg.n_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(d_h));

  for (const auto& b : model.blocks) {
    Tensor a = layer_norm(h, b.ln1_gain, b.ln1_bias);
    Tensor q = add_rowwise(matmul(a, b.wq), b.bq);
    Tensor k = add_rowwise(matmul(a, b.wk), b.bk);
    Tensor v = add_rowwise(matmul(a, b.wv), b.bv);
    std::vector<Tensor> heads;
    heads.reserve(cfg.n_heads);
    for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
      Tensor qh = slice_cols(q, hd * d_h, d_h);
      Tensor kh = slice_cols(k, hd * d_h, d_h);
      Tensor vh = slice_cols(v, hd * d_h, d_h);
      Tensor att = softmax(scale(matmul(qh, transpose(kh)), att_scale));
      heads.push_back(matmul(att, vh));
    }
    Tensor o = cfg.n_heads == 1 ? heads[0] : concat_cols(heads);
    h = add(h, add_rowwise(matmul(o, b.wo), b.bo));

    Tensor f = layer_norm(h, b.ln2_gain, b.ln2_bias);
    f = gelu(add_rowwise(matmul(f, b.w1), b.b1));
    f = add_rowwise(matmul(f, b.w2), b.b2);
    h = add(h, f);
  }

  h = layer_norm(h, model.final_gain, model.final_bias);
  return add_rowwise(matmul(h, model.out_w), model.out_b);
}

std::vector<double> flatten_trainable(const Model& model, const ParameterPartition& part) {
  std::vector<double> flat;
  flat.reserve(part.trainable_count);
  for (const auto& e : part.entries) {
    if (e.role != Role::trainable) continue;
    const auto& v = model.param(e.id).values();
    flat.insert(flat.end(), v.begin(), v.end());
  }
  return flat;
}

void load_trainable(Model& model, const ParameterPartition& part, const std::vector<double>& flat) {
  if (flat.size() != part.trainable_count) {
    throw ContractError("load_trainable: vector length " + std::to_string(flat.size()) +
                        " != trainable_count " + std::to_string(part.trainable_count));
  }
  std::size_t off = 0;
  for (const auto& e : part.entries) {
    if (e.role != Role::trainable) continue;
    auto& v = model.param(e.id).mutable_values();
    std::copy(flat.begin() + off, flat.begin() + off + v.size(), v.begin());
    off += v.size();
  }
}

std::size_t total_parameter_count(const Model& model) {
  std::size_t n = 0;
  for (const auto& [id, t] : model.registry) n += t.size();
  return n;
}

// --- checkpoint io -----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'F', 'A', 'D', 'C'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(os, bits);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& is) {
  const std::uint64_t bits = read_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("save_checkpoint: cannot open " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  const auto& c = model.cfg;
  for (std::size_t v : {c.d_model, c.n_layers, c.n_heads, c.d_ff, c.patch_len, c.input_dim,
                        c.max_patches, c.tune_last_k}) {
    write_u32(os, static_cast<std::uint32_t>(v));
  }
  write_u64(os, model.seed);
  for (const auto& [id, t] : model.registry)
    for (double v : t.values()) write_f64(os, v);
  if (!os) throw InputError("save_checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("load_checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw InputError("load_checkpoint: bad magic in " + path);
  }
  const std::uint32_t version = read_u32(is);
  if (version != kVersion) throw InputError("load_checkpoint: unsupported version");
  BackboneConfig cfg;
  cfg.d_model = read_u32(is);
  cfg.n_layers = read_u32(is);
  cfg.n_heads = read_u32(is);
  cfg.d_ff = read_u32(is);
  cfg.patch_len = read_u32(is);
  cfg.input_dim = read_u32(is);
  cfg.max_patches = read_u32(is);
  cfg.tune_last_k = read_u32(is);
  const std::uint64_t seed = read_u64(is);
  Model model = build_model(cfg, seed);
  for (auto& [id, t] : model.registry) {
    auto& v = t.mutable_values();
    for (auto& x : v) x = read_f64(is);
  }
  if (!is) throw InputError("load_checkpoint: truncated file " + path);
  return model;
}

}  // namespace fedad::backbone
