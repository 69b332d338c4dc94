#include "seqot/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace seqot::model {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

constexpr double kMaskValue = -1e30;

}  // namespace

void ModelConfig::validate() const {
  require(d_model > 0 && n_heads > 0 && n_layers > 0 && d_ff > 0 && vocab_size > 0 &&
              max_len > 0,
          "model config: all dimensions must be positive");
  require(d_model % n_heads == 0, "model config: d_model " + std::to_string(d_model) +
                                      " not divisible by n_heads " + std::to_string(n_heads));
  require(dropout_rate >= 0.0 && dropout_rate < 1.0,
          "model config: dropout_rate must lie in [0, 1)");
}

void ModelParameters::add(std::string name, Tensor t) {
  require(index_.find(name) == index_.end(), "parameters: duplicate name " + name);
  index_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(t));
}

Tensor& ModelParameters::at(const std::string& name) {
  auto it = index_.find(name);
  require(it != index_.end(), "parameters: unknown name " + name);
  return tensors_[it->second];
}

const Tensor& ModelParameters::at(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), "parameters: unknown name " + name);
  return tensors_[it->second];
}

ModelParameters ModelParameters::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParameters p;
  p.config = cfg;

  // Fan-scaled draws keep early activations width-independent; the embedding
  // scale pairs with the sqrt(d_model) lookup multiplier to give unit-variance
  // inputs regardless of width.
  auto matrix = [&rng](std::int64_t rows, std::int64_t cols, double std) {
    Tensor t = Tensor::zeros({rows, cols});
    for (auto& v : t.data) v = rng.normal() * std;
    t.requires_grad = true;
    return t;
  };
  auto xavier = [&matrix](std::int64_t rows, std::int64_t cols) {
    return matrix(rows, cols, std::sqrt(2.0 / static_cast<double>(rows + cols)));
  };
  auto ones = [](std::int64_t n) {
    Tensor t = Tensor::full({n}, 1.0);
    t.requires_grad = true;
    return t;
  };
  auto zeros = [](std::int64_t n) {
    Tensor t = Tensor::zeros({n});
    t.requires_grad = true;
    return t;
  };

  const std::int64_t d = cfg.d_model, ff = cfg.d_ff, v = cfg.vocab_size;
  p.add("embedding", matrix(v, d, 1.0 / std::sqrt(static_cast<double>(d))));
  p.add("out_proj", xavier(d, v));

  auto add_attn = [&](const std::string& prefix) {
    p.add(prefix + ".wq", xavier(d, d));
    p.add(prefix + ".wk", xavier(d, d));
    p.add(prefix + ".wv", xavier(d, d));
    p.add(prefix + ".wo", xavier(d, d));
    p.add(prefix + ".ln.gain", ones(d));
    p.add(prefix + ".ln.bias", zeros(d));
  };
  auto add_ffn = [&](const std::string& prefix) {
    p.add(prefix + ".w1", xavier(d, ff));
    p.add(prefix + ".b1", zeros(ff));
    p.add(prefix + ".w2", xavier(ff, d));
    p.add(prefix + ".b2", zeros(d));
    p.add(prefix + ".ln.gain", ones(d));
    p.add(prefix + ".ln.bias", zeros(d));
  };

  for (std::int64_t i = 0; i < cfg.n_layers; ++i) {
    const std::string enc = "enc" + std::to_string(i);
    add_attn(enc + ".attn");
    add_ffn(enc + ".ffn");
  }
  for (std::int64_t i = 0; i < cfg.n_layers; ++i) {
    const std::string dec = "dec" + std::to_string(i);
    add_attn(dec + ".self");
    add_attn(dec + ".cross");
    add_ffn(dec + ".ffn");
  }
  return p;
}

// ---------------------------------------------------------------------------

BoundModel::BoundModel(Tape& tape, const ModelParameters& params, bool with_grad,
                       bool train_mode, Rng* dropout_rng)
    : tape_(tape), cfg_(params.config), train_mode_(train_mode), dropout_rng_(dropout_rng) {
  cfg_.validate();
  for (const auto& name : params.names()) {
    Tensor t = params.at(name);
    if (with_grad) {
      t.requires_grad = true;
      nodes_.emplace(name, tape_.leaf(std::move(t)));
    } else {
      nodes_.emplace(name, tape_.constant(std::move(t)));
    }
  }
}

NodeId BoundModel::param_node(const std::string& name) const {
  auto it = nodes_.find(name);
  require(it != nodes_.end(), "model: unknown parameter " + name);
  return it->second;
}

void BoundModel::check_tokens(const std::vector<std::int32_t>& tokens, const char* who) const {
  require(!tokens.empty(), std::string(who) + ": empty token sequence");
  require(static_cast<std::int64_t>(tokens.size()) <= cfg_.max_len,
          std::string(who) + ": length " + std::to_string(tokens.size()) +
              " exceeds max_len " + std::to_string(cfg_.max_len));
  for (auto id : tokens)
    require(id >= 0 && id < cfg_.vocab_size,
            std::string(who) + ": token id " + std::to_string(id) + " outside vocabulary of " +
                std::to_string(cfg_.vocab_size));
}

NodeId BoundModel::dropout(NodeId x) {
  if (!train_mode_ || cfg_.dropout_rate <= 0.0 || dropout_rng_ == nullptr) return x;
  const double keep = 1.0 - cfg_.dropout_rate;
  const Tensor& v = tape_.value(x);
  Tensor mask = Tensor::zeros(v.shape);
  for (auto& m : mask.data) m = dropout_rng_->bernoulli(keep) ? 1.0 / keep : 0.0;
  return tape_.mul(x, tape_.constant(std::move(mask)));
}

NodeId BoundModel::embed(const std::vector<std::int32_t>& tokens) {
  const std::int64_t n = static_cast<std::int64_t>(tokens.size());
  const std::int64_t d = cfg_.d_model;
  NodeId e = tape_.embedding_lookup(param_node("embedding"), tokens);
  e = tape_.mul(e, tape_.constant(Tensor::scalar(std::sqrt(static_cast<double>(d)))));
  Tensor pos = Tensor::zeros({n, d});
  for (std::int64_t p = 0; p < n; ++p)
    for (std::int64_t j = 0; j < d; j += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(d));
      pos.at(p, j) = std::sin(static_cast<double>(p) * freq);
      if (j + 1 < d) pos.at(p, j + 1) = std::cos(static_cast<double>(p) * freq);
    }
  e = tape_.add(e, tape_.constant(std::move(pos)));
  return dropout(e);
}

NodeId BoundModel::attention(NodeId q_in, NodeId kv_in, bool causal, const std::string& prefix) {
  const std::int64_t d = cfg_.d_model;
  const std::int64_t heads = cfg_.n_heads;
  const std::int64_t dh = d / heads;
  NodeId q = tape_.matmul(q_in, param_node(prefix + ".wq"));
  NodeId k = tape_.matmul(kv_in, param_node(prefix + ".wk"));
  NodeId v = tape_.matmul(kv_in, param_node(prefix + ".wv"));
  const std::int64_t nq = tape_.value(q).shape[0];
  const std::int64_t nk = tape_.value(k).shape[0];

  NodeId mask = -1;
  if (causal) {
    Tensor m = Tensor::zeros({nq, nk});
    for (std::int64_t i = 0; i < nq; ++i)
      for (std::int64_t j = i + 1; j < nk; ++j) m.at(i, j) = kMaskValue;
    mask = tape_.constant(std::move(m));
  }
  NodeId scale = tape_.constant(Tensor::scalar(1.0 / std::sqrt(static_cast<double>(dh))));

  std::vector<NodeId> head_outs;
  head_outs.reserve(static_cast<std::size_t>(heads));
  for (std::int64_t h = 0; h < heads; ++h) {
    NodeId qh = tape_.slice(q, 1, h * dh, dh);
    NodeId kh = tape_.slice(k, 1, h * dh, dh);
    NodeId vh = tape_.slice(v, 1, h * dh, dh);
    NodeId scores = tape_.mul(tape_.matmul(qh, kh, false, true), scale);
    if (causal) scores = tape_.add(scores, mask);
    head_outs.push_back(tape_.matmul(tape_.softmax(scores), vh));
  }
  NodeId merged = heads == 1 ? head_outs[0] : tape_.concat(head_outs, 1);
  return tape_.matmul(merged, param_node(prefix + ".wo"));
}

NodeId BoundModel::ffn(NodeId x, const std::string& prefix) {
  NodeId h = tape_.add(tape_.matmul(x, param_node(prefix + ".w1")), param_node(prefix + ".b1"));
  h = tape_.gelu(h);
  return tape_.add(tape_.matmul(h, param_node(prefix + ".w2")), param_node(prefix + ".b2"));
}

NodeId BoundModel::residual_norm(NodeId x, NodeId sub, const std::string& prefix) {
  NodeId summed = tape_.add(x, dropout(sub));
  return tape_.layer_norm(summed, param_node(prefix + ".ln.gain"),
                          param_node(prefix + ".ln.bias"));
}

NodeId BoundModel::encode(const TaggedSentence& src) {
  check_tokens(src.tokens, "encode");
  NodeId h = embed(src.tokens);
  for (std::int64_t i = 0; i < cfg_.n_layers; ++i) {
    const std::string base = "enc" + std::to_string(i);
    h = residual_norm(h, attention(h, h, false, base + ".attn"), base + ".attn");
    h = residual_norm(h, ffn(h, base + ".ffn"), base + ".ffn");
  }
  return h;
}

NodeId BoundModel::decode_logprobs(NodeId enc_states, const TaggedSentence& tgt_prefixed) {
  check_tokens(tgt_prefixed.tokens, "decode_logprobs");
  NodeId t = embed(tgt_prefixed.tokens);
  for (std::int64_t i = 0; i < cfg_.n_layers; ++i) {
    const std::string base = "dec" + std::to_string(i);
    t = residual_norm(t, attention(t, t, true, base + ".self"), base + ".self");
    t = residual_norm(t, attention(t, enc_states, false, base + ".cross"), base + ".cross");
    t = residual_norm(t, ffn(t, base + ".ffn"), base + ".ffn");
  }
  return tape_.log_softmax(tape_.matmul(t, param_node("out_proj")));
}

NodeId cross_entropy_loss(Tape& tape, NodeId logprobs, const std::vector<std::int32_t>& gold) {
  const Tensor& lp = tape.value(logprobs);
  require(lp.shape.size() == 2, "cross_entropy_loss: logprobs must be a matrix, got " +
                                    shape_to_string(lp.shape));
  const std::int64_t n = lp.shape[0], v = lp.shape[1];
  require(static_cast<std::int64_t>(gold.size()) == n,
          "cross_entropy_loss: " + std::to_string(gold.size()) + " gold tokens for " +
              std::to_string(n) + " prediction rows");
  Tensor onehot = Tensor::zeros({n, v});
  for (std::int64_t k = 0; k < n; ++k) {
    const std::int32_t id = gold[static_cast<std::size_t>(k)];
    require(id >= 0 && id < v,
            "cross_entropy_loss: gold id " + std::to_string(id) + " outside vocabulary");
    onehot.at(k, id) = 1.0;
  }
  NodeId picked = tape.sum(tape.mul(logprobs, tape.constant(std::move(onehot))), -1);
  return tape.mul(picked, tape.constant(Tensor::scalar(-1.0 / static_cast<double>(n))));
}

std::vector<std::int32_t> greedy_decode(const ModelParameters& params, const TaggedSentence& src,
                                        std::int32_t target_tag_token, std::int32_t eos_id,
                                        std::int64_t max_steps) {
  Tape tape;
  BoundModel bm(tape, params, false, false, nullptr);
  NodeId h = bm.encode(src);

  TaggedSentence prefix;
  prefix.language = -1;
  prefix.tokens = {target_tag_token};
  std::vector<std::int32_t> out;
  const std::int64_t room = params.config.max_len - 1;
  for (std::int64_t step = 0; step < std::min(max_steps, room); ++step) {
    NodeId lp = bm.decode_logprobs(h, prefix);
    const Tensor& v = tape.value(lp);
    const std::int64_t last = v.shape[0] - 1;
    std::int32_t best = 0;
    for (std::int64_t j = 1; j < v.shape[1]; ++j)
      if (v.at(last, j) > v.at(last, best)) best = static_cast<std::int32_t>(j);
    if (best == eos_id) break;
    out.push_back(best);
    prefix.tokens.push_back(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format: "SEQOT1" magic, config block, tensor count, then per
// tensor (u32 name length, name bytes, u32 rank, i64 dims, f64 data), all
// little-endian.

namespace {

constexpr char kMagic[6] = {'S', 'E', 'Q', 'O', 'T', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

void put_i64(std::ostream& os, std::int64_t v) { put_u64(os, static_cast<std::uint64_t>(v)); }

void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::int64_t get_i64(std::istream& is) { return static_cast<std::int64_t>(get_u64(is)); }

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace

void save_checkpoint(const std::string& path, const ModelParameters& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  const ModelConfig& c = params.config;
  put_i64(os, c.d_model);
  put_i64(os, c.n_heads);
  put_i64(os, c.n_layers);
  put_i64(os, c.d_ff);
  put_i64(os, c.vocab_size);
  put_i64(os, c.max_len);
  put_f64(os, c.dropout_rate);
  put_u64(os, params.count());
  for (const auto& name : params.names()) {
    const Tensor& t = params.at(name);
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto dim : t.shape) put_i64(os, dim);
    for (double v : t.data) put_f64(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

ModelParameters load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[6];
  is.read(magic, sizeof(magic));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  if (std::memcmp(magic, kMagic, 5) == 0 && magic[5] != kMagic[5])
    throw std::runtime_error("checkpoint: unsupported version " + std::string(magic, 6));
  if (std::memcmp(magic, kMagic, 6) != 0)
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");

  ModelConfig c;
  c.d_model = get_i64(is);
  c.n_heads = get_i64(is);
  c.n_layers = get_i64(is);
  c.d_ff = get_i64(is);
  c.vocab_size = get_i64(is);
  c.max_len = get_i64(is);
  c.dropout_rate = get_f64(is);
  c.validate();

  ModelParameters p;
  p.config = c;
  const std::uint64_t count = get_u64(is);
  for (std::uint64_t t = 0; t < count; ++t) {
    const std::uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    const std::uint32_t rank = get_u32(is);
    Shape shape(rank);
    for (auto& dim : shape) dim = get_i64(is);
    Tensor tensor = Tensor::zeros(shape);
    for (auto& v : tensor.data) v = get_f64(is);
    tensor.requires_grad = true;
    p.add(std::move(name), std::move(tensor));
  }
  return p;
}

}  // namespace seqot::model
