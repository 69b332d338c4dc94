// Minimal shared-parameter transformer encoder-decoder over the tape ops.
// One parameter set serves every translation direction; language identity
// enters only through the id token prepended to each sequence.
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqot/rng.hpp"
#include "seqot/tensor.hpp"

namespace seqot::model {

struct ModelConfig {
  std::int64_t d_model = 64;
  std::int64_t n_heads = 4;
  std::int64_t n_layers = 2;
  std::int64_t d_ff = 128;
  std::int64_t vocab_size = 512;
  std::int64_t max_len = 32;
  double dropout_rate = 0.1;

  void validate() const;
};

// Named tensors in a stable order (iteration order = registration order), so
// optimizer state and checkpoints stay aligned across runs.
class ModelParameters {
 public:
  ModelConfig config;

  void add(std::string name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  std::size_t count() const { return names_.size(); }

  static ModelParameters init(const ModelConfig& cfg, Rng& rng);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct TaggedSentence {
  std::int32_t language = -1;
  std::vector<std::int32_t> tokens;  // language-id token first, content after

  bool operator==(const TaggedSentence&) const = default;
};

// Stages one parameter set onto a tape and runs forward passes against it.
// with_grad=false binds constants (evaluation); train_mode draws inverted
// dropout masks from dropout_rng, otherwise dropout is identity.
class BoundModel {
 public:
  BoundModel(Tape& tape, const ModelParameters& params, bool with_grad, bool train_mode,
             Rng* dropout_rng);

  // Encoder states, one row per input position (tag row included).
  NodeId encode(const TaggedSentence& src);
  // Row k is the log-distribution of continuation token k given the prefix
  // tokens before it (teacher forcing; causal mask).
  NodeId decode_logprobs(NodeId enc_states, const TaggedSentence& tgt_prefixed);

  NodeId param_node(const std::string& name) const;
  Tape& tape() { return tape_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  NodeId embed(const std::vector<std::int32_t>& tokens);
  NodeId attention(NodeId q_in, NodeId kv_in, bool causal, const std::string& prefix);
  NodeId ffn(NodeId x, const std::string& prefix);
  NodeId residual_norm(NodeId x, NodeId sub, const std::string& prefix);
  NodeId dropout(NodeId x);
  void check_tokens(const std::vector<std::int32_t>& tokens, const char* who) const;

  Tape& tape_;
  ModelConfig cfg_;
  std::unordered_map<std::string, NodeId> nodes_;
  bool train_mode_;
  Rng* dropout_rng_;
};

// -(1/n) sum_k logprobs[k, gold_k]. Lengths must match.
NodeId cross_entropy_loss(Tape& tape, NodeId logprobs, const std::vector<std::int32_t>& gold);

// Argmax decoding from the target language tag until eos_id or max_steps.
// Returns generated content tokens, eos excluded. Deterministic.
std::vector<std::int32_t> greedy_decode(const ModelParameters& params, const TaggedSentence& src,
                                        std::int32_t target_tag_token, std::int32_t eos_id,
                                        std::int64_t max_steps);

// Versioned binary checkpoint: magic "SEQOT1", config block, then named
// tensors as (name length, name, shape, little-endian 64-bit floats).
void save_checkpoint(const std::string& path, const ModelParameters& params);
ModelParameters load_checkpoint(const std::string& path);

}  // namespace seqot::model
