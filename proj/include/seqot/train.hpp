#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqot/agreement.hpp"
#include "seqot/data.hpp"
#include "seqot/model.hpp"
#include "seqot/rng.hpp"
#include "seqot/tensor.hpp"

namespace seqot::train {

enum class Objective : std::int8_t {
  kCeOnly = 0,
  kCeOt = 1,
  kCeAt = 2,
  kCeOtAt = 3,
  kSra = 4,
  kSf = 5,
  kCl = 6,
};

// CLI spellings: ce, ce+ot, ce+at, ce+ot+at, sra, sf, cl.
Objective objective_from_name(const std::string& name);
std::string objective_name(Objective objective);

// How the sequence-length multiplier on the transport term is taken: one
// batch-mean factor (default reading of "averaged sequence length") or each
// pair's own source length.
enum class LenScale : std::int8_t { kBatchMean = 0, kPerSentence = 1 };

enum class SelectionRule : std::int8_t { kZeroShotAccuracy = 0, kSupervisedAccuracy = 1 };

struct TrainConfig {
  Objective objective = Objective::kCeOtAt;
  double gamma1 = 0.4;    // transport term weight
  double gamma2 = 0.001;  // agreement term weight
  double sra_gamma = 1.0;
  double sf_gamma = 1.0;
  double cl_gamma = 1.0;
  double cl_tau = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-8;
  double peak_lr = 3e-3;
  std::int64_t warmup_steps = 400;
  std::int64_t pretrain_steps = 1000;  // cross-entropy-only lead-in
  std::int64_t total_steps = 6000;
  std::int64_t batch_sentences = 32;
  std::int64_t eval_every = 500;
  std::uint64_t seed = 0;
  bool stop_grad_hy = true;             // agreement branch; transport always detaches
  bool ot_include_tag_position = true;  // transport over all encoder rows incl. tag
  LenScale ot_len_scale = LenScale::kBatchMean;
  SelectionRule selection = SelectionRule::kZeroShotAccuracy;
  std::int32_t eos_token = -1;  // set from the registry before computing losses
  agreement::MixupConfig mixup;
  model::ModelConfig model;

  void validate() const;
};

struct LossBreakdown {
  double ce = 0.0;
  double ot = 0.0;
  double at = 0.0;
  double baseline_reg = 0.0;  // SRA/SF/CL regularizer value, 0 otherwise
  double total = 0.0;
  double avg_src_len = 0.0;
};

// Parameter-name keyed gradient accumulator shared across per-pair tapes.
using Gradients = std::unordered_map<std::string, Tensor>;

// Combined objective over one batch. Each pair runs on its own tape; the
// encoder states of the target side are computed once and shared by the
// transport and agreement terms. Inactive terms (by objective or a zero
// gamma) are skipped entirely, leaving the arithmetic and RNG consumption of
// a pure cross-entropy step. dropout_rng null means evaluation-mode forward;
// grads null skips backward. mixup_base seeds one stream per batch position.
LossBreakdown combined_loss(const model::ModelParameters& params,
                            const std::vector<data::ParallelPair>& batch,
                            const TrainConfig& cfg, Rng* dropout_rng,
                            const Rng* mixup_base, Gradients* grads);

// Contrast objectives: representation alignment (sra), self-fusion style
// prediction matching (sf), contrastive alignment (cl). Returns the total
// loss value; the optional breakdown reports ce and the regularizer.
double baseline_loss(const model::ModelParameters& params,
                     const std::vector<data::ParallelPair>& batch, Objective which,
                     const TrainConfig& cfg, Rng* dropout_rng, Gradients* grads,
                     LossBreakdown* breakdown);

// Mean over anchors i of -log( exp(cos(a_i,p_i)/tau) / sum_j exp(cos(a_i,p_j)/tau) ).
// Needs at least two pairs so in-batch negatives exist.
NodeId info_nce(Tape& tape, const std::vector<NodeId>& anchors,
                const std::vector<NodeId>& positives, double tau);

// Inverse-square-root schedule, step is 1-indexed:
// lr(t) = peak_lr * min(t^-1/2, t * warmup^-3/2); maximum at t = warmup.
double learning_rate(const TrainConfig& cfg, std::int64_t step);

class AdamOptimizer {
 public:
  AdamOptimizer(double beta1, double beta2, double eps)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(model::ModelParameters& params, const Gradients& grads, double lr);
  std::int64_t steps_taken() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::unordered_map<std::string, Tensor> m_, v_;
};

struct DirectionMetrics {
  std::int32_t source = -1;
  std::int32_t target = -1;
  data::DirectionKind kind = data::DirectionKind::kSupervised;
  double accuracy = 0.0;
  double off_target = 0.0;
  double consistency = 0.0;  // shared by all directions into the same target
};

struct MetricsRecord {
  std::int64_t step = 0;
  std::vector<DirectionMetrics> directions;
  double zero_shot_accuracy = 0.0;
  double supervised_accuracy = 0.0;
  double off_target_rate = 0.0;   // mean over zero-shot directions
  double consistency = 0.0;       // mean over target languages
  LossBreakdown loss;
};

// Produces the translation for one source sentence into a target language.
using DecodeFn = std::function<std::vector<std::int32_t>(const data::TaggedSentence& src,
                                                         std::int32_t target_language)>;

// Scores a split against exact cipher ground truth: per-position token
// accuracy, off-target rate, and pairwise consistency of translations into
// each fixed target language.
MetricsRecord score_with_decoder(const data::GeneratedData& data, data::Split split,
                                 const DecodeFn& decode);

// score_with_decoder driven by greedy decoding under the given parameters.
MetricsRecord evaluate(const model::ModelParameters& params, const data::GeneratedData& data,
                       data::Split split);

struct TrainResult {
  model::ModelParameters final_params;
  model::ModelParameters best_params;  // by the configured selection rule on valid
  std::int64_t best_step = 0;
  double best_selection_metric = -1.0;
  std::vector<MetricsRecord> metrics;
  double steps_per_second = 0.0;
};

// Pretrains with cross-entropy only, then continues with the configured
// objective; evaluates on the valid split every eval_every steps and keeps
// the best checkpoint. Deterministic for a fixed config.
TrainResult train(const TrainConfig& cfg, const data::GeneratedData& data);

void write_metrics_jsonl(const std::string& path, const std::vector<MetricsRecord>& records);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records);

}  // namespace seqot::train
