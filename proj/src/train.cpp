#include "seqot/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "seqot/smd.hpp"

namespace seqot::train {

namespace {

using data::DirectionKind;
using data::ParallelPair;
using data::Split;
using model::BoundModel;
using model::ModelParameters;
using model::TaggedSentence;

// Decode length cap during evaluation: longest content plus EOS headroom.
constexpr std::int64_t kEvalMaxSteps = 18;

bool is_baseline(Objective o) {
  return o == Objective::kSra || o == Objective::kSf || o == Objective::kCl;
}

std::vector<std::int32_t> content_tokens(const TaggedSentence& s) {
  if (s.tokens.empty()) throw std::invalid_argument("train: sentence has no tag token");
  return {s.tokens.begin() + 1, s.tokens.end()};
}

std::vector<std::int32_t> gold_tokens(const TaggedSentence& target, std::int32_t eos) {
  std::vector<std::int32_t> gold(target.tokens.begin() + 1, target.tokens.end());
  gold.push_back(eos);
  return gold;
}

double mean_source_content_length(const std::vector<ParallelPair>& batch) {
  double acc = 0.0;
  for (const auto& p : batch)
    acc += static_cast<double>(p.source.tokens.size()) - 1.0;
  return acc / static_cast<double>(batch.size());
}

void accumulate(const GradientMap& gm, const BoundModel& bm, const ModelParameters& params,
                double scale, Gradients& out) {
  for (const auto& name : params.names()) {
    const NodeId id = bm.param_node(name);
    if (!gm.has(id)) continue;
    const Tensor& g = gm.at(id);
    auto it = out.find(name);
    if (it == out.end()) {
      Tensor scaled = g;
      for (double& v : scaled.data) v *= scale;
      out.emplace(name, std::move(scaled));
    } else {
      for (std::size_t k = 0; k < g.data.size(); ++k)
        it->second.data[k] += g.data[k] * scale;
    }
  }
}

}  // namespace

Objective objective_from_name(const std::string& name) {
  if (name == "ce") return Objective::kCeOnly;
  if (name == "ce+ot") return Objective::kCeOt;
  if (name == "ce+at") return Objective::kCeAt;
  if (name == "ce+ot+at") return Objective::kCeOtAt;
  if (name == "sra") return Objective::kSra;
  if (name == "sf") return Objective::kSf;
  if (name == "cl") return Objective::kCl;
  throw std::invalid_argument("unknown objective '" + name +
                              "' (expected ce, ce+ot, ce+at, ce+ot+at, sra, sf, cl)");
}

std::string objective_name(Objective objective) {
  switch (objective) {
    case Objective::kCeOnly: return "ce";
    case Objective::kCeOt: return "ce+ot";
    case Objective::kCeAt: return "ce+at";
    case Objective::kCeOtAt: return "ce+ot+at";
    case Objective::kSra: return "sra";
    case Objective::kSf: return "sf";
    case Objective::kCl: return "cl";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (gamma1 < 0.0 || gamma2 < 0.0)
    throw std::invalid_argument("TrainConfig: gammas must be non-negative");
  if (sra_gamma < 0.0 || sf_gamma < 0.0 || cl_gamma < 0.0)
    throw std::invalid_argument("TrainConfig: baseline gammas must be non-negative");
  if (cl_tau <= 0.0) throw std::invalid_argument("TrainConfig: cl_tau must be positive");
  if (warmup_steps < 1) throw std::invalid_argument("TrainConfig: warmup_steps must be >= 1");
  if (total_steps < 1) throw std::invalid_argument("TrainConfig: total_steps must be >= 1");
  if (pretrain_steps < 0 || pretrain_steps > total_steps)
    throw std::invalid_argument("TrainConfig: pretrain_steps outside [0, total_steps]");
  if (batch_sentences < 1)
    throw std::invalid_argument("TrainConfig: batch_sentences must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("TrainConfig: eval_every must be >= 1");
  if (peak_lr <= 0.0) throw std::invalid_argument("TrainConfig: peak_lr must be positive");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0)
    throw std::invalid_argument("TrainConfig: adam betas must lie in [0, 1)");
  if (adam_eps <= 0.0) throw std::invalid_argument("TrainConfig: adam_eps must be positive");
  model.validate();
}

LossBreakdown combined_loss(const ModelParameters& params,
                            const std::vector<ParallelPair>& batch, const TrainConfig& cfg,
                            Rng* dropout_rng, const Rng* mixup_base, Gradients* grads) {
  if (batch.empty()) throw std::invalid_argument("combined_loss: empty batch");
  if (is_baseline(cfg.objective))
    throw std::invalid_argument("combined_loss: objective is a contrast baseline");
  const bool want_ot =
      (cfg.objective == Objective::kCeOt || cfg.objective == Objective::kCeOtAt) &&
      cfg.gamma1 != 0.0;
  const bool want_at =
      (cfg.objective == Objective::kCeAt || cfg.objective == Objective::kCeOtAt) &&
      cfg.gamma2 != 0.0;
  if (want_at && mixup_base == nullptr)
    throw std::invalid_argument("combined_loss: agreement term needs a mixup stream");
  if (cfg.eos_token < 0 || cfg.eos_token >= cfg.model.vocab_size)
    throw std::invalid_argument("combined_loss: eos_token not configured");

  LossBreakdown out;
  out.avg_src_len = mean_source_content_length(batch);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double total_acc = 0.0;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const ParallelPair& pair = batch[i];
    Tape tape;
    BoundModel bm(tape, params, grads != nullptr, dropout_rng != nullptr, dropout_rng);

    const NodeId hx = bm.encode(pair.source);
    const NodeId ce = model::cross_entropy_loss(
        tape, bm.decode_logprobs(hx, pair.target), gold_tokens(pair.target, cfg.eos_token));
    NodeId total = ce;

    NodeId hy = -1;
    if (want_ot || want_at) hy = bm.encode(pair.target);

    if (want_ot) {
      NodeId ox = hx;
      NodeId oy = hy;
      if (!cfg.ot_include_tag_position) {
        ox = tape.slice(hx, 0, 1, static_cast<std::int64_t>(pair.source.tokens.size()) - 1);
        oy = tape.slice(hy, 0, 1, static_cast<std::int64_t>(pair.target.tokens.size()) - 1);
      }
      const NodeId ot = smd::ot_loss(tape, ox, oy);
      const double len_coeff =
          cfg.ot_len_scale == LenScale::kBatchMean
              ? out.avg_src_len
              : static_cast<double>(pair.source.tokens.size()) - 1.0;
      out.ot += tape.value(ot).item() * inv_b;
      total = tape.add(
          total, tape.mul(ot, tape.constant(Tensor::scalar(cfg.gamma1 * len_coeff))));
    }

    if (want_at) {
      Rng pair_rng = mixup_base->fork("pair", static_cast<std::uint64_t>(i));
      const auto trunc =
          agreement::truncate_pair(content_tokens(pair.source), content_tokens(pair.target));
      const auto mixed =
          agreement::sample_mixup(trunc.x, trunc.y, pair.source.tokens.front(),
                                  pair.target.tokens.front(), cfg.mixup, pair_rng);
      TaggedSentence z;
      z.language = -1;
      z.tokens.reserve(mixed.z.size() + 1);
      z.tokens.push_back(mixed.language_tag);
      z.tokens.insert(z.tokens.end(), mixed.z.begin(), mixed.z.end());

      const NodeId lpx = bm.decode_logprobs(hx, z);
      const NodeId hy_branch = cfg.stop_grad_hy ? tape.stop_gradient(hy) : hy;
      const NodeId lpy = bm.decode_logprobs(hy_branch, z);
      const NodeId at = agreement::agreement_kl(tape, tape.exp(lpx), tape.exp(lpy));
      out.at += tape.value(at).item() * inv_b;
      total = tape.add(total, tape.mul(at, tape.constant(Tensor::scalar(cfg.gamma2))));
    }

    out.ce += tape.value(ce).item() * inv_b;
    total_acc += tape.value(total).item() * inv_b;
    if (grads) accumulate(tape.backward(total), bm, params, inv_b, *grads);
  }

  out.total = cfg.ot_len_scale == LenScale::kBatchMean
                  ? out.ce + cfg.gamma1 * out.avg_src_len * out.ot + cfg.gamma2 * out.at
                  : total_acc;
  return out;
}

NodeId info_nce(Tape& tape, const std::vector<NodeId>& anchors,
                const std::vector<NodeId>& positives, double tau) {
  if (anchors.size() != positives.size())
    throw std::invalid_argument("info_nce: anchor/positive counts differ");
  if (anchors.size() < 2)
    throw std::invalid_argument("info_nce: need at least 2 pairs for in-batch negatives");
  if (tau <= 0.0) throw std::invalid_argument("info_nce: temperature must be positive");

  const std::size_t b = anchors.size();
  const NodeId zero = tape.constant(Tensor::scalar(0.0));
  const NodeId inv_tau = tape.constant(Tensor::scalar(1.0 / tau));
  auto cosine = [&](NodeId a, NodeId c) {
    const NodeId dot = tape.sum(tape.mul(a, c), -1);
    const NodeId norms = tape.mul(tape.vector_norm(a), tape.vector_norm(c));
    const NodeId inv = tape.exp(tape.sub(zero, tape.log(norms)));
    return tape.mul(tape.mul(dot, inv), inv_tau);
  };

  NodeId loss_sum = -1;
  for (std::size_t i = 0; i < b; ++i) {
    NodeId lse_sum = -1;
    NodeId positive_sim = -1;
    for (std::size_t j = 0; j < b; ++j) {
      const NodeId sim = cosine(anchors[i], positives[j]);
      if (j == i) positive_sim = sim;
      const NodeId e = tape.exp(sim);
      lse_sum = lse_sum < 0 ? e : tape.add(lse_sum, e);
    }
    const NodeId loss_i = tape.sub(tape.log(lse_sum), positive_sim);
    loss_sum = loss_sum < 0 ? loss_i : tape.add(loss_sum, loss_i);
  }
  return tape.mul(loss_sum, tape.constant(Tensor::scalar(1.0 / static_cast<double>(b))));
}

double baseline_loss(const ModelParameters& params, const std::vector<ParallelPair>& batch,
                     Objective which, const TrainConfig& cfg, Rng* dropout_rng,
                     Gradients* grads, LossBreakdown* breakdown) {
  if (batch.empty()) throw std::invalid_argument("baseline_loss: empty batch");
  double gamma = 0.0;
  switch (which) {
    case Objective::kSra: gamma = cfg.sra_gamma; break;
    case Objective::kSf: gamma = cfg.sf_gamma; break;
    case Objective::kCl: gamma = cfg.cl_gamma; break;
    default:
      throw std::invalid_argument("baseline_loss: objective is not a contrast baseline");
  }
  if (which == Objective::kCl && batch.size() < 2)
    throw std::invalid_argument("baseline_loss: contrastive objective needs batch >= 2");
  if (cfg.eos_token < 0 || cfg.eos_token >= cfg.model.vocab_size)
    throw std::invalid_argument("baseline_loss: eos_token not configured");

  LossBreakdown out;
  out.avg_src_len = mean_source_content_length(batch);
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  if (which == Objective::kSra || which == Objective::kSf) {
    for (const auto& pair : batch) {
      Tape tape;
      BoundModel bm(tape, params, grads != nullptr, dropout_rng != nullptr, dropout_rng);
      const NodeId hx = bm.encode(pair.source);
      const NodeId lpx = bm.decode_logprobs(hx, pair.target);
      const NodeId ce =
          model::cross_entropy_loss(tape, lpx, gold_tokens(pair.target, cfg.eos_token));
      const NodeId hy = bm.encode(pair.target);
      NodeId reg;
      if (which == Objective::kSra) {
        reg = tape.vector_norm(tape.sub(tape.mean(hx, 0), tape.mean(hy, 0)));
      } else {
        // Match the x-conditioned prediction stream against the stream the
        // decoder produces when the target is generated from itself.
        const NodeId lpy = bm.decode_logprobs(hy, pair.target);
        reg = tape.sum(tape.mul(tape.exp(lpx), tape.sub(lpx, lpy)), -1);
      }
      const NodeId total =
          tape.add(ce, tape.mul(reg, tape.constant(Tensor::scalar(gamma))));
      out.ce += tape.value(ce).item() * inv_b;
      out.baseline_reg += tape.value(reg).item() * inv_b;
      if (grads) accumulate(tape.backward(total), bm, params, inv_b, *grads);
    }
  } else {
    for (const auto& pair : batch) {
      Tape tape;
      BoundModel bm(tape, params, grads != nullptr, dropout_rng != nullptr, dropout_rng);
      const NodeId hx = bm.encode(pair.source);
      const NodeId ce = model::cross_entropy_loss(
          tape, bm.decode_logprobs(hx, pair.target), gold_tokens(pair.target, cfg.eos_token));
      out.ce += tape.value(ce).item() * inv_b;
      if (grads) accumulate(tape.backward(ce), bm, params, inv_b, *grads);
    }
    // In-batch negatives couple the pairs, so the contrastive term runs on one
    // shared tape over mean-pooled encoder states.
    Tape tape;
    BoundModel bm(tape, params, grads != nullptr, dropout_rng != nullptr, dropout_rng);
    std::vector<NodeId> anchors;
    std::vector<NodeId> positives;
    for (const auto& pair : batch) {
      anchors.push_back(tape.mean(bm.encode(pair.source), 0));
      positives.push_back(tape.mean(bm.encode(pair.target), 0));
    }
    const NodeId nce = info_nce(tape, anchors, positives, cfg.cl_tau);
    out.baseline_reg = tape.value(nce).item();
    if (grads) accumulate(tape.backward(nce), bm, params, gamma, *grads);
  }

  out.total = out.ce + gamma * out.baseline_reg;
  if (breakdown) *breakdown = out;
  return out.total;
}

double learning_rate(const TrainConfig& cfg, std::int64_t step) {
  if (step < 1) throw std::invalid_argument("learning_rate: step is 1-indexed");
  const double t = static_cast<double>(step);
  const double w = static_cast<double>(cfg.warmup_steps);
  return cfg.peak_lr * std::min(1.0 / std::sqrt(t), t / (w * std::sqrt(w)));
}

void AdamOptimizer::step(ModelParameters& params, const Gradients& grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& name : params.names()) {
    const auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    Tensor& p = params.at(name);
    if (g.data.size() != p.data.size())
      throw std::invalid_argument("AdamOptimizer: gradient shape mismatch for " + name);
    auto mit = m_.find(name);
    if (mit == m_.end()) {
      Tensor zero = p;
      std::fill(zero.data.begin(), zero.data.end(), 0.0);
      mit = m_.emplace(name, zero).first;
      v_.emplace(name, std::move(zero));
    }
    Tensor& m = mit->second;
    Tensor& v = v_.at(name);
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      m.data[k] = beta1_ * m.data[k] + (1.0 - beta1_) * g.data[k];
      v.data[k] = beta2_ * v.data[k] + (1.0 - beta2_) * g.data[k] * g.data[k];
      const double mhat = m.data[k] / bc1;
      const double vhat = v.data[k] / bc2;
      p.data[k] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

MetricsRecord score_with_decoder(const data::GeneratedData& data, Split split,
                                 const DecodeFn& decode) {
  const auto& reg = data.registry;
  struct DirectionBucket {
    DirectionKind kind = DirectionKind::kSupervised;
    std::vector<const ParallelPair*> pairs;
    std::vector<std::vector<std::int32_t>> outputs;
    double accuracy = 0.0;
    double off_target = 0.0;
  };
  std::map<std::pair<std::int32_t, std::int32_t>, DirectionBucket> buckets;
  for (const auto& pair : data.corpus.pairs) {
    if (pair.split != split) continue;
    auto& bucket = buckets[{pair.source.language, pair.target.language}];
    bucket.kind = pair.kind;
    bucket.pairs.push_back(&pair);
  }

  for (auto& [dir, bucket] : buckets) {
    const std::int32_t tgt = dir.second;
    std::int64_t matched = 0;
    std::int64_t positions = 0;
    for (const ParallelPair* pair : bucket.pairs) {
      auto hyp = decode(pair->source, tgt);
      const auto ref = content_tokens(pair->target);
      const auto common = std::min(hyp.size(), ref.size());
      for (std::size_t k = 0; k < common; ++k) matched += hyp[k] == ref[k] ? 1 : 0;
      positions += static_cast<std::int64_t>(std::max(hyp.size(), ref.size()));
      bucket.outputs.push_back(std::move(hyp));
    }
    bucket.accuracy =
        positions == 0 ? 1.0 : static_cast<double>(matched) / static_cast<double>(positions);
    bucket.off_target = data::off_target_rate(bucket.outputs, tgt, reg);
  }

  // Consistency: translations of the split's shared pool into one target from
  // different sources, compared pairwise and averaged per target.
  std::map<std::int32_t, double> target_consistency;
  {
    std::map<std::int32_t, std::vector<std::pair<std::int32_t, const DirectionBucket*>>>
        by_target;
    for (const auto& [dir, bucket] : buckets)
      by_target[dir.second].emplace_back(dir.first, &bucket);
    for (const auto& [tgt, sources] : by_target) {
      if (sources.size() < 2) continue;
      double acc = 0.0;
      std::int64_t n = 0;
      for (std::size_t a = 0; a < sources.size(); ++a)
        for (std::size_t b = a + 1; b < sources.size(); ++b) {
          acc += data::pairwise_consistency(sources[a].second->outputs,
                                            sources[b].second->outputs);
          ++n;
        }
      target_consistency[tgt] = acc / static_cast<double>(n);
    }
  }

  MetricsRecord rec;
  double zs_acc = 0.0, sup_acc = 0.0, zs_off = 0.0;
  std::int64_t zs_n = 0, sup_n = 0;
  for (const auto& [dir, bucket] : buckets) {
    DirectionMetrics m;
    m.source = dir.first;
    m.target = dir.second;
    m.kind = bucket.kind;
    m.accuracy = bucket.accuracy;
    m.off_target = bucket.off_target;
    const auto it = target_consistency.find(dir.second);
    m.consistency = it == target_consistency.end() ? 0.0 : it->second;
    rec.directions.push_back(m);
    if (bucket.kind == DirectionKind::kZeroShot) {
      zs_acc += bucket.accuracy;
      zs_off += bucket.off_target;
      ++zs_n;
    } else {
      sup_acc += bucket.accuracy;
      ++sup_n;
    }
  }
  if (zs_n > 0) {
    rec.zero_shot_accuracy = zs_acc / static_cast<double>(zs_n);
    rec.off_target_rate = zs_off / static_cast<double>(zs_n);
  }
  if (sup_n > 0) rec.supervised_accuracy = sup_acc / static_cast<double>(sup_n);
  if (!target_consistency.empty()) {
    double acc = 0.0;
    for (const auto& [tgt, v] : target_consistency) acc += v;
    rec.consistency = acc / static_cast<double>(target_consistency.size());
  }
  return rec;
}

MetricsRecord evaluate(const ModelParameters& params, const data::GeneratedData& data,
                       Split split) {
  const auto& reg = data.registry;
  return score_with_decoder(
      data, split, [&](const TaggedSentence& src, std::int32_t target_language) {
        return model::greedy_decode(params, src, reg.tag_token(target_language),
                                    reg.eos_token(), kEvalMaxSteps);
      });
}

TrainResult train(const TrainConfig& cfg, const data::GeneratedData& data) {
  TrainConfig c = cfg;
  c.eos_token = data.registry.eos_token();
  c.validate();
  if (c.model.vocab_size < data.registry.vocab_size())
    throw std::invalid_argument("train: model vocabulary smaller than the corpus needs");

  std::vector<ParallelPair> train_pairs;
  for (const auto& pair : data.corpus.pairs)
    if (pair.split == Split::kTrain) train_pairs.push_back(pair);
  if (train_pairs.empty()) throw std::invalid_argument("train: corpus has no train pairs");

  Rng root(c.seed);
  Rng init_rng = root.fork("init");
  ModelParameters params = ModelParameters::init(c.model, init_rng);
  AdamOptimizer opt(c.adam_beta1, c.adam_beta2, c.adam_eps);

  TrainResult result;
  result.best_params = params;
  LossBreakdown last;
  const auto t0 = std::chrono::steady_clock::now();

  for (std::int64_t step = 1; step <= c.total_steps; ++step) {
    Rng batch_rng = root.fork("batch", static_cast<std::uint64_t>(step));
    std::vector<ParallelPair> batch;
    batch.reserve(static_cast<std::size_t>(c.batch_sentences));
    for (std::int64_t b = 0; b < c.batch_sentences; ++b) {
      const auto idx = static_cast<std::size_t>(
          batch_rng.uniform_int(0, static_cast<std::int64_t>(train_pairs.size()) - 1));
      batch.push_back(train_pairs[idx]);
    }

    Rng dropout_rng = root.fork("dropout", static_cast<std::uint64_t>(step));
    Rng mixup_rng = root.fork("mixup", static_cast<std::uint64_t>(step));
    TrainConfig step_cfg = c;
    if (step <= c.pretrain_steps) step_cfg.objective = Objective::kCeOnly;

    Gradients grads;
    if (is_baseline(step_cfg.objective)) {
      baseline_loss(params, batch, step_cfg.objective, step_cfg, &dropout_rng, &grads,
                    &last);
    } else {
      last = combined_loss(params, batch, step_cfg, &dropout_rng, &mixup_rng, &grads);
    }
    opt.step(params, grads, learning_rate(c, step));

    if (step % c.eval_every == 0 || step == c.total_steps) {
      MetricsRecord rec = evaluate(params, data, Split::kValid);
      rec.step = step;
      rec.loss = last;
      const double metric = c.selection == SelectionRule::kZeroShotAccuracy
                                ? rec.zero_shot_accuracy
                                : rec.supervised_accuracy;
      if (metric > result.best_selection_metric) {
        result.best_selection_metric = metric;
        result.best_step = step;
        result.best_params = params;
      }
      result.metrics.push_back(std::move(rec));
    }
  }

  const auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0);
  result.steps_per_second =
      dt.count() > 0.0 ? static_cast<double>(c.total_steps) / dt.count() : 0.0;
  result.final_params = std::move(params);
  return result;
}

namespace {

nlohmann::json record_json(const MetricsRecord& rec) {
  nlohmann::json dirs = nlohmann::json::array();
  for (const auto& d : rec.directions)
    dirs.push_back({{"source", d.source},
                    {"target", d.target},
                    {"kind", d.kind == DirectionKind::kZeroShot ? "zero_shot" : "supervised"},
                    {"accuracy", d.accuracy},
                    {"off_target", d.off_target},
                    {"consistency", d.consistency}});
  return {{"step", rec.step},
          {"zero_shot_accuracy", rec.zero_shot_accuracy},
          {"supervised_accuracy", rec.supervised_accuracy},
          {"off_target_rate", rec.off_target_rate},
          {"consistency", rec.consistency},
          {"loss",
           {{"ce", rec.loss.ce},
            {"ot", rec.loss.ot},
            {"at", rec.loss.at},
            {"baseline_reg", rec.loss.baseline_reg},
            {"total", rec.loss.total},
            {"avg_src_len", rec.loss.avg_src_len}}},
          {"directions", dirs}};
}

}  // namespace

void write_metrics_jsonl(const std::string& path,
                         const std::vector<MetricsRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_metrics_jsonl: cannot write " + path);
  for (const auto& rec : records) os << record_json(rec).dump() << '\n';
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_metrics_csv: cannot write " + path);
  os << "step,direction,kind,accuracy,off_target_rate,consistency,ce,ot,at,total\n";
  os << std::setprecision(12);
  for (const auto& rec : records)
    for (const auto& d : rec.directions)
      os << rec.step << ',' << d.source << "->" << d.target << ','
         << (d.kind == DirectionKind::kZeroShot ? "zero_shot" : "supervised") << ','
         << d.accuracy << ',' << d.off_target << ',' << d.consistency << ',' << rec.loss.ce
         << ',' << rec.loss.ot << ',' << rec.loss.at << ',' << rec.loss.total << '\n';
}

}  // namespace seqot::train
