// Hard-mixup pseudo-sentence construction and the symmetric KL agreement loss
// between decoder predictions conditioned on the two encodings of a pair.
#pragma once

#include <cstdint>
#include <vector>

#include "seqot/rng.hpp"
#include "seqot/tensor.hpp"

namespace seqot::agreement {

enum class TagSource { kUniformRandom, kAlwaysX, kAlwaysY };

struct MixupConfig {
  double alpha = 6.0;
  double beta = 3.0;
  TagSource tag_source = TagSource::kUniformRandom;
};

struct MixedSample {
  std::vector<std::int32_t> z;     // length n_prime, content tokens only
  std::vector<std::int8_t> gate;   // g_k = 1 takes x'_k, 0 takes y'_k
  double lambda = 0.0;
  std::int64_t n_prime = 0;
  std::int32_t language_tag = -1;
};

struct TruncatedPair {
  std::vector<std::int32_t> x, y;
  std::int64_t n_prime = 0;
};

// Cuts both content sequences to the shorter length.
TruncatedPair truncate_pair(const std::vector<std::int32_t>& x,
                            const std::vector<std::int32_t>& y);

// One lambda ~ Beta(alpha, beta) per pair, gates i.i.d. Bernoulli(lambda),
// z spliced tokenwise, output tag chosen by the configured rule.
MixedSample sample_mixup(const std::vector<std::int32_t>& x_trunc,
                         const std::vector<std::int32_t>& y_trunc, std::int32_t tag_x,
                         std::int32_t tag_y, const MixupConfig& cfg, Rng& rng);

constexpr double kProbFloor = 1e-9;
constexpr double kRowSumTol = 1e-6;

// Symmetric KL between per-step predictive distributions (rows of px and py),
// averaged over steps: (1/(2n')) sum_k [KL(px_k||py_k) + KL(py_k||px_k)].
// Probabilities are floored at kProbFloor so disjoint support stays finite.
// Rows must sum to 1 within kRowSumTol.
NodeId agreement_kl(Tape& tape, NodeId px, NodeId py);

}  // namespace seqot::agreement
