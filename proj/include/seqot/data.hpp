#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "seqot/model.hpp"
#include "seqot/rng.hpp"

namespace seqot::data {

using model::TaggedSentence;

// Shared vocabulary layout: tokens [0, M) are language tags, token M is EOS,
// and language l owns the content range [M+1 + l*Vc, M+1 + (l+1)*Vc). Ranges
// are pairwise disjoint by construction, so language membership of any token
// is decidable exactly.
class LanguageRegistry {
 public:
  static LanguageRegistry create(Rng& rng, std::int32_t n_languages,
                                 std::int32_t concept_vocab_size);

  std::int32_t n_languages() const { return n_languages_; }
  std::int32_t concept_vocab_size() const { return concept_vocab_size_; }
  std::int32_t vocab_size() const {
    return n_languages_ + 1 + n_languages_ * concept_vocab_size_;
  }
  std::int32_t tag_token(std::int32_t language) const;
  std::int32_t eos_token() const { return n_languages_; }
  std::int32_t range_begin(std::int32_t language) const;
  std::int32_t range_end(std::int32_t language) const;
  bool in_range(std::int32_t language, std::int32_t token) const;

  // Bijection between concepts and one language's content tokens.
  std::int32_t encode_concept(std::int32_t language, std::int32_t concept_id) const;
  std::int32_t decode_token(std::int32_t language, std::int32_t token) const;
  std::vector<std::int32_t> render(std::int32_t language,
                                   const std::vector<std::int32_t>& concepts) const;
  std::vector<std::int32_t> concepts_of(std::int32_t language,
                                        const std::vector<std::int32_t>& tokens) const;

  // Serialization hooks for the corpus manifest.
  const std::vector<std::vector<std::int32_t>>& permutations() const { return perm_; }
  static LanguageRegistry from_permutations(std::vector<std::vector<std::int32_t>> perm);

  bool operator==(const LanguageRegistry&) const = default;

  LanguageRegistry() = default;  // empty registry; populate via a factory

 private:
  void check_language(std::int32_t language) const;
  void rebuild_inverse();

  std::int32_t n_languages_ = 0;
  std::int32_t concept_vocab_size_ = 0;
  std::vector<std::vector<std::int32_t>> perm_;     // concept -> range offset
  std::vector<std::vector<std::int32_t>> inverse_;  // range offset -> concept
};

enum class Split : std::int8_t { kTrain = 0, kValid = 1, kTest = 2 };
enum class DirectionKind : std::int8_t { kSupervised = 0, kZeroShot = 1 };

struct ParallelPair {
  TaggedSentence source;
  TaggedSentence target;
  Split split = Split::kTrain;
  DirectionKind kind = DirectionKind::kSupervised;

  bool operator==(const ParallelPair&) const = default;
};

struct ParallelCorpus {
  std::vector<ParallelPair> pairs;

  bool operator==(const ParallelCorpus&) const = default;
};

struct GeneratedData {
  LanguageRegistry registry;
  ParallelCorpus corpus;
};

// Star-shaped supervised setup around a pivot language: train pairs cover
// pivot<->l for every other language l, while every non-pivot ordered pair is
// held out as a zero-shot direction appearing only in valid/test. Eval splits
// share one concept pool per split, so translations of the same underlying
// sentence into or out of different languages stay index-aligned.
GeneratedData generate_corpus(std::uint64_t seed, std::int32_t n_languages,
                              std::int64_t n_train_per_direction,
                              std::pair<std::int32_t, std::int32_t> len_range,
                              std::int32_t concept_vocab_size, std::int32_t pivot);

// Fraction of output sequences whose tokens do not land majority-inside the
// intended language's content range. Ties and empty outputs count off-target.
double off_target_rate(const std::vector<std::vector<std::int32_t>>& outputs,
                       std::int32_t intended, const LanguageRegistry& registry);

// Corpus BLEU-4 with add-one smoothing on n-gram precisions, computed with
// each list taking the reference role once and averaged, scaled to [0, 100].
double pairwise_consistency(const std::vector<std::vector<std::int32_t>>& a,
                            const std::vector<std::vector<std::int32_t>>& b);

// One sentence per line: "lang_id\tspace-separated token ids". Pairs occupy
// consecutive source/target lines; a JSON manifest records splits, direction
// kinds, and the registry permutations.
void save_corpus(const std::string& directory, const GeneratedData& data);
GeneratedData load_corpus(const std::string& directory);

}  // namespace seqot::data
