#include "seqot/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace seqot::data {

namespace {

using nlohmann::json;

// Zipf(s) over concepts 0..V-1: weight of concept c is (c+1)^-s. Skewed
// frequencies give sentences a few dominant tokens, so norm-based masses have
// real structure to pick up.
class ZipfSampler {
 public:
  ZipfSampler(std::int32_t vocab, double s) : cdf_(static_cast<std::size_t>(vocab)) {
    double acc = 0.0;
    for (std::int32_t c = 0; c < vocab; ++c) {
      acc += std::pow(static_cast<double>(c) + 1.0, -s);
      cdf_[static_cast<std::size_t>(c)] = acc;
    }
    for (double& v : cdf_) v /= acc;
  }

  std::int32_t sample(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const auto idx = it == cdf_.end() ? cdf_.size() - 1
                                      : static_cast<std::size_t>(it - cdf_.begin());
    return static_cast<std::int32_t>(idx);
  }

 private:
  std::vector<double> cdf_;
};

}  // namespace

LanguageRegistry LanguageRegistry::create(Rng& rng, std::int32_t n_languages,
                                          std::int32_t concept_vocab_size) {
  if (n_languages < 1) throw std::invalid_argument("LanguageRegistry: need a language");
  if (concept_vocab_size < 1)
    throw std::invalid_argument("LanguageRegistry: empty concept vocabulary");
  std::vector<std::vector<std::int32_t>> perm(static_cast<std::size_t>(n_languages));
  for (auto& p : perm) {
    p.resize(static_cast<std::size_t>(concept_vocab_size));
    for (std::int32_t c = 0; c < concept_vocab_size; ++c)
      p[static_cast<std::size_t>(c)] = c;
    for (std::int32_t i = concept_vocab_size - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(0, i));
      std::swap(p[static_cast<std::size_t>(i)], p[j]);
    }
  }
  return from_permutations(std::move(perm));
}

LanguageRegistry LanguageRegistry::from_permutations(
    std::vector<std::vector<std::int32_t>> perm) {
  if (perm.empty()) throw std::invalid_argument("LanguageRegistry: need a language");
  LanguageRegistry reg;
  reg.n_languages_ = static_cast<std::int32_t>(perm.size());
  reg.concept_vocab_size_ = static_cast<std::int32_t>(perm.front().size());
  if (reg.concept_vocab_size_ < 1)
    throw std::invalid_argument("LanguageRegistry: empty concept vocabulary");
  for (const auto& p : perm) {
    if (static_cast<std::int32_t>(p.size()) != reg.concept_vocab_size_)
      throw std::invalid_argument("LanguageRegistry: ragged permutation table");
    std::vector<char> seen(p.size(), 0);
    for (std::int32_t v : p) {
      if (v < 0 || v >= reg.concept_vocab_size_ || seen[static_cast<std::size_t>(v)])
        throw std::invalid_argument("LanguageRegistry: table row is not a permutation");
      seen[static_cast<std::size_t>(v)] = 1;
    }
  }
  reg.perm_ = std::move(perm);
  reg.rebuild_inverse();
  return reg;
}

void LanguageRegistry::rebuild_inverse() {
  inverse_.assign(perm_.size(),
                  std::vector<std::int32_t>(static_cast<std::size_t>(concept_vocab_size_)));
  for (std::size_t l = 0; l < perm_.size(); ++l)
    for (std::int32_t c = 0; c < concept_vocab_size_; ++c)
      inverse_[l][static_cast<std::size_t>(perm_[l][static_cast<std::size_t>(c)])] = c;
}

void LanguageRegistry::check_language(std::int32_t language) const {
  if (language < 0 || language >= n_languages_)
    throw std::invalid_argument("LanguageRegistry: unknown language id");
}

std::int32_t LanguageRegistry::tag_token(std::int32_t language) const {
  check_language(language);
  return language;
}

std::int32_t LanguageRegistry::range_begin(std::int32_t language) const {
  check_language(language);
  return n_languages_ + 1 + language * concept_vocab_size_;
}

std::int32_t LanguageRegistry::range_end(std::int32_t language) const {
  return range_begin(language) + concept_vocab_size_;
}

bool LanguageRegistry::in_range(std::int32_t language, std::int32_t token) const {
  return token >= range_begin(language) && token < range_end(language);
}

std::int32_t LanguageRegistry::encode_concept(std::int32_t language,
                                              std::int32_t concept_id) const {
  check_language(language);
  if (concept_id < 0 || concept_id >= concept_vocab_size_)
    throw std::invalid_argument("LanguageRegistry: concept out of vocabulary");
  return range_begin(language) +
         perm_[static_cast<std::size_t>(language)][static_cast<std::size_t>(concept_id)];
}

std::int32_t LanguageRegistry::decode_token(std::int32_t language,
                                            std::int32_t token) const {
  if (!in_range(language, token))
    throw std::invalid_argument("LanguageRegistry: token outside language range");
  return inverse_[static_cast<std::size_t>(language)]
                 [static_cast<std::size_t>(token - range_begin(language))];
}

std::vector<std::int32_t> LanguageRegistry::render(
    std::int32_t language, const std::vector<std::int32_t>& concepts) const {
  std::vector<std::int32_t> out;
  out.reserve(concepts.size());
  for (std::int32_t c : concepts) out.push_back(encode_concept(language, c));
  return out;
}

std::vector<std::int32_t> LanguageRegistry::concepts_of(
    std::int32_t language, const std::vector<std::int32_t>& tokens) const {
  std::vector<std::int32_t> out;
  out.reserve(tokens.size());
  for (std::int32_t t : tokens) out.push_back(decode_token(language, t));
  return out;
}

GeneratedData generate_corpus(std::uint64_t seed, std::int32_t n_languages,
                              std::int64_t n_train_per_direction,
                              std::pair<std::int32_t, std::int32_t> len_range,
                              std::int32_t concept_vocab_size, std::int32_t pivot) {
  if (n_languages < 3)
    throw std::invalid_argument(
        "generate_corpus: need at least 3 languages for a zero-shot pair");
  if (pivot < 0 || pivot >= n_languages)
    throw std::invalid_argument("generate_corpus: pivot is not a language id");
  if (len_range.first < 1 || len_range.second < len_range.first)
    throw std::invalid_argument("generate_corpus: bad length range");
  if (n_train_per_direction < 1)
    throw std::invalid_argument("generate_corpus: need training pairs");
  if (concept_vocab_size < 2)
    throw std::invalid_argument("generate_corpus: concept vocabulary too small");

  Rng root(seed);
  Rng registry_rng = root.fork("registry");
  LanguageRegistry registry =
      LanguageRegistry::create(registry_rng, n_languages, concept_vocab_size);
  const ZipfSampler zipf(concept_vocab_size, 1.2);

  std::vector<std::pair<std::int32_t, std::int32_t>> supervised;
  std::vector<std::pair<std::int32_t, std::int32_t>> zero_shot;
  for (std::int32_t l = 0; l < n_languages; ++l) {
    if (l == pivot) continue;
    supervised.emplace_back(pivot, l);
    supervised.emplace_back(l, pivot);
  }
  for (std::int32_t a = 0; a < n_languages; ++a)
    for (std::int32_t b = 0; b < n_languages; ++b)
      if (a != b && a != pivot && b != pivot) zero_shot.emplace_back(a, b);

  ParallelCorpus corpus;
  auto draw_concepts = [&](Rng& rng) {
    const auto len = rng.uniform_int(len_range.first, len_range.second);
    std::vector<std::int32_t> concepts(static_cast<std::size_t>(len));
    for (auto& c : concepts) c = zipf.sample(rng);
    return concepts;
  };
  auto emit = [&](std::int32_t src, std::int32_t tgt,
                  const std::vector<std::int32_t>& concepts, Split split,
                  DirectionKind kind) {
    TaggedSentence s{src, {registry.tag_token(src)}};
    TaggedSentence t{tgt, {registry.tag_token(tgt)}};
    for (std::int32_t tok : registry.render(src, concepts)) s.tokens.push_back(tok);
    for (std::int32_t tok : registry.render(tgt, concepts)) t.tokens.push_back(tok);
    corpus.pairs.push_back({std::move(s), std::move(t), split, kind});
  };

  for (std::size_t d = 0; d < supervised.size(); ++d) {
    Rng dir_rng = root.fork("train", static_cast<std::uint64_t>(d));
    for (std::int64_t i = 0; i < n_train_per_direction; ++i) {
      Rng sentence_rng = dir_rng.fork("sentence", static_cast<std::uint64_t>(i));
      emit(supervised[d].first, supervised[d].second, draw_concepts(sentence_rng),
           Split::kTrain, DirectionKind::kSupervised);
    }
  }

  // One concept pool per eval split keeps all directions index-aligned, which
  // the pairwise consistency metric relies on.
  const std::int64_t n_eval =
      std::max<std::int64_t>(8, std::min<std::int64_t>(128, n_train_per_direction / 10));
  for (Split split : {Split::kValid, Split::kTest}) {
    Rng pool_rng = root.fork(split == Split::kValid ? "valid" : "test");
    std::vector<std::vector<std::int32_t>> pool;
    pool.reserve(static_cast<std::size_t>(n_eval));
    for (std::int64_t i = 0; i < n_eval; ++i) {
      Rng sentence_rng = pool_rng.fork("sentence", static_cast<std::uint64_t>(i));
      pool.push_back(draw_concepts(sentence_rng));
    }
    for (const auto& [a, b] : supervised)
      for (const auto& concepts : pool)
        emit(a, b, concepts, split, DirectionKind::kSupervised);
    for (const auto& [a, b] : zero_shot)
      for (const auto& concepts : pool)
        emit(a, b, concepts, split, DirectionKind::kZeroShot);
  }
  return {std::move(registry), std::move(corpus)};
}

double off_target_rate(const std::vector<std::vector<std::int32_t>>& outputs,
                       std::int32_t intended, const LanguageRegistry& registry) {
  if (outputs.empty()) throw std::invalid_argument("off_target_rate: no outputs");
  std::int64_t off = 0;
  for (const auto& seq : outputs) {
    std::int64_t inside = 0;
    for (std::int32_t tok : seq) inside += registry.in_range(intended, tok) ? 1 : 0;
    // On-target needs a strict majority inside the range; empty outputs and
    // exact ties fail that and count off-target.
    const auto outside = static_cast<std::int64_t>(seq.size()) - inside;
    if (inside <= outside) ++off;
  }
  return static_cast<double>(off) / static_cast<double>(outputs.size());
}

namespace {

double corpus_bleu(const std::vector<std::vector<std::int32_t>>& hyp,
                   const std::vector<std::vector<std::int32_t>>& ref) {
  std::int64_t hyp_len = 0;
  std::int64_t ref_len = 0;
  for (const auto& h : hyp) hyp_len += static_cast<std::int64_t>(h.size());
  for (const auto& r : ref) ref_len += static_cast<std::int64_t>(r.size());
  if (hyp_len == 0) return ref_len == 0 ? 100.0 : 0.0;

  double log_precision_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    std::int64_t match = 0;
    std::int64_t total = 0;
    for (std::size_t i = 0; i < hyp.size(); ++i) {
      const auto& h = hyp[i];
      const auto& r = ref[i];
      if (static_cast<int>(h.size()) >= n)
        total += static_cast<std::int64_t>(h.size()) - n + 1;
      std::map<std::vector<std::int32_t>, std::int64_t> ref_counts;
      for (std::size_t k = 0; k + static_cast<std::size_t>(n) <= r.size(); ++k)
        ++ref_counts[{r.begin() + static_cast<std::ptrdiff_t>(k),
                      r.begin() + static_cast<std::ptrdiff_t>(k) + n}];
      std::map<std::vector<std::int32_t>, std::int64_t> hyp_counts;
      for (std::size_t k = 0; k + static_cast<std::size_t>(n) <= h.size(); ++k)
        ++hyp_counts[{h.begin() + static_cast<std::ptrdiff_t>(k),
                      h.begin() + static_cast<std::ptrdiff_t>(k) + n}];
      for (const auto& [gram, count] : hyp_counts) {
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) match += std::min(count, it->second);
      }
    }
    log_precision_sum +=
        0.25 * std::log(static_cast<double>(match + 1) / static_cast<double>(total + 1));
  }
  const double brevity =
      hyp_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * brevity * std::exp(log_precision_sum);
}

}  // namespace

double pairwise_consistency(const std::vector<std::vector<std::int32_t>>& a,
                            const std::vector<std::vector<std::int32_t>>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("pairwise_consistency: list lengths differ");
  return 0.5 * (corpus_bleu(a, b) + corpus_bleu(b, a));
}

namespace {

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    default: return "test";
  }
}

Split split_from(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "valid") return Split::kValid;
  if (s == "test") return Split::kTest;
  throw std::runtime_error("load_corpus: unknown split '" + s + "'");
}

std::string sentence_line(const TaggedSentence& s) {
  std::ostringstream os;
  os << s.language << '\t';
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    if (i) os << ' ';
    os << s.tokens[i];
  }
  return os.str();
}

TaggedSentence parse_sentence(const std::string& line) {
  const auto tab = line.find('\t');
  if (tab == std::string::npos)
    throw std::runtime_error("load_corpus: sentence line has no tab");
  TaggedSentence out;
  out.language = std::stoi(line.substr(0, tab));
  std::istringstream is(line.substr(tab + 1));
  std::int32_t tok = 0;
  while (is >> tok) out.tokens.push_back(tok);
  return out;
}

}  // namespace

void save_corpus(const std::string& directory, const GeneratedData& data) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);

  struct Group {
    Split split;
    DirectionKind kind;
    std::int32_t source;
    std::int32_t target;
    std::vector<std::size_t> pair_indices;
  };
  std::vector<Group> groups;
  std::map<std::tuple<std::int8_t, std::int8_t, std::int32_t, std::int32_t>, std::size_t>
      index;
  for (std::size_t i = 0; i < data.corpus.pairs.size(); ++i) {
    const auto& pair = data.corpus.pairs[i];
    const auto key = std::make_tuple(static_cast<std::int8_t>(pair.split),
                                     static_cast<std::int8_t>(pair.kind),
                                     pair.source.language, pair.target.language);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, groups.size()).first;
      groups.push_back({pair.split, pair.kind, pair.source.language,
                        pair.target.language, {}});
    }
    groups[it->second].pair_indices.push_back(i);
  }

  json files = json::array();
  for (const auto& group : groups) {
    std::ostringstream name;
    name << split_name(group.split) << '_'
         << (group.kind == DirectionKind::kSupervised ? 's' : 'z') << '_'
         << group.source << "to" << group.target << ".tsv";
    const fs::path path = fs::path(directory) / name.str();
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_corpus: cannot write " + path.string());
    for (std::size_t i : group.pair_indices) {
      os << sentence_line(data.corpus.pairs[i].source) << '\n'
         << sentence_line(data.corpus.pairs[i].target) << '\n';
    }
    files.push_back({{"file", name.str()},
                     {"split", split_name(group.split)},
                     {"kind", group.kind == DirectionKind::kSupervised ? "supervised"
                                                                       : "zero_shot"},
                     {"source", group.source},
                     {"target", group.target},
                     {"pairs", group.pair_indices.size()}});
  }

  json manifest = {{"n_languages", data.registry.n_languages()},
                   {"concept_vocab_size", data.registry.concept_vocab_size()},
                   {"permutations", data.registry.permutations()},
                   {"files", files}};
  std::ofstream os(fs::path(directory) / "manifest.json");
  if (!os) throw std::runtime_error("save_corpus: cannot write manifest");
  os << manifest.dump(2) << '\n';
}

GeneratedData load_corpus(const std::string& directory) {
  namespace fs = std::filesystem;
  std::ifstream ms(fs::path(directory) / "manifest.json");
  if (!ms) throw std::runtime_error("load_corpus: missing manifest in " + directory);
  json manifest;
  ms >> manifest;

  GeneratedData out;
  out.registry = LanguageRegistry::from_permutations(
      manifest.at("permutations").get<std::vector<std::vector<std::int32_t>>>());
  if (manifest.at("n_languages").get<std::int32_t>() != out.registry.n_languages() ||
      manifest.at("concept_vocab_size").get<std::int32_t>() !=
          out.registry.concept_vocab_size())
    throw std::runtime_error("load_corpus: manifest disagrees with its own tables");

  for (const auto& entry : manifest.at("files")) {
    const Split split = split_from(entry.at("split").get<std::string>());
    const std::string kind_name = entry.at("kind").get<std::string>();
    if (kind_name != "supervised" && kind_name != "zero_shot")
      throw std::runtime_error("load_corpus: unknown direction kind '" + kind_name + "'");
    const DirectionKind kind = kind_name == "supervised" ? DirectionKind::kSupervised
                                                         : DirectionKind::kZeroShot;
    const auto n_pairs = entry.at("pairs").get<std::size_t>();
    const fs::path path = fs::path(directory) / entry.at("file").get<std::string>();
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_corpus: missing file " + path.string());
    std::string src_line;
    std::string tgt_line;
    for (std::size_t i = 0; i < n_pairs; ++i) {
      if (!std::getline(is, src_line) || !std::getline(is, tgt_line))
        throw std::runtime_error("load_corpus: truncated file " + path.string());
      out.corpus.pairs.push_back(
          {parse_sentence(src_line), parse_sentence(tgt_line), split, kind});
    }
  }
  return out;
}

}  // namespace seqot::data
