#include "seqot/cli.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "seqot/data.hpp"
#include "seqot/model.hpp"
#include "seqot/ot.hpp"
#include "seqot/rng.hpp"
#include "seqot/train.hpp"

namespace seqot::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a(std::uint64_t h, const char* bytes, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;

std::string render_checksum(std::uint64_t h) {
  std::ostringstream os;
  os << "fnv1a64:" << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::uint64_t fold_file(std::uint64_t h, const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is.good()) throw std::runtime_error("cannot read " + path.string());
  char buf[1 << 16];
  while (is.read(buf, sizeof buf) || is.gcount() > 0)
    h = fnv1a(h, buf, static_cast<std::size_t>(is.gcount()));
  return h;
}

// --------------------------------------------------------------------------
// Run manifests.

void write_manifest(const fs::path& dir, const std::string& command, const json& seed,
                    const json& config, const json& inputs) {
  json outputs = json::object();
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().filename() != kManifestFile)
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) outputs[f.filename().string()] = checksum_file(f.string());

  json m = {{"tool", kToolName},     {"version", kToolVersion}, {"command", command},
            {"seed", seed},          {"config", config},        {"inputs", inputs},
            {"outputs", outputs}};
  std::ofstream os(dir / kManifestFile);
  if (!os.good()) throw std::runtime_error("cannot write " + (dir / kManifestFile).string());
  os << m.dump(2) << "\n";
}

fs::path prepare_out_dir(const std::string& out) {
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

json corpus_input(const std::string& corpus_dir) {
  return {{"corpus", corpus_dir}, {"corpus_checksum", checksum_dir(corpus_dir)}};
}

json config_file_input(const std::string& config_file) {
  json j = json::object();
  if (!config_file.empty()) {
    j["config_file"] = config_file;
    j["config_file_checksum"] = checksum_file(config_file);
  }
  return j;
}

// --------------------------------------------------------------------------
// Flat configuration files: `key = value` lines, '#' comments. Keys are the
// long option names without dashes; values already present on the command
// line win. Applied by injecting synthetic flags before the real parse, so
// required options may be satisfied from the file and unknown keys fail the
// same way unknown flags do.

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::pair<std::string, std::string>> parse_flat_config(const std::string& path) {
  std::ifstream is(path);
  if (!is.good()) throw std::runtime_error("cannot read config file " + path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string text = trim(line);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected key = value");
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    if (key.empty() || value.empty())
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected key = value");
    if (key == "config")
      throw std::runtime_error(path + ": config files cannot nest");
    entries.emplace_back(key, value);
  }
  return entries;
}

bool has_option_token(const std::vector<std::string>& args, const std::string& name) {
  const std::string plain = "--" + name;
  const std::string prefixed = plain + "=";
  for (const auto& a : args)
    if (a == plain || a.rfind(prefixed, 0) == 0) return true;
  return false;
}

bool parse_bool_value(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw std::runtime_error("config key " + key + ": expected a boolean, got '" + value + "'");
}

// Option pairs where the config value selects one of two flag spellings.
const std::map<std::string, std::pair<std::string, std::string>> kBoolKeys = {
    {"stop-grad-hy", {"--stop-grad-hy", "--no-stop-grad-hy"}},
    {"ot-include-tag", {"--ot-include-tag", "--ot-exclude-tag"}},
};

std::vector<std::string> inject_config(std::vector<std::string> args) {
  std::string file;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw std::runtime_error("--config needs a file");
      file = args[i + 1];
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      file = args[i].substr(9);
      break;
    }
  }
  if (file.empty()) return args;

  for (const auto& [key, value] : parse_flat_config(file)) {
    const auto flag_pair = kBoolKeys.find(key);
    if (flag_pair != kBoolKeys.end()) {
      const auto& [on, off] = flag_pair->second;
      if (has_option_token(args, on.substr(2)) || has_option_token(args, off.substr(2)))
        continue;
      args.push_back(parse_bool_value(key, value) ? on : off);
      continue;
    }
    if (has_option_token(args, key)) continue;
    args.push_back("--" + key);
    args.push_back(value);
  }
  return args;
}

// --------------------------------------------------------------------------
// gen-data.

struct GenDataOpts {
  std::string config_file;
  std::string out;
  std::uint64_t seed = 0;
  std::int32_t languages = 4;
  std::string pivot = "L0";
  std::int64_t train_per_dir = 2000;
  std::int64_t min_len = 4;
  std::int64_t max_len = 16;
  std::int32_t concept_vocab = 64;
};

std::int32_t parse_language_id(const std::string& text) {
  std::string digits = text;
  if (!digits.empty() && (digits[0] == 'L' || digits[0] == 'l')) digits.erase(0, 1);
  try {
    std::size_t used = 0;
    const int v = std::stoi(digits, &used);
    if (used != digits.size() || v < 0) throw std::invalid_argument("negative");
    return static_cast<std::int32_t>(v);
  } catch (const std::exception&) {
    throw std::runtime_error("bad language id '" + text + "'; use e.g. L0 or 0");
  }
}

int cmd_gen_data(const GenDataOpts& o) {
  const fs::path dir = prepare_out_dir(o.out);
  const std::int32_t pivot = parse_language_id(o.pivot);
  const auto gen = data::generate_corpus(o.seed, o.languages, o.train_per_dir,
                                         {o.min_len, o.max_len}, o.concept_vocab, pivot);
  data::save_corpus(dir.string(), gen);

  const json config = {{"languages", o.languages},   {"pivot", pivot},
                       {"train_per_dir", o.train_per_dir}, {"min_len", o.min_len},
                       {"max_len", o.max_len},       {"concept_vocab", o.concept_vocab}};
  write_manifest(dir, "gen-data", o.seed, config, config_file_input(o.config_file));

  std::size_t train_pairs = 0, eval_pairs = 0;
  for (const auto& p : gen.corpus.pairs)
    (p.split == data::Split::kTrain ? train_pairs : eval_pairs) += 1;
  std::cout << "wrote corpus to " << dir.string() << ": " << train_pairs
            << " training pairs, " << eval_pairs << " evaluation pairs, vocab "
            << gen.registry.vocab_size() << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// train.

struct TrainOpts {
  std::string config_file;
  std::string corpus;
  std::string out;
  std::string objective = "ce+ot+at";
  std::string len_scale = "batch-mean";
  std::string selection = "zero-shot";
  double baseline_gamma = 1.0;
  train::TrainConfig cfg;
};

json train_config_json(const TrainOpts& o, const train::TrainConfig& c) {
  return {{"objective", o.objective},
          {"gamma1", c.gamma1},
          {"gamma2", c.gamma2},
          {"baseline_gamma", o.baseline_gamma},
          {"cl_tau", c.cl_tau},
          {"peak_lr", c.peak_lr},
          {"warmup_steps", c.warmup_steps},
          {"pretrain_steps", c.pretrain_steps},
          {"total_steps", c.total_steps},
          {"batch", c.batch_sentences},
          {"eval_every", c.eval_every},
          {"stop_grad_hy", c.stop_grad_hy},
          {"ot_include_tag", c.ot_include_tag_position},
          {"ot_len_scale", o.len_scale},
          {"selection", o.selection},
          {"mixup_alpha", c.mixup.alpha},
          {"mixup_beta", c.mixup.beta},
          {"d_model", c.model.d_model},
          {"n_heads", c.model.n_heads},
          {"n_layers", c.model.n_layers},
          {"d_ff", c.model.d_ff},
          {"max_len", c.model.max_len},
          {"dropout", c.model.dropout_rate}};
}

int cmd_train(TrainOpts& o) {
  const auto gen = data::load_corpus(o.corpus);
  train::TrainConfig& c = o.cfg;
  c.objective = train::objective_from_name(o.objective);
  c.sra_gamma = c.sf_gamma = c.cl_gamma = o.baseline_gamma;
  c.ot_len_scale = o.len_scale == "per-sentence" ? train::LenScale::kPerSentence
                                                 : train::LenScale::kBatchMean;
  c.selection = o.selection == "supervised" ? train::SelectionRule::kSupervisedAccuracy
                                            : train::SelectionRule::kZeroShotAccuracy;
  c.model.vocab_size = gen.registry.vocab_size();
  c.eos_token = gen.registry.eos_token();

  const fs::path dir = prepare_out_dir(o.out);
  const auto result = train::train(c, gen);

  model::save_checkpoint((dir / "final.ckpt").string(), result.final_params);
  model::save_checkpoint((dir / "best.ckpt").string(), result.best_params);
  train::write_metrics_jsonl((dir / "metrics.jsonl").string(), result.metrics);
  train::write_metrics_csv((dir / "metrics.csv").string(), result.metrics);
  json inputs = corpus_input(o.corpus);
  inputs.update(config_file_input(o.config_file));
  write_manifest(dir, "train", c.seed, train_config_json(o, c), inputs);

  std::cout << "trained " << c.total_steps << " steps (" << std::fixed
            << std::setprecision(2) << result.steps_per_second << " steps/s), best step "
            << result.best_step << " with selection metric " << std::setprecision(4)
            << result.best_selection_metric << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// eval.

struct EvalOpts {
  std::string config_file;
  std::string corpus;
  std::string checkpoint;
  std::string out;
  std::string split = "test";
};

data::Split parse_split(const std::string& s) {
  if (s == "train") return data::Split::kTrain;
  if (s == "valid") return data::Split::kValid;
  return data::Split::kTest;
}

int cmd_eval(const EvalOpts& o) {
  const auto gen = data::load_corpus(o.corpus);
  const auto params = model::load_checkpoint(o.checkpoint);
  const fs::path dir = prepare_out_dir(o.out);

  auto record = train::evaluate(params, gen, parse_split(o.split));
  train::write_metrics_jsonl((dir / "eval.jsonl").string(), {record});

  const json config = {{"split", o.split}};
  json inputs = corpus_input(o.corpus);
  inputs["checkpoint"] = o.checkpoint;
  inputs["checkpoint_checksum"] = checksum_file(o.checkpoint);
  inputs.update(config_file_input(o.config_file));
  write_manifest(dir, "eval", nullptr, config, inputs);

  std::cout << std::fixed << std::setprecision(4) << "zero-shot accuracy "
            << record.zero_shot_accuracy << ", supervised accuracy "
            << record.supervised_accuracy << ", off-target rate " << record.off_target_rate
            << ", consistency " << std::setprecision(2) << record.consistency << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// ot-bench.

struct OtBenchOpts {
  std::string config_file;
  std::string out;
  std::uint64_t seed = 0;
  std::int64_t instances = 50;
  std::int64_t max_points = 6;
  std::int64_t dim = 4;
  double epsilon = 1e-3;
  std::int64_t iters = 5000;
};

struct BenchRow {
  std::string label;
  std::int64_t n = 0, m = 0;
  double exact = 0.0, relaxed = 0.0, sink = 0.0, ip = 0.0;
  std::int64_t exact_us = 0, relaxed_us = 0, sink_us = 0, ip_us = 0;
};

ot::MassDistribution random_distribution(Rng& rng, std::int64_t n, std::int64_t d) {
  Tensor pts = Tensor::zeros({n, d});
  for (double& v : pts.data) v = rng.uniform(-1.0, 1.0);
  std::vector<double> masses(static_cast<std::size_t>(n));
  double sum = 0.0;
  for (double& m : masses) {
    m = rng.uniform(0.1, 1.0);
    sum += m;
  }
  for (double& m : masses) m /= sum;
  return ot::MassDistribution(std::move(pts), std::move(masses));
}

template <typename F>
double timed_us(F&& f, std::int64_t& out_us) {
  const auto t0 = std::chrono::steady_clock::now();
  const double v = f();
  const auto t1 = std::chrono::steady_clock::now();
  out_us = std::chrono::duration_cast<std::chrono::microseconds>(t1 - t0).count();
  return v;
}

BenchRow bench_instance(const std::string& label, const ot::MassDistribution& mu,
                        const ot::MassDistribution& nu, const OtBenchOpts& o) {
  BenchRow row;
  row.label = label;
  row.n = mu.size();
  row.m = nu.size();
  const auto cost = ot::euclidean_cost(mu.points, nu.points);
  row.exact = timed_us([&] { return ot::exact_emd(mu, nu, cost).achieved_cost; },
                       row.exact_us);
  row.relaxed = timed_us([&] { return ot::relaxed_smd(mu, nu, cost); }, row.relaxed_us);
  row.sink = timed_us(
      [&] {
        return ot::sinkhorn(mu, nu, cost, o.epsilon, static_cast<int>(o.iters), 1e-9)
            .achieved_cost;
      },
      row.sink_us);
  row.ip = timed_us([&] { return ot::ipot(mu, nu, cost, 1.0, 1, 2000).achieved_cost; },
                    row.ip_us);
  if (row.relaxed > row.exact + 1e-9)
    throw std::runtime_error("lower bound violated on instance " + label);
  return row;
}

int cmd_ot_bench(const OtBenchOpts& o) {
  const fs::path dir = prepare_out_dir(o.out);
  const Rng root(o.seed);
  std::vector<BenchRow> rows;

  for (std::int64_t i = 0; i < o.instances; ++i) {
    Rng rng = root.fork("instance", static_cast<std::uint64_t>(i));
    const auto n = rng.uniform_int(2, o.max_points);
    const auto m = rng.uniform_int(2, o.max_points);
    const auto mu = random_distribution(rng, n, o.dim);
    const auto nu = random_distribution(rng, m, o.dim);
    rows.push_back(bench_instance(std::to_string(i), mu, nu, o));
  }
  {
    // Transporting a distribution onto itself must cost nothing.
    Rng rng = root.fork("identical");
    const auto mu = random_distribution(rng, o.max_points, o.dim);
    auto row = bench_instance("identical", mu, mu, o);
    if (std::abs(row.exact) > 1e-9 || std::abs(row.relaxed) > 1e-9)
      throw std::runtime_error("identical point sets produced nonzero exact cost");
    rows.push_back(std::move(row));
  }
  {
    // With one target point every plan is the forced plan, so the bound is tight.
    Rng rng = root.fork("single_target");
    const auto mu = random_distribution(rng, o.max_points, o.dim);
    const auto nu = random_distribution(rng, 1, o.dim);
    auto row = bench_instance("single-target", mu, nu, o);
    if (std::abs(row.relaxed - row.exact) > 1e-9)
      throw std::runtime_error("single-target bound is not tight");
    rows.push_back(std::move(row));
  }

  std::ofstream os(dir / "bench.csv");
  if (!os.good()) throw std::runtime_error("cannot write bench.csv");
  os << "instance,n,m,exact_cost,relaxed_cost,sinkhorn_cost,ipot_cost,"
        "exact_us,relaxed_us,sinkhorn_us,ipot_us\n";
  os << std::setprecision(17);
  // Subnormals round-trip poorly through strict CSV consumers; they only
  // arise as numerically-zero transport costs.
  const auto flush = [](double v) {
    return std::abs(v) < std::numeric_limits<double>::min() ? 0.0 : v;
  };
  for (const auto& r : rows)
    os << r.label << ',' << r.n << ',' << r.m << ',' << flush(r.exact) << ','
       << flush(r.relaxed) << ',' << flush(r.sink) << ',' << flush(r.ip) << ','
       << r.exact_us << ',' << r.relaxed_us << ',' << r.sink_us << ',' << r.ip_us << '\n';
  os.close();

  const json config = {{"instances", o.instances}, {"max_points", o.max_points},
                       {"dim", o.dim},             {"epsilon", o.epsilon},
                       {"iters", o.iters}};
  write_manifest(dir, "ot-bench", o.seed, config, config_file_input(o.config_file));
  std::cout << "wrote " << rows.size() << " instances to bench.csv; lower bound held on all\n";
  return 0;
}

// --------------------------------------------------------------------------
// export-reprs.

struct ExportOpts {
  std::string config_file;
  std::string corpus;
  std::string checkpoint;
  std::string out;
  std::string split = "test";
};

int cmd_export_reprs(const ExportOpts& o) {
  const auto gen = data::load_corpus(o.corpus);
  const auto params = model::load_checkpoint(o.checkpoint);
  const fs::path dir = prepare_out_dir(o.out);
  const data::Split split = parse_split(o.split);

  // Distinct sentences in first-appearance order; parallel eval pools then
  // yield each language exactly once per concept sentence.
  std::vector<const data::TaggedSentence*> sentences;
  std::set<std::vector<std::int32_t>> seen;
  for (const auto& p : gen.corpus.pairs) {
    if (p.split != split) continue;
    for (const auto* s : {&p.source, &p.target})
      if (seen.insert(s->tokens).second) sentences.push_back(s);
  }
  if (sentences.empty()) throw std::runtime_error("split has no sentences");

  std::ofstream os(dir / "reprs.csv");
  if (!os.good()) throw std::runtime_error("cannot write reprs.csv");
  os << "language";
  for (std::int64_t j = 0; j < params.config.d_model; ++j) os << ",v" << j;
  os << "\n" << std::setprecision(17);
  for (const auto* s : sentences) {
    Tape tape;
    model::BoundModel bm(tape, params, false, false, nullptr);
    const Tensor pooled = tape.value(tape.mean(bm.encode(*s), 0));
    os << s->language;
    for (double v : pooled.data) os << ',' << v;
    os << '\n';
  }
  os.close();

  const json config = {{"split", o.split}};
  json inputs = corpus_input(o.corpus);
  inputs["checkpoint"] = o.checkpoint;
  inputs["checkpoint_checksum"] = checksum_file(o.checkpoint);
  inputs.update(config_file_input(o.config_file));
  write_manifest(dir, "export-reprs", nullptr, config, inputs);
  std::cout << "wrote " << sentences.size() << " sentence representations of width "
            << params.config.d_model << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// Flag wiring.

void add_gen_data(CLI::App& app, GenDataOpts& o) {
  auto* sub = app.add_subcommand("gen-data", "Generate a cipher-language corpus");
  sub->add_option("--config", o.config_file,
                "Flat key = value file of long option names; flags win");
  sub->add_option("--out", o.out, "Output directory")->required();
  sub->add_option("--seed", o.seed, "Root random seed")->required();
  sub->add_option("--languages", o.languages, "Number of languages (pivot included)")
      ->capture_default_str()
      ->check(CLI::Range(3, 64));
  sub->add_option("--pivot", o.pivot, "Pivot language, e.g. L0")->capture_default_str();
  sub->add_option("--train-per-dir", o.train_per_dir,
                  "Training pairs per supervised direction")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--min-len", o.min_len, "Minimum content length")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--max-len", o.max_len, "Maximum content length")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--concept-vocab", o.concept_vocab, "Concepts per language")
      ->capture_default_str()
      ->check(CLI::Range(2, 100000));
}

void add_train(CLI::App& app, TrainOpts& o) {
  auto* sub = app.add_subcommand("train", "Train a model on a generated corpus");
  sub->add_option("--config", o.config_file,
                "Flat key = value file of long option names; flags win");
  sub->add_option("--corpus", o.corpus, "Corpus directory from gen-data")->required();
  sub->add_option("--out", o.out, "Output directory")->required();
  sub->add_option("--seed", o.cfg.seed, "Root random seed")->required();
  sub->add_option("--objective", o.objective, "Training objective")
      ->capture_default_str()
      ->check(CLI::IsMember({"ce", "ce+ot", "ce+at", "ce+ot+at", "sra", "sf", "cl"}));
  sub->add_option("--gamma1", o.cfg.gamma1, "Transport term weight")->capture_default_str();
  sub->add_option("--gamma2", o.cfg.gamma2, "Agreement term weight")->capture_default_str();
  sub->add_option("--baseline-gamma", o.baseline_gamma, "Weight for sra/sf/cl baselines")
      ->capture_default_str();
  sub->add_option("--cl-tau", o.cfg.cl_tau, "Contrastive temperature")->capture_default_str();
  sub->add_option("--peak-lr", o.cfg.peak_lr, "Learning rate scale")->capture_default_str();
  sub->add_option("--warmup", o.cfg.warmup_steps, "Warmup steps")->capture_default_str();
  sub->add_option("--pretrain", o.cfg.pretrain_steps, "Cross-entropy-only lead-in steps")
      ->capture_default_str();
  sub->add_option("--steps", o.cfg.total_steps, "Total optimizer steps")
      ->capture_default_str();
  sub->add_option("--batch", o.cfg.batch_sentences, "Sentence pairs per step")
      ->capture_default_str();
  sub->add_option("--eval-every", o.cfg.eval_every, "Validation interval")
      ->capture_default_str();
  sub->add_flag("--stop-grad-hy,!--no-stop-grad-hy", o.cfg.stop_grad_hy,
                "Detach target states in the agreement branch")
      ->capture_default_str();
  sub->add_flag("--ot-include-tag,!--ot-exclude-tag", o.cfg.ot_include_tag_position,
                "Transport over the tag row too")
      ->capture_default_str();
  sub->add_option("--len-scale", o.len_scale, "Transport length multiplier")
      ->capture_default_str()
      ->check(CLI::IsMember({"batch-mean", "per-sentence"}));
  sub->add_option("--selection", o.selection, "Checkpoint selection metric")
      ->capture_default_str()
      ->check(CLI::IsMember({"zero-shot", "supervised"}));
  sub->add_option("--mixup-alpha", o.cfg.mixup.alpha, "Beta distribution alpha")
      ->capture_default_str();
  sub->add_option("--mixup-beta", o.cfg.mixup.beta, "Beta distribution beta")
      ->capture_default_str();
  sub->add_option("--d-model", o.cfg.model.d_model, "Model width")->capture_default_str();
  sub->add_option("--n-heads", o.cfg.model.n_heads, "Attention heads")->capture_default_str();
  sub->add_option("--n-layers", o.cfg.model.n_layers, "Encoder and decoder depth")
      ->capture_default_str();
  sub->add_option("--d-ff", o.cfg.model.d_ff, "Feed-forward width")->capture_default_str();
  sub->add_option("--max-len", o.cfg.model.max_len, "Positional table size")
      ->capture_default_str();
  sub->add_option("--dropout", o.cfg.model.dropout_rate, "Dropout rate")
      ->capture_default_str();
}

void add_eval(CLI::App& app, EvalOpts& o) {
  auto* sub = app.add_subcommand("eval", "Score a checkpoint on a corpus split");
  sub->add_option("--config", o.config_file,
                "Flat key = value file of long option names; flags win");
  sub->add_option("--corpus", o.corpus, "Corpus directory")->required();
  sub->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  sub->add_option("--out", o.out, "Output directory")->required();
  sub->add_option("--split", o.split, "Corpus split")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "valid", "test"}));
}

void add_ot_bench(CLI::App& app, OtBenchOpts& o) {
  auto* sub = app.add_subcommand("ot-bench", "Compare transport solvers on random instances");
  sub->add_option("--config", o.config_file,
                "Flat key = value file of long option names; flags win");
  sub->add_option("--out", o.out, "Output directory")->required();
  sub->add_option("--seed", o.seed, "Root random seed")->required();
  sub->add_option("--instances", o.instances, "Random instances")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--max-points", o.max_points, "Maximum points per side")
      ->capture_default_str()
      ->check(CLI::Range(2, 64));
  sub->add_option("--dim", o.dim, "Point dimensionality")
      ->capture_default_str()
      ->check(CLI::Range(1, 64));
  sub->add_option("--epsilon", o.epsilon, "Entropic regularization")->capture_default_str();
  sub->add_option("--iters", o.iters, "Iteration budget")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
}

void add_export_reprs(CLI::App& app, ExportOpts& o) {
  auto* sub = app.add_subcommand("export-reprs", "Export mean-pooled sentence encodings");
  sub->add_option("--config", o.config_file,
                "Flat key = value file of long option names; flags win");
  sub->add_option("--corpus", o.corpus, "Corpus directory")->required();
  sub->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  sub->add_option("--out", o.out, "Output directory")->required();
  sub->add_option("--split", o.split, "Corpus split")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "valid", "test"}));
}

}  // namespace

std::string checksum_file(const std::string& path) {
  return render_checksum(fold_file(kFnvOffset, path));
}

std::string checksum_dir(const std::string& directory) {
  if (!fs::is_directory(directory))
    throw std::runtime_error("not a directory: " + directory);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(directory))
    if (entry.is_regular_file() && entry.path().filename() != kManifestFile)
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = kFnvOffset;
  for (const auto& f : files) {
    const std::string name = f.filename().string();
    h = fnv1a(h, name.c_str(), name.size() + 1);
    h = fold_file(h, f);
    h = fnv1a(h, "", 1);
  }
  return render_checksum(h);
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Zero-shot translation objectives over cipher languages"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  GenDataOpts gen_opts;
  TrainOpts train_opts;
  EvalOpts eval_opts;
  OtBenchOpts bench_opts;
  ExportOpts export_opts;
  add_gen_data(app, gen_opts);
  add_train(app, train_opts);
  add_eval(app, eval_opts);
  add_ot_bench(app, bench_opts);
  add_export_reprs(app, export_opts);

  std::vector<std::string> args(argv, argv + argc);
  try {
    args = inject_config(std::move(args));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::vector<const char*> raw;
  raw.reserve(args.size());
  for (const auto& a : args) raw.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(raw.size()), raw.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand("gen-data")) return cmd_gen_data(gen_opts);
    if (app.got_subcommand("train")) return cmd_train(train_opts);
    if (app.got_subcommand("eval")) return cmd_eval(eval_opts);
    if (app.got_subcommand("ot-bench")) return cmd_ot_bench(bench_opts);
    if (app.got_subcommand("export-reprs")) return cmd_export_reprs(export_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace seqot::cli
