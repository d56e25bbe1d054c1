// fastweights: command-line entry point.
//
//   train      train a model from a preset and/or key=value config
//   eval       perplexity of a checkpoint on a corpus split
//   generate   sample text from a checkpoint
//   convert    swap a softmax checkpoint's attention for an update rule
//   bench      per-token generation latency and state size vs. length
//   gradcheck  analytic vs. finite-difference gradients of the update rules
//   ablate     run the rule x {baseline, norm-off, phi-off} grid
//
// Exit codes: 0 success, 1 runtime error, 2 bad command line.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "fw/bench.hpp"
#include "fw/checkpoint.hpp"
#include "fw/config_io.hpp"
#include "fw/generation.hpp"
#include "fw/gradients.hpp"
#include "fw/presets.hpp"
#include "fw/train.hpp"

namespace {

using namespace fw;

struct Globals {
  std::uint64_t seed = 0;
  int threads = 0;
  bool verbose = false;
};

struct CorpusOptions {
  std::string path = default_corpus_path();
  std::vector<double> fractions{0.9, 0.05, 0.05};

  void add(CLI::App* cmd) {
    cmd->add_option("--corpus", path, "Text file; every byte is a token")->capture_default_str();
    cmd->add_option("--fractions", fractions, "train,valid,test fractions")
        ->delimiter(',')
        ->expected(3)
        ->capture_default_str();
  }

  CorpusSplits load(std::uint64_t seed) const {
    return load_corpus(path, {fractions[0], fractions[1], fractions[2]}, seed);
  }
};

// Settings from a key=value file and repeated --set key=value pairs, applied
// in that order on top of a preset.
struct ConfigOptions {
  std::string preset;
  std::string file;
  std::vector<std::string> sets;

  void add(CLI::App* cmd, bool with_preset) {
    if (with_preset) cmd->add_option("--preset", preset, "Named experiment preset");
    cmd->add_option("--config", file, "key=value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--set", sets, "Override one key, e.g. --set steps=500");
  }

  KeyValues pairs() const {
    KeyValues kv = file.empty() ? KeyValues{} : read_key_values(file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
      kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    return kv;
  }
};

// Applies model and training keys; throws on anything else.
void apply_pairs(const KeyValues& kv, ModelConfig& model, TrainConfig& train, bool model_keys_allowed) {
  for (const auto& [key, value] : kv) {
    if (key == "preset") continue;
    if (apply_train_key(train, key, value)) continue;
    ModelConfig probe = model;
    if (apply_model_key(probe, key, value)) {
      if (!model_keys_allowed)
        throw ConfigError("model key '" + key + "' cannot be combined with --init");
      model = probe;
      continue;
    }
    throw ConfigError("unknown configuration key '" + key + "'");
  }
  finalize_model_config(model);
}

ExperimentSpec base_spec(const ConfigOptions& opts, const KeyValues& kv) {
  std::string name = opts.preset;
  if (name.empty() && kv.count("preset")) name = kv.at("preset");
  if (!name.empty()) return resolve_preset(name);
  ExperimentSpec spec;
  spec.name = "custom";
  spec.model = desk_model_config();
  return spec;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

// ---- train ----------------------------------------------------------------

struct TrainCmd {
  ConfigOptions config;
  CorpusOptions corpus;
  std::string init, out, report;
  bool timing = false;

  int run(const Globals& g) const {
    const KeyValues kv = config.pairs();
    ExperimentSpec spec = base_spec(config, kv);
    if (!spec.applicable) throw ConfigError("preset " + spec.name + " is not applicable (N/A cell)");
    Model<float> model;
    apply_pairs(kv, spec.model, spec.train, init.empty());
    spec.train.seed = g.seed;
    if (init.empty()) {
      spec.model.validate();
      model = build_model<float>(spec.model, g.seed);
    } else {
      model = load_checkpoint(init);
    }
    const CorpusSplits data = corpus.load(g.seed);
    if (g.verbose) std::cerr << "model: " << model.config.describe() << " (" << model.parameter_count() << " params)\n";
    const TrainReport r = train(model, data, spec.train);
    if (report.empty()) {
      r.write_jsonl(std::cout, timing);
    } else {
      auto f = open_out(report);
      r.write_jsonl(f, timing);
    }
    if (r.diverged)
      std::cerr << "diverged at step " << *r.diverged_step << ": " << r.divergence_reason << '\n';
    else
      std::cerr << "best valid ppl " << r.best_valid_ppl << '\n';
    if (!out.empty()) save_checkpoint(model, out);
    return 0;
  }
};

// ---- eval -----------------------------------------------------------------

struct EvalCmd {
  std::string checkpoint, split = "test";
  CorpusOptions corpus;
  std::size_t context = 0, window = 0, max_tokens = 0;

  int run(const Globals& g) const {
    const Model<float> model = load_checkpoint(checkpoint);
    const CorpusSplits data = corpus.load(g.seed);
    const std::vector<int>* tokens = split == "train" ? &data.train : split == "valid" ? &data.valid : &data.test;
    std::span<const int> span(*tokens);
    if (max_tokens > 0 && max_tokens < span.size()) span = span.first(max_tokens);
    const double loss = evaluate_loss(model, span, context, window);
    nlohmann::ordered_json j;
    j["split"] = split;
    j["context"] = context;
    j["tokens"] = span.size();
    j["loss"] = loss;
    j["ppl"] = std::exp(loss);
    std::cout << j.dump() << '\n';
    return 0;
  }
};

// ---- generate -------------------------------------------------------------

struct GenerateCmd {
  std::string checkpoint, prompt = "The ";
  std::size_t tokens = 64;
  double temperature = 0.0;

  int run(const Globals& g) const {
    const Model<float> model = load_checkpoint(checkpoint);
    Sampling s;
    s.seed = g.seed;
    if (temperature > 0) {
      s.mode = Sampling::Mode::temperature;
      s.temperature = temperature;
    }
    const auto ids = tokenize(prompt);
    const auto result = generate(model, std::span<const int>(ids), tokens, s);
    std::cout << prompt << detokenize(result.tokens) << '\n';
    return 0;
  }
};

// ---- convert --------------------------------------------------------------

struct ConvertCmd {
  std::string checkpoint, out, rule, map = "linear";
  bool norm = false, sum_norm = false;
  std::size_t m = 0;

  int run(const Globals& g) const {
    const Model<float> model = load_checkpoint(checkpoint);
    RuleConfig target;
    target.rule = parse_rule(rule);
    target.feature_map = parse_feature_map(map);
    target.attention_norm = norm;
    target.sum_norm = sum_norm;
    target.d = model.config.head_dim();
    target.m = preserves_dim(target.feature_map) ? target.d : (m == 0 ? target.d : m);
    if (preserves_dim(target.feature_map) && m != 0 && m != target.d)
      throw ConfigError("feature map " + map + " keeps m = d = " + std::to_string(target.d));
    const auto converted = convert_mixer(model, target, g.seed);
    save_checkpoint(converted, out);
    std::cerr << "converted to " << target.describe() << " (" << converted.parameter_count() << " params)\n";
    return 0;
  }
};

// ---- bench ----------------------------------------------------------------

struct BenchCmd {
  std::vector<std::string> mixers{"decay", "delta", "softmax"};
  std::vector<std::size_t> lengths{256, 512, 1024, 2048, 4096};
  std::size_t repeats = 7, warmup = 2;
  std::string out;
  BenchShape shape;

  int run(const Globals& g) const {
    for (const auto& m : mixers) bench_model_config(m, shape, 1);  // reject unknown mixers early
    const auto records = bench_generation(default_bench_factory(shape, g.seed), mixers, lengths,
                                          repeats, warmup, g.seed);
    emit_csv(records, out, shape);
    write_csv(std::cout, records);
    return 0;
  }
};

// ---- gradcheck ------------------------------------------------------------

struct GradcheckCmd {
  std::string rule = "all", precision = "double";
  std::size_t seeds = 5, length = 8, d = 4, m = 3;
  std::optional<double> tol;

  int run(const Globals& g) const {
    const bool single = precision == "single";
    const double limit = tol.value_or(single ? 5e-2 : 1e-5);
    std::optional<RuleKind> only;
    if (rule != "all") only = parse_rule(rule);
    double worst = 0.0;
    std::size_t checked = 0;
    for (const auto& c : legal_rule_configs(d, m)) {
      if (only && c.rule != *only) continue;
      double config_worst = 0.0;
      for (std::size_t s = 0; s < seeds; ++s) {
        const auto r = single ? gradcheck_rule_single(c, g.seed + s, length)
                              : gradcheck_rule(c, g.seed + s, length);
        config_worst = std::max(config_worst, r.max_rel_err);
      }
      ++checked;
      worst = std::max(worst, config_worst);
      std::cout << c.describe() << "  max_rel_err " << config_worst << '\n';
    }
    std::cout << "configs " << checked << "  seeds " << seeds << "  precision " << precision << '\n';
    std::cout << "max_rel_err " << worst << '\n';
    return worst <= limit ? 0 : 1;
  }
};

// ---- ablate ---------------------------------------------------------------

struct AblateCmd {
  ConfigOptions config;
  CorpusOptions corpus;
  std::vector<std::string> presets;
  std::string csv, md;

  int run(const Globals& g) const {
    std::vector<std::string> names = presets;
    if (names.empty()) {
      names = table1_preset_names();
      names.push_back("add-norm-phi-off");
    }
    const KeyValues kv = config.pairs();
    const CorpusSplits data = corpus.load(g.seed);
    auto adjust = [&](ExperimentSpec& spec) {
      apply_pairs(kv, spec.model, spec.train, true);
      if (spec.applicable) spec.model.validate();
    };
    auto progress = [&](const AblationOutcome& o) {
      std::cerr << o.preset << ": " << o.status;
      if (o.status == "ppl") std::cerr << ' ' << o.valid_ppl;
      if (o.diverged_step) std::cerr << " at step " << *o.diverged_step;
      std::cerr << '\n';
    };
    const auto outcomes = run_ablation_grid(data, names, g.seed, adjust, progress);
    if (!csv.empty()) {
      auto f = open_out(csv);
      write_ablation_csv(f, outcomes);
    }
    if (!md.empty()) {
      auto f = open_out(md);
      write_ablation_markdown(f, outcomes);
    }
    write_ablation_markdown(std::cout, outcomes);
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fast-weight update rules for causal language models"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every source of randomness")->capture_default_str();
  app.add_option("--threads", g.threads, "OpenMP threads (0 = runtime default)")->capture_default_str();
  app.add_flag("-v,--verbose", g.verbose, "Extra progress on stderr");

  TrainCmd train_cmd;
  auto* train = app.add_subcommand("train", "Train a model");
  train_cmd.config.add(train, true);
  train_cmd.corpus.add(train);
  train->add_option("--init", train_cmd.init, "Start from this checkpoint instead of a fresh model");
  train->add_option("--out", train_cmd.out, "Write the trained checkpoint here");
  train->add_option("--report", train_cmd.report, "Write the JSON-lines report here (default stdout)");
  train->add_flag("--timing", train_cmd.timing, "Include wall-clock fields in the report");

  EvalCmd eval_cmd;
  auto* eval = app.add_subcommand("eval", "Perplexity of a checkpoint");
  eval->add_option("--checkpoint", eval_cmd.checkpoint, "Checkpoint manifest")->required();
  eval_cmd.corpus.add(eval);
  eval->add_option("--split", eval_cmd.split, "train | valid | test")
      ->check(CLI::IsMember({"train", "valid", "test"}))
      ->capture_default_str();
  eval->add_option("--context", eval_cmd.context, "Unscored tokens of prior context per block")->capture_default_str();
  eval->add_option("--window", eval_cmd.window, "Evaluation window (0 = max_T)")->capture_default_str();
  eval->add_option("--max-tokens", eval_cmd.max_tokens, "Only the first N tokens of the split (0 = all)");

  GenerateCmd gen_cmd;
  auto* gen = app.add_subcommand("generate", "Sample from a checkpoint");
  gen->add_option("--checkpoint", gen_cmd.checkpoint, "Checkpoint manifest")->required();
  gen->add_option("--prompt", gen_cmd.prompt, "Prompt text")->capture_default_str();
  gen->add_option("-n,--tokens", gen_cmd.tokens, "Tokens to generate")->capture_default_str();
  gen->add_option("--temperature", gen_cmd.temperature, "Sampling temperature (0 = greedy)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();

  ConvertCmd conv_cmd;
  auto* conv = app.add_subcommand("convert", "Replace softmax attention with an update rule");
  conv->add_option("--checkpoint", conv_cmd.checkpoint, "Softmax-attention checkpoint")->required();
  conv->add_option("--out", conv_cmd.out, "Converted checkpoint")->required();
  conv->add_option("--rule", conv_cmd.rule, "add | gated | delta | decay")->required();
  conv->add_option("--map", conv_cmd.map, "identity | linear | relu | elu1")->capture_default_str();
  conv->add_flag("--norm", conv_cmd.norm, "Attention normalization");
  conv->add_flag("--sum-norm", conv_cmd.sum_norm, "Sum-normalize keys and queries");
  conv->add_option("--m", conv_cmd.m, "Feature dimension for linear/relu maps (default d)");

  BenchCmd bench_cmd;
  auto* bench = app.add_subcommand("bench", "Per-token generation latency vs. sequence length");
  bench->add_option("--mixers", bench_cmd.mixers, "softmax, local, add, gated, delta, decay")
      ->delimiter(',')
      ->capture_default_str();
  bench->add_option("--lengths", bench_cmd.lengths, "Ascending sequence lengths")
      ->delimiter(',')
      ->capture_default_str();
  bench->add_option("--repeats", bench_cmd.repeats, "Timed runs per point (>= 5)")->capture_default_str();
  bench->add_option("--warmup", bench_cmd.warmup, "Discarded runs per point")->capture_default_str();
  bench->add_option("--out", bench_cmd.out, "CSV path; a .json shape sidecar is written next to it")->required();
  bench->add_option("--layers", bench_cmd.shape.n_layers)->capture_default_str();
  bench->add_option("--d-model", bench_cmd.shape.d_model)->capture_default_str();
  bench->add_option("--heads", bench_cmd.shape.n_heads)->capture_default_str();
  bench->add_option("--m", bench_cmd.shape.m, "Feature dimension of the rule mixers")->capture_default_str();
  bench->add_option("--window", bench_cmd.shape.window, "Local attention window")->capture_default_str();

  GradcheckCmd gc_cmd;
  auto* gc = app.add_subcommand("gradcheck", "Check update-rule gradients against finite differences");
  gc->add_option("--rule", gc_cmd.rule, "add | gated | delta | decay | all")
      ->check(CLI::IsMember({"add", "gated", "delta", "decay", "all"}))
      ->capture_default_str();
  gc->add_option("--precision", gc_cmd.precision, "double | single")
      ->check(CLI::IsMember({"double", "single"}))
      ->capture_default_str();
  gc->add_option("--seeds", gc_cmd.seeds, "Random problems per configuration")->capture_default_str();
  gc->add_option("--length", gc_cmd.length, "Sequence length")->capture_default_str();
  gc->add_option("--d", gc_cmd.d, "Head dimension")->capture_default_str();
  gc->add_option("--m", gc_cmd.m, "Feature dimension of linear/relu maps")->capture_default_str();
  gc->add_option("--tol", gc_cmd.tol, "Pass threshold (default 1e-5 double, 5e-2 single)");

  AblateCmd ab_cmd;
  auto* ab = app.add_subcommand("ablate", "Train the ablation grid and tabulate the outcomes");
  ab->add_option("--presets", ab_cmd.presets, "Presets to run (default: the table1 grid + add-norm-phi-off)")
      ->delimiter(',');
  ab_cmd.config.add(ab, false);
  ab_cmd.corpus.add(ab);
  ab->add_option("--csv", ab_cmd.csv, "Write outcomes as CSV");
  ab->add_option("--md", ab_cmd.md, "Write the Markdown table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    std::unique_ptr<kernels::ScopedThreadLimit> limit;
    if (g.threads > 0) limit = std::make_unique<kernels::ScopedThreadLimit>(g.threads);
    if (*train) return train_cmd.run(g);
    if (*eval) return eval_cmd.run(g);
    if (*gen) return gen_cmd.run(g);
    if (*conv) return conv_cmd.run(g);
    if (*bench) return bench_cmd.run(g);
    if (*gc) return gc_cmd.run(g);
    if (*ab) return ab_cmd.run(g);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
