#include "fw/presets.hpp"

#include <cstdio>
#include <map>

namespace fw {

ModelConfig desk_model_config() {
  ModelConfig c;
  c.vocab_size = 256;
  c.d_model = 128;
  c.n_heads = 4;
  c.n_layers = 4;
  c.ffn_mult = 4;
  c.max_T = 256;
  return c;
}

namespace {

const char* const kRules[] = {"add", "delta", "gated", "decay"};
const char* const kColumns[] = {"baseline", "norm-off", "phi-off"};

ExperimentSpec rule_spec(const std::string& name, RuleKind rule, FeatureMapKind map, bool norm,
                         std::size_t m) {
  ExperimentSpec s;
  s.name = name;
  s.model = desk_model_config();
  s.model.mixer = MixerKind::rule;
  s.model.rule = {rule, map, norm, rule == RuleKind::delta, s.model.head_dim(), m};
  return s;
}

std::map<std::string, ExperimentSpec> build_presets() {
  std::map<std::string, ExperimentSpec> out;
  for (const char* r : kRules) {
    const RuleKind rule = parse_rule(r);
    for (const char* col : kColumns) {
      const std::string name = std::string("table1-") + r + "-" + col;
      const std::string column = col;
      const bool norm = column == "baseline";
      const FeatureMapKind map = column == "phi-off" ? FeatureMapKind::linear : FeatureMapKind::relu;
      ExperimentSpec s = rule_spec(name, rule, map, norm, 4);
      if (rule == RuleKind::decay && norm) s.applicable = false;
      if ((rule == RuleKind::gated && column == "baseline") ||
          (rule == RuleKind::add && column == "norm-off") ||
          (rule == RuleKind::delta && column == "phi-off"))
        s.expect = "diverge-or-degrade";
      out[name] = s;
    }
  }
  // Additive rule with normalization but no feature map.
  {
    ExperimentSpec s = rule_spec("add-norm-phi-off", RuleKind::add, FeatureMapKind::linear, true, 4);
    s.expect = "diverge-or-degrade";
    out[s.name] = s;
  }
  for (const char* r : {"gated", "decay"})
    for (std::size_t m : {16u, 32u}) {
      const std::string name = std::string("table2-") + r + "-m" + std::to_string(m);
      out[name] = rule_spec(name, parse_rule(r), FeatureMapKind::linear, false, m);
    }
  {
    ExperimentSpec s;
    s.name = "table2-local";
    s.model = desk_model_config();
    s.model.mixer = MixerKind::local;
    s.model.window = 32;
    out[s.name] = s;
    s.name = "table2-softmax";
    s.model.mixer = MixerKind::softmax;
    out[s.name] = s;
  }
  return out;
}

const std::map<std::string, ExperimentSpec>& presets() {
  static const auto table = build_presets();
  return table;
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& [name, spec] : presets()) out.push_back(name);
  return out;
}

std::vector<std::string> table1_preset_names() {
  std::vector<std::string> out;
  for (const char* r : kRules)
    for (const char* col : kColumns) out.push_back(std::string("table1-") + r + "-" + col);
  return out;
}

std::optional<ExperimentSpec> find_preset(const std::string& name) {
  const auto it = presets().find(name);
  if (it == presets().end()) return std::nullopt;
  return it->second;
}

ExperimentSpec resolve_preset(const std::string& name) {
  auto spec = find_preset(name);
  if (!spec) throw ConfigError("unknown preset '" + name + "'");
  return *spec;
}

std::vector<AblationOutcome> run_ablation_grid(const CorpusSplits& corpus,
                                               const std::vector<std::string>& names,
                                               std::uint64_t seed, const SpecAdjust& adjust,
                                               const AblationProgress& progress) {
  // Resolve everything first so a bad name fails before any training.
  std::vector<ExperimentSpec> specs;
  for (const auto& n : names) specs.push_back(resolve_preset(n));
  std::vector<AblationOutcome> out;
  for (auto& spec : specs) {
    if (adjust) adjust(spec);
    AblationOutcome o;
    o.preset = spec.name;
    o.expect = spec.expect;
    if (spec.model.mixer == MixerKind::rule) o.rule = std::string(to_string(spec.model.rule.rule));
    else o.rule = std::string(to_string(spec.model.mixer));
    for (const char* col : kColumns) {
      const std::string suffix = std::string("-") + col;
      if (spec.name.size() > suffix.size() &&
          spec.name.compare(spec.name.size() - suffix.size(), suffix.size(), suffix) == 0)
        o.column = col;
    }
    if (!spec.applicable) {
      o.status = "N/A";
    } else {
      spec.train.seed = seed;
      Model<float> model = build_model<float>(spec.model, seed);
      const TrainReport report = train(model, corpus, spec.train);
      if (report.diverged) {
        o.status = "DIVERGED";
        o.diverged_step = report.diverged_step;
      } else {
        o.status = "ppl";
        o.valid_ppl = report.best_valid_ppl;
      }
    }
    if (progress) progress(o);
    out.push_back(o);
  }
  return out;
}

namespace {

std::string format_outcome(const AblationOutcome& o) {
  if (o.status != "ppl") return o.status;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", o.valid_ppl);
  return buf;
}

}  // namespace

void write_ablation_csv(std::ostream& out, const std::vector<AblationOutcome>& outcomes) {
  out << "preset,rule,column,outcome,valid_ppl,diverged_step,expect\n";
  for (const auto& o : outcomes) {
    char ppl[32] = "";
    if (o.status == "ppl") std::snprintf(ppl, sizeof ppl, "%.6f", o.valid_ppl);
    out << o.preset << ',' << o.rule << ',' << o.column << ',' << o.status << ',' << ppl << ','
        << (o.diverged_step ? std::to_string(*o.diverged_step) : "") << ',' << o.expect << '\n';
  }
}

void write_ablation_markdown(std::ostream& out, const std::vector<AblationOutcome>& outcomes) {
  out << "| Rule | Baseline | Norm off | Phi off |\n";
  out << "|---|---|---|---|\n";
  for (const char* r : kRules) {
    std::string label = r;
    label[0] = static_cast<char>(label[0] - 'a' + 'A');
    out << "| " << label;
    for (const char* col : kColumns) {
      std::string cell = "-";
      for (const auto& o : outcomes)
        if (o.rule == r && o.column == col && o.preset.rfind("table1-", 0) == 0) cell = format_outcome(o);
      out << " | " << cell;
    }
    out << " |\n";
  }
}

}  // namespace fw
