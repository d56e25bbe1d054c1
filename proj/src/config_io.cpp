#include "fw/config_io.hpp"

#include <charconv>
#include <fstream>

namespace fw {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

KeyValues parse_key_values(std::istream& in) {
  KeyValues out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_key_values(in);
}

MixerKind parse_mixer(std::string_view name) {
  if (name == "softmax") return MixerKind::softmax;
  if (name == "local") return MixerKind::local;
  if (name == "rule") return MixerKind::rule;
  throw ConfigError("unknown mixer '" + std::string(name) + "'");
}

bool parse_flag(const std::string& value) {
  if (value == "1" || value == "true" || value == "on" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "off" || value == "no") return false;
  throw ConfigError("expected a boolean, got '" + value + "'");
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double out = std::stod(value, &used);
    if (used == value.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + value + "'");
}

bool apply_model_key(ModelConfig& c, const std::string& key, const std::string& value) {
  if (key == "vocab_size") c.vocab_size = parse_count(key, value);
  else if (key == "d_model") c.d_model = parse_count(key, value);
  else if (key == "n_heads") c.n_heads = parse_count(key, value);
  else if (key == "n_layers") c.n_layers = parse_count(key, value);
  else if (key == "ffn_mult") c.ffn_mult = parse_count(key, value);
  else if (key == "max_T") c.max_T = parse_count(key, value);
  else if (key == "mixer") {
    // A rule name is shorthand for mixer=rule plus rule=<name>.
    if (value == "add" || value == "gated" || value == "delta" || value == "decay") {
      c.mixer = MixerKind::rule;
      c.rule.rule = parse_rule(value);
    } else {
      c.mixer = parse_mixer(value);
    }
  }
  else if (key == "window") c.window = parse_count(key, value);
  else if (key == "rule") c.rule.rule = parse_rule(value);
  else if (key == "feature_map") c.rule.feature_map = parse_feature_map(value);
  else if (key == "attention_norm") c.rule.attention_norm = parse_flag(value);
  else if (key == "sum_norm") c.rule.sum_norm = parse_flag(value);
  else if (key == "m") c.rule.m = parse_count(key, value);
  else return false;
  return true;
}

void finalize_model_config(ModelConfig& c) {
  c.rule.d = c.head_dim();
  if (preserves_dim(c.rule.feature_map)) c.rule.m = c.rule.d;
}

void write_model_config(std::ostream& out, const ModelConfig& c) {
  out << "vocab_size=" << c.vocab_size << '\n'
      << "d_model=" << c.d_model << '\n'
      << "n_heads=" << c.n_heads << '\n'
      << "n_layers=" << c.n_layers << '\n'
      << "ffn_mult=" << c.ffn_mult << '\n'
      << "max_T=" << c.max_T << '\n'
      << "mixer=" << to_string(c.mixer) << '\n'
      << "window=" << c.window << '\n'
      << "rule=" << to_string(c.rule.rule) << '\n'
      << "feature_map=" << to_string(c.rule.feature_map) << '\n'
      << "attention_norm=" << (c.rule.attention_norm ? 1 : 0) << '\n'
      << "sum_norm=" << (c.rule.sum_norm ? 1 : 0) << '\n'
      << "m=" << c.rule.m << '\n';
}

}  // namespace fw
