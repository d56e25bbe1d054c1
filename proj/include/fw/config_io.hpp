#pragma once

// Plain key=value configuration text: one pair per line, '#' starts a
// comment, surrounding whitespace is ignored.

#include <istream>
#include <map>
#include <ostream>
#include <string>

#include "fw/model.hpp"

namespace fw {

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in);
KeyValues read_key_values(const std::string& path);

MixerKind parse_mixer(std::string_view name);
bool parse_flag(const std::string& value);
std::size_t parse_count(const std::string& key, const std::string& value);
double parse_real(const std::string& key, const std::string& value);

// Applies one model key (vocab_size, d_model, n_heads, n_layers, ffn_mult,
// max_T, mixer, window, rule, feature_map, attention_norm, sum_norm, m).
// mixer also accepts a rule name (add, gated, delta, decay) as shorthand for
// mixer=rule, rule=<name>. Returns false when the key is not a model key.
bool apply_model_key(ModelConfig& config, const std::string& key, const std::string& value);

// Sets rule.d to head_dim, and m to d for maps that keep the dimension.
void finalize_model_config(ModelConfig& config);

// Writes every model key; the result reads back through apply_model_key.
void write_model_config(std::ostream& out, const ModelConfig& config);

}  // namespace fw
