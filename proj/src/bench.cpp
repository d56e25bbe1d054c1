#include "fw/bench.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <json.hpp>

#include "fw/generation.hpp"

namespace fw {

ModelConfig bench_model_config(const std::string& mixer, const BenchShape& shape, std::size_t max_T) {
  ModelConfig c;
  c.n_layers = shape.n_layers;
  c.d_model = shape.d_model;
  c.n_heads = shape.n_heads;
  c.ffn_mult = shape.ffn_mult;
  c.window = shape.window;
  c.max_T = max_T;
  if (mixer == "softmax") {
    c.mixer = MixerKind::softmax;
  } else if (mixer == "local") {
    c.mixer = MixerKind::local;
  } else {
    c.mixer = MixerKind::rule;
    c.rule.rule = parse_rule(mixer);
    c.rule.feature_map = FeatureMapKind::linear;
    c.rule.attention_norm = false;
    c.rule.sum_norm = false;
    if (c.rule.rule == RuleKind::delta) {
      c.rule.feature_map = FeatureMapKind::relu;
      c.rule.sum_norm = true;
    }
    c.rule.d = c.head_dim();
    c.rule.m = shape.m;
  }
  c.validate();
  return c;
}

std::size_t analytic_live_bytes(const ModelConfig& c, std::size_t seq_len) {
  constexpr std::size_t f32 = 4;
  switch (c.mixer) {
    case MixerKind::softmax: return seq_len * 2 * c.d_model * c.n_layers * f32;
    case MixerKind::local: return c.window * 2 * c.d_model * c.n_layers * f32;
    case MixerKind::rule:
      return c.n_layers * c.n_heads * (c.rule.d * c.rule.m + (c.rule.attention_norm ? c.rule.m : 0)) * f32;
  }
  return 0;
}

ModelFactory default_bench_factory(const BenchShape& shape, std::uint64_t seed) {
  return [shape, seed](const std::string& mixer, std::size_t max_T) {
    return build_model<float>(bench_model_config(mixer, shape, max_T), seed);
  };
}

std::vector<BenchRecord> bench_generation(const ModelFactory& factory,
                                          const std::vector<std::string>& mixers,
                                          const std::vector<std::size_t>& lengths,
                                          std::size_t repeats, std::size_t warmup,
                                          std::uint64_t seed) {
  if (repeats < 5) throw ConfigError("repeats must be >= 5");
  if (lengths.empty() || !std::is_sorted(lengths.begin(), lengths.end()) || lengths.front() == 0)
    throw ConfigError("lengths must be ascending and >= 1");
  kernels::ScopedThreadLimit single(1);
  using clock = std::chrono::steady_clock;
  std::vector<BenchRecord> out;
  for (const auto& mixer : mixers) {
    const Model<float> model = factory(mixer, lengths.back());
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> byte(0, static_cast<int>(model.config.vocab_size) - 1);
    GenerationState<float> state = init_generation_state(model);
    for (std::size_t T : lengths) {
      while (state.position + 1 < T) decode_step(model, state, byte(rng));
      const int token = byte(rng);
      std::vector<double> samples;
      for (std::size_t r = 0; r < warmup + repeats; ++r) {
        GenerationState<float> copy = state;
        // Keep cache growth out of the timed region.
        for (auto& layer : copy.layers) {
          layer.keys.reserve(layer.keys.size() + model.config.d_model);
          layer.values.reserve(layer.values.size() + model.config.d_model);
        }
        const auto start = clock::now();
        const Vector<float> logits = decode_step(model, copy, token);
        const auto stop = clock::now();
        if (logits.size() != model.config.vocab_size) throw std::logic_error("bench: bad logits");
        if (r >= warmup) samples.push_back(std::chrono::duration<double>(stop - start).count());
      }
      std::sort(samples.begin(), samples.end());
      const std::size_t n = samples.size();
      const double median = n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
      out.push_back({mixer, T, median, analytic_live_bytes(model.config, T), repeats});
    }
  }
  return out;
}

void write_csv(std::ostream& out, std::vector<BenchRecord> records) {
  std::stable_sort(records.begin(), records.end(), [](const BenchRecord& a, const BenchRecord& b) {
    return a.mixer != b.mixer ? a.mixer < b.mixer : a.seq_len < b.seq_len;
  });
  out << kBenchCsvHeader << '\n';
  for (const auto& r : records) {
    std::ostringstream latency;
    latency << std::setprecision(17) << r.per_token_latency_s;
    out << r.mixer << ',' << r.seq_len << ',' << latency.str() << ',' << r.live_bytes << ','
        << r.repeats << '\n';
  }
}

std::vector<BenchRecord> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kBenchCsvHeader) throw ConfigError("bench csv: bad header");
  std::vector<BenchRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw ConfigError("bench csv: expected 5 columns in '" + line + "'");
    out.push_back({cells[0], std::stoull(cells[1]), std::stod(cells[2]), std::stoull(cells[3]),
                   std::stoull(cells[4])});
  }
  return out;
}

void emit_csv(const std::vector<BenchRecord>& records, const std::string& path,
              const BenchShape& shape) {
  if (records.empty()) throw ConfigError("no bench records to write");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_csv(out, records);
  std::ofstream side(path + ".json");
  if (!side) throw std::runtime_error("cannot write " + path + ".json");
  nlohmann::ordered_json j;
  j["batch"] = 1;
  j["n_layers"] = shape.n_layers;
  j["d_model"] = shape.d_model;
  j["n_heads"] = shape.n_heads;
  j["head_dim"] = shape.d_model / shape.n_heads;
  j["m"] = shape.m;
  j["ffn_mult"] = shape.ffn_mult;
  j["window"] = shape.window;
  j["precision"] = "float32";
  j["threads"] = 1;
  side << j.dump(2) << '\n';
  if (!out || !side) throw std::runtime_error("write failed for " + path);
}

}  // namespace fw
