#pragma once

// Per-token generation latency vs. sequence length. For each (mixer, T) the
// state is built by decoding T - 1 tokens, then the T-th decode step is
// timed `repeats` times on copies of that state, after `warmup` discarded
// runs. Timing runs on one thread.

#include <cstdint>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "fw/model.hpp"

namespace fw {

struct BenchRecord {
  std::string mixer;
  std::size_t seq_len = 0;
  double per_token_latency_s = 0.0;  // median
  std::size_t live_bytes = 0;        // analytic
  std::size_t repeats = 0;

  bool operator==(const BenchRecord&) const = default;
};

struct BenchShape {
  std::size_t n_layers = 2;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t m = 32;
  std::size_t ffn_mult = 4;
  std::size_t window = 32;
};

// Mixer names: softmax, local, add, gated, delta, decay. Rule mixers use a
// linear map without attention normalization, except delta, which uses a
// relu map with sum normalization.
ModelConfig bench_model_config(const std::string& mixer, const BenchShape& shape, std::size_t max_T);

// Bytes of every buffer a decode step at length T reads, in float32:
//   softmax: T * 2 * d_model * n_layers * 4
//   local:   window * 2 * d_model * n_layers * 4
//   rule:    n_layers * n_heads * (d * m + m if normalized) * 4
std::size_t analytic_live_bytes(const ModelConfig& config, std::size_t seq_len);

using ModelFactory = std::function<Model<float>(const std::string& mixer, std::size_t max_T)>;

ModelFactory default_bench_factory(const BenchShape& shape, std::uint64_t seed);

std::vector<BenchRecord> bench_generation(const ModelFactory& factory,
                                          const std::vector<std::string>& mixers,
                                          const std::vector<std::size_t>& lengths,
                                          std::size_t repeats, std::size_t warmup,
                                          std::uint64_t seed);

inline constexpr const char* kBenchCsvHeader =
    "mixer,seq_len,per_token_latency_s,live_bytes,repeats";

// Rows are sorted by mixer name, then seq_len.
void write_csv(std::ostream& out, std::vector<BenchRecord> records);
std::vector<BenchRecord> read_csv(std::istream& in);

// Writes `path` and a JSON sidecar `path.json` describing the model shape.
void emit_csv(const std::vector<BenchRecord>& records, const std::string& path,
              const BenchShape& shape);

}  // namespace fw
