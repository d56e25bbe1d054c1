#pragma once

// Adam training loop with global-norm clipping, warmup + cosine/constant
// learning-rate schedule, periodic validation and divergence reporting.

#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fw/corpus.hpp"
#include "fw/model.hpp"

namespace fw {

enum class Schedule { constant, cosine };

std::string_view to_string(Schedule schedule);
Schedule parse_schedule(std::string_view name);

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t seq_len = 128;
  std::size_t steps = 2000;
  double lr = 3e-4;
  std::size_t warmup_steps = 100;
  Schedule schedule = Schedule::cosine;
  double min_lr = 1e-5;
  double clip_norm = 1.0;
  std::size_t eval_every = 200;
  std::size_t log_every = 10;
  std::size_t eval_tokens = 0;  // 0 = whole validation split
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Hyperparameters of the two full-scale fine-tuning recipes, kept as named
// presets: "pile-appendix-a" and "wt103-appendix-b".
TrainConfig train_preset(std::string_view name);
std::vector<std::string> train_preset_names();

bool apply_train_key(TrainConfig& config, const std::string& key, const std::string& value);
void write_train_config(std::ostream& out, const TrainConfig& config);

// Learning rate used at 0-based optimizer step `step`.
double learning_rate(const TrainConfig& config, std::size_t step);

template <typename T>
std::vector<std::span<T>> tensor_spans(ModelParams<T>& params);

template <typename T>
double global_norm(ModelParams<T>& grads);

// Scales grads in place so their global L2 norm is at most clip_norm.
// Returns the norm before clipping.
template <typename T>
double clip_global_norm(ModelParams<T>& grads, double clip_norm);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  ModelParams<T> m, v;
  std::size_t t = 0;
};

template <typename T>
AdamState<T> init_adam(const ModelConfig& config);

template <typename T>
void adam_update(ModelParams<T>& params, ModelParams<T>& grads, AdamState<T>& state, double lr,
                 const AdamHyper& hyper = {});

struct TrainRecord {
  std::size_t step = 0;
  std::string split;  // "train" or "valid"
  double loss = 0.0;
  double ppl = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct TrainReport {
  std::vector<TrainRecord> records;
  std::vector<double> train_losses;  // every optimizer step
  double best_valid_loss = std::numeric_limits<double>::infinity();
  double best_valid_ppl = std::numeric_limits<double>::infinity();
  bool diverged = false;
  std::optional<std::size_t> diverged_step;
  std::string divergence_reason;
  double wall_ms_per_step = 0.0;

  // One JSON object per line. wall_ms is only written when with_timing is
  // set, so reports from identical runs are byte-identical.
  void write_jsonl(std::ostream& out, bool with_timing) const;
};

// Random contiguous windows of seq_len + 1 tokens from `tokens`.
TokenBatch sample_batch(std::span<const int> tokens, std::size_t batch_size, std::size_t seq_len,
                        std::mt19937_64& rng);

template <typename T>
TrainReport train(Model<T>& model, const CorpusSplits& data, const TrainConfig& config);

// Mean next-token NLL over `tokens`. Targets are scored in blocks of
// (window - context) tokens, each block preceded by up to `context` unscored
// tokens. `window` defaults to max_T. Windows are evaluated `batch` at a time;
// the result does not depend on `batch`.
template <typename T>
double evaluate_loss(const Model<T>& model, std::span<const int> tokens, std::size_t context,
                     std::size_t window = 0, std::size_t batch = 8);

template <typename T>
double evaluate_perplexity(const Model<T>& model, std::span<const int> tokens,
                           std::size_t context, std::size_t window = 0, std::size_t batch = 8);

}  // namespace fw
