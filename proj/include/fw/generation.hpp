#pragma once

// Incremental decoding. Rule mixers carry a fixed-size fast-weight state per
// head; softmax attention appends to a KV cache; local attention keeps a
// ring buffer of the last `window` rows.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "fw/model.hpp"

namespace fw {

template <typename T>
struct LayerDecodeState {
  std::vector<FastWeightState<T>> heads;  // rule mixer
  std::vector<T> keys, values;            // softmax: position x d_model; local: window x d_model
  std::vector<StepWorkspace<T>> workspaces;  // scratch, not counted in bytes()
};

template <typename T>
struct GenerationState {
  std::vector<LayerDecodeState<T>> layers;
  std::size_t position = 0;

  // Bytes held by recurrent state and attention caches.
  std::size_t bytes() const;
};

template <typename T>
GenerationState<T> init_generation_state(const Model<T>& model);

// Feeds one token at state.position and returns next-token logits.
template <typename T>
Vector<T> decode_step(const Model<T>& model, GenerationState<T>& state, int token);

struct Sampling {
  enum class Mode { greedy, temperature };
  Mode mode = Mode::greedy;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

template <typename T>
int sample_token(std::span<const T> logits, const Sampling& sampling, std::mt19937_64& rng);

template <typename T>
struct GenerationResult {
  std::vector<int> tokens;  // generated tokens only
  // Logits after each fed token: prompt.size() + n_tokens - 1 rows, row i
  // predicting position i + 1 of prompt ++ tokens.
  std::vector<Vector<T>> step_logits;
};

template <typename T>
GenerationResult<T> generate(const Model<T>& model, std::span<const int> prompt,
                             std::size_t n_tokens, const Sampling& sampling);

}  // namespace fw
