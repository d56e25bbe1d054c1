#pragma once

// Decoder-only byte-level language model with a pluggable token mixer:
// exact softmax attention, windowed local attention, or a fast-weight rule.
// Blocks are pre-norm: h += W_o mix(LN1 h); h += FFN(LN2 h). The output head
// is tied to the token embedding.
//
// Projection and FFN weights use the "x W" layout (in x out), so output
// coordinate i of a projection is column i of its weight.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fw/kernels.hpp"
#include "fw/rules.hpp"

namespace fw {

enum class MixerKind { softmax, local, rule };

std::string_view to_string(MixerKind kind);

struct ModelConfig {
  std::size_t vocab_size = 256;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t n_layers = 4;
  std::size_t ffn_mult = 4;
  std::size_t max_T = 256;
  MixerKind mixer = MixerKind::softmax;
  std::size_t window = 32;  // local attention only
  RuleConfig rule{RuleKind::decay, FeatureMapKind::linear, false, false, 32, 32};

  std::size_t head_dim() const { return n_heads == 0 ? 0 : d_model / n_heads; }
  std::size_t feature_dim() const { return rule.m; }
  std::size_t ffn_dim() const { return d_model * ffn_mult; }
  void validate() const;
  std::string describe() const;

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerParams {
  Vector<T> ln1_gain, ln1_bias;
  Matrix<T> w_q, w_k, w_v, w_o;     // d_model x d_model
  std::vector<RuleParams<T>> heads;  // one per head, rule mixer only
  Vector<T> ln2_gain, ln2_bias;
  Matrix<T> w_up;                    // d_model x ffn
  Vector<T> b_up;
  Matrix<T> w_down;                  // ffn x d_model
  Vector<T> b_down;

  bool operator==(const LayerParams&) const = default;
};

template <typename T>
struct ModelParams {
  Matrix<T> token_embedding;     // vocab x d_model
  Matrix<T> position_embedding;  // max_T x d_model
  std::vector<LayerParams<T>> layers;
  Vector<T> lnf_gain, lnf_bias;

  bool operator==(const ModelParams&) const = default;
};

// Visits every tensor as (name, span) in a fixed order.
template <typename T, typename F>
void for_each_tensor(ModelParams<T>& p, F&& f) {
  f(std::string("token_embedding"), p.token_embedding.span());
  f(std::string("position_embedding"), p.position_embedding.span());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    f(pre + "ln1_gain", L.ln1_gain.span());
    f(pre + "ln1_bias", L.ln1_bias.span());
    f(pre + "w_q", L.w_q.span());
    f(pre + "w_k", L.w_k.span());
    f(pre + "w_v", L.w_v.span());
    f(pre + "w_o", L.w_o.span());
    for (std::size_t h = 0; h < L.heads.size(); ++h) {
      const std::string head = pre + "heads." + std::to_string(h) + ".";
      for_each_tensor(L.heads[h], [&](const char* name, std::span<T> s) { f(head + name, s); });
    }
    f(pre + "ln2_gain", L.ln2_gain.span());
    f(pre + "ln2_bias", L.ln2_bias.span());
    f(pre + "w_up", L.w_up.span());
    f(pre + "b_up", L.b_up.span());
    f(pre + "w_down", L.w_down.span());
    f(pre + "b_down", L.b_down.span());
  }
  f(std::string("lnf_gain"), p.lnf_gain.span());
  f(std::string("lnf_bias"), p.lnf_bias.span());
}

// Shape of every tensor, in for_each_tensor order: (name, rows, cols).
struct TensorShape {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

template <typename T>
struct Model {
  ModelConfig config;
  ModelParams<T> params;

  std::size_t parameter_count() const;
  std::vector<TensorShape> tensor_shapes() const;
};

// All-zero parameters with the structure implied by `config`.
template <typename T>
ModelParams<T> zero_params(const ModelConfig& config);

// Closed-form parameter count for a configuration.
std::size_t expected_parameter_count(const ModelConfig& config);

// Deterministic initialization. A rule mixer is built by initializing the
// softmax model and converting it, so it carries the conversion scheme.
template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed);

// Swaps the softmax mixer for `target`, copying all pretrained weights and
// initializing the new per-head parameters:
//   decay: b_z, b_f = logit(u), u ~ U(0, 1); W_z, W_f ~ N(0, 1/d); output
//          coordinate i of head h in W_v scaled by 1 - sigmoid(b_z[i]).
//   gated: b_g = logit(u), u ~ U(0, 1); w_g = 0.
//   delta: b_g = logit(0.007); w_g = 0.
//   add with identity/linear map: W_v scaled by 1/512.
//   linear/relu maps: W_phi ~ N(0, 1/d), b_phi = 1.
template <typename T>
Model<T> convert_mixer(const Model<T>& model, const RuleConfig& target, std::uint64_t seed);

inline constexpr double kDeltaGateInit = 0.007;
inline constexpr double kAddValueScale = 1.0 / 512.0;

template <typename T>
struct LmOutput {
  Matrix<T> logits;  // T x vocab
  double loss = 0.0;
};

// Logits for every position of `inputs` (length <= max_T).
template <typename T>
Matrix<T> forward_logits(const Model<T>& model, std::span<const int> inputs);

// tokens has length T + 1: inputs are tokens[0..T), targets tokens[1..T].
template <typename T>
LmOutput<T> forward_lm(const Model<T>& model, std::span<const int> tokens);

// A batch of equal-length sequences. targets[n] < 0 marks an unscored row.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> inputs;   // batch x length
  std::vector<int> targets;  // batch x length

  // Builds a batch from sequences of length + 1 tokens (next-token targets).
  static TokenBatch from_sequences(const std::vector<std::vector<int>>& sequences);
};

template <typename T>
struct LossAndGrad {
  double loss = 0.0;
  ModelParams<T> grads;
};

// Mean cross-entropy over scored rows and its gradient for every parameter.
template <typename T>
LossAndGrad<T> loss_and_grad(const Model<T>& model, const TokenBatch& batch);

// Loss only (no caches kept). Optionally returns per-row NLL.
template <typename T>
double batch_loss(const Model<T>& model, const TokenBatch& batch,
                  std::vector<double>* per_row_nll = nullptr);

}  // namespace fw
