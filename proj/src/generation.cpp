#include "fw/generation.hpp"

#include <algorithm>
#include <cmath>

namespace fw {

using kernels::Exec;

template <typename T>
std::size_t GenerationState<T>::bytes() const {
  std::size_t total = 0;
  for (const auto& layer : layers) {
    for (const auto& h : layer.heads) total += h.bytes();
    total += (layer.keys.size() + layer.values.size()) * sizeof(T);
  }
  return total;
}

template <typename T>
GenerationState<T> init_generation_state(const Model<T>& model) {
  const ModelConfig& c = model.config;
  GenerationState<T> state;
  state.layers.resize(c.n_layers);
  for (auto& layer : state.layers) {
    if (c.mixer == MixerKind::rule) {
      layer.heads.assign(c.n_heads, init_state<T>(c.rule));
      layer.workspaces.resize(c.n_heads);
      for (auto& ws : layer.workspaces) ws.resize(c.rule);
    } else if (c.mixer == MixerKind::local) {
      layer.keys.assign(c.window * c.d_model, T{0});
      layer.values.assign(c.window * c.d_model, T{0});
    }
  }
  return state;
}

namespace {

// One query row against cached rows [first, t]; row(j) maps a position to
// its storage. Same arithmetic order as the batched forward.
template <typename T, typename RowOf>
void attend(std::span<const T> q, std::size_t first, std::size_t t, std::size_t d,
            RowOf&& row_of, std::span<T> y, std::vector<T>& w) {
  const T scale = T{1} / std::sqrt(static_cast<T>(d));
  const std::size_t count = t + 1 - first;
  w.resize(count);
  for (std::size_t j = first; j <= t; ++j) {
    const T* kr = row_of(j).first;
    T acc{0};
    for (std::size_t c = 0; c < d; ++c) acc += q[c] * kr[c];
    w[j - first] = acc * scale;
  }
  softmax_inplace<T>(std::span<T>(w.data(), count));
  std::fill(y.begin(), y.end(), T{0});
  for (std::size_t j = first; j <= t; ++j) {
    const T p = w[j - first];
    const T* vr = row_of(j).second;
    for (std::size_t c = 0; c < d; ++c) y[c] += p * vr[c];
  }
}

}  // namespace

template <typename T>
Vector<T> decode_step(const Model<T>& model, GenerationState<T>& state, int token) {
  const ModelConfig& c = model.config;
  const auto& P = model.params;
  const std::size_t D = c.d_model;
  const std::size_t H = c.n_heads;
  const std::size_t d = c.head_dim();
  const std::size_t t = state.position;
  if (t >= c.max_T)
    throw ConfigError("position " + std::to_string(t) + " exceeds max_T=" + std::to_string(c.max_T));
  if (token < 0 || static_cast<std::size_t>(token) >= c.vocab_size)
    throw std::out_of_range("token id " + std::to_string(token) + " outside vocabulary");

  Matrix<T> h(1, D);
  {
    const auto e = P.token_embedding.row(static_cast<std::size_t>(token));
    const auto pos = P.position_embedding.row(t);
    for (std::size_t i = 0; i < D; ++i) h(0, i) = e[i] + pos[i];
  }
  Matrix<T> a, q, k, v, mixed(1, D), o, cn, up, act, f;
  std::vector<T> w;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& L = P.layers[l];
    auto& S = state.layers[l];
    kernels::layer_norm<Exec::serial, T>(h, L.ln1_gain.span(), L.ln1_bias.span(), a, nullptr);
    kernels::linear<Exec::serial, T>(a, L.w_q, {}, q);
    kernels::linear<Exec::serial, T>(a, L.w_k, {}, k);
    kernels::linear<Exec::serial, T>(a, L.w_v, {}, v);
    auto head = [&](const Matrix<T>& m, std::size_t hh) {
      return std::span<const T>(m.row(0).data() + hh * d, d);
    };
    if (c.mixer == MixerKind::rule) {
      for (std::size_t hh = 0; hh < H; ++hh) {
        try {
          step_inplace<T>(c.rule, L.heads[hh], S.heads[hh], head(a, hh), head(q, hh),
                          head(k, hh), head(v, hh),
                          std::span<T>(mixed.row(0).data() + hh * d, d), S.workspaces[hh]);
        } catch (const NumericalFault& fault) {
          rethrow_at(fault, t);
        }
      }
    } else {
      const bool local = c.mixer == MixerKind::local;
      const std::size_t slot = local ? t % c.window : t;
      if (!local) {
        S.keys.resize((t + 1) * D);
        S.values.resize((t + 1) * D);
      }
      std::copy_n(k.row(0).data(), D, S.keys.data() + slot * D);
      std::copy_n(v.row(0).data(), D, S.values.data() + slot * D);
      const std::size_t first = local && t + 1 > c.window ? t + 1 - c.window : 0;
      for (std::size_t hh = 0; hh < H; ++hh) {
        auto row_of = [&](std::size_t j) {
          const std::size_t s = (local ? j % c.window : j) * D + hh * d;
          return std::pair<const T*, const T*>(S.keys.data() + s, S.values.data() + s);
        };
        attend<T>(head(q, hh), first, t, d, row_of,
                  std::span<T>(mixed.row(0).data() + hh * d, d), w);
      }
    }
    kernels::linear<Exec::serial, T>(mixed, L.w_o, {}, o);
    for (std::size_t i = 0; i < D; ++i) h(0, i) += o(0, i);
    kernels::layer_norm<Exec::serial, T>(h, L.ln2_gain.span(), L.ln2_bias.span(), cn, nullptr);
    kernels::linear<Exec::serial, T>(cn, L.w_up, L.b_up.span(), up);
    kernels::gelu_forward<Exec::serial, T>(up, act);
    kernels::linear<Exec::serial, T>(act, L.w_down, L.b_down.span(), f);
    for (std::size_t i = 0; i < D; ++i) h(0, i) += f(0, i);
  }
  Matrix<T> hf;
  kernels::layer_norm<Exec::serial, T>(h, P.lnf_gain.span(), P.lnf_bias.span(), hf, nullptr);
  Vector<T> logits(c.vocab_size);
  const auto hr = hf.row(0);
  for (std::size_t vtok = 0; vtok < c.vocab_size; ++vtok) {
    const auto er = P.token_embedding.row(vtok);
    T acc{0};
    for (std::size_t i = 0; i < D; ++i) acc += hr[i] * er[i];
    logits[vtok] = acc;
  }
  ++state.position;
  return logits;
}

template <typename T>
int sample_token(std::span<const T> logits, const Sampling& sampling, std::mt19937_64& rng) {
  if (sampling.mode == Sampling::Mode::greedy || sampling.temperature <= 0.0)
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < p.size(); ++i)
    p[i] = static_cast<double>(logits[i]) / sampling.temperature;
  softmax_inplace<double>(p);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double cumulative = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cumulative += p[i];
    if (u < cumulative) return static_cast<int>(i);
  }
  return static_cast<int>(p.size() - 1);
}

template <typename T>
GenerationResult<T> generate(const Model<T>& model, std::span<const int> prompt,
                             std::size_t n_tokens, const Sampling& sampling) {
  if (prompt.empty()) throw ConfigError("generate needs a non-empty prompt");
  GenerationResult<T> out;
  if (n_tokens == 0) return out;
  GenerationState<T> state = init_generation_state(model);
  std::mt19937_64 rng(sampling.seed);
  Vector<T> logits;
  for (int tok : prompt) {
    logits = decode_step(model, state, tok);
    out.step_logits.push_back(logits);
  }
  for (std::size_t i = 0; i < n_tokens; ++i) {
    const int next = sample_token<T>(logits.span(), sampling, rng);
    out.tokens.push_back(next);
    if (i + 1 == n_tokens) break;
    logits = decode_step(model, state, next);
    out.step_logits.push_back(logits);
  }
  return out;
}

#define FW_INSTANTIATE(T)                                                                  \
  template struct GenerationState<T>;                                                      \
  template GenerationState<T> init_generation_state<T>(const Model<T>&);                   \
  template Vector<T> decode_step<T>(const Model<T>&, GenerationState<T>&, int);            \
  template int sample_token<T>(std::span<const T>, const Sampling&, std::mt19937_64&);     \
  template GenerationResult<T> generate<T>(const Model<T>&, std::span<const int>,          \
                                           std::size_t, const Sampling&);

FW_INSTANTIATE(float)
FW_INSTANTIATE(double)
#undef FW_INSTANTIATE

}  // namespace fw
