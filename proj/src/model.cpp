#include "fw/model.hpp"

#include "fw/gradients.hpp"

#include <cmath>
#include <exception>
#include <random>

namespace fw {

using kernels::Exec;

std::string_view to_string(MixerKind kind) {
  switch (kind) {
    case MixerKind::softmax: return "softmax";
    case MixerKind::local: return "local";
    case MixerKind::rule: return "rule";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (vocab_size == 0 || d_model == 0 || n_heads == 0 || n_layers == 0 || ffn_mult == 0 ||
      max_T == 0)
    throw ConfigError("model dimensions must all be >= 1");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (mixer == MixerKind::local && window == 0) throw ConfigError("local window must be >= 1");
  if (mixer == MixerKind::rule) {
    rule.validate();
    if (rule.d != head_dim())
      throw ConfigError("rule.d (" + std::to_string(rule.d) + ") must equal head_dim (" +
                        std::to_string(head_dim()) + ")");
  }
}

std::string ModelConfig::describe() const {
  std::string out = "vocab=" + std::to_string(vocab_size) + " d_model=" + std::to_string(d_model) +
                    " heads=" + std::to_string(n_heads) + " layers=" + std::to_string(n_layers) +
                    " ffn_mult=" + std::to_string(ffn_mult) + " max_T=" + std::to_string(max_T) +
                    " mixer=" + std::string(to_string(mixer));
  if (mixer == MixerKind::local) out += " window=" + std::to_string(window);
  if (mixer == MixerKind::rule) out += " [" + rule.describe() + "]";
  return out;
}

namespace {

std::size_t rule_param_count(const RuleConfig& r) {
  std::size_t n = 0;
  if (has_weight(r.feature_map)) n += r.m * r.d;
  if (has_bias(r.feature_map)) n += r.m;
  if (r.rule == RuleKind::decay) n += r.d * r.d + r.d + r.m * r.d + r.m;
  if (has_scalar_gate(r.rule)) n += r.d + 1;
  return n;
}

}  // namespace

std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t D = c.d_model;
  const std::size_t F = c.ffn_dim();
  std::size_t per_layer = 2 * D + 4 * D * D + 2 * D + D * F + F + F * D + D;
  if (c.mixer == MixerKind::rule) per_layer += c.n_heads * rule_param_count(c.rule);
  return c.vocab_size * D + c.max_T * D + c.n_layers * per_layer + 2 * D;
}

template <typename T>
ModelParams<T> zero_params(const ModelConfig& config) {
  config.validate();
  const std::size_t D = config.d_model;
  const std::size_t F = config.ffn_dim();
  ModelParams<T> p;
  p.token_embedding = Matrix<T>(config.vocab_size, D);
  p.position_embedding = Matrix<T>(config.max_T, D);
  p.layers.resize(config.n_layers);
  for (auto& L : p.layers) {
    L.ln1_gain = Vector<T>(D);
    L.ln1_bias = Vector<T>(D);
    L.w_q = Matrix<T>(D, D);
    L.w_k = Matrix<T>(D, D);
    L.w_v = Matrix<T>(D, D);
    L.w_o = Matrix<T>(D, D);
    if (config.mixer == MixerKind::rule)
      L.heads.assign(config.n_heads, zero_rule_params<T>(config.rule));
    L.ln2_gain = Vector<T>(D);
    L.ln2_bias = Vector<T>(D);
    L.w_up = Matrix<T>(D, F);
    L.b_up = Vector<T>(F);
    L.w_down = Matrix<T>(F, D);
    L.b_down = Vector<T>(D);
  }
  p.lnf_gain = Vector<T>(D);
  p.lnf_bias = Vector<T>(D);
  return p;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  auto copy = params;
  for_each_tensor(copy, [&](const std::string&, std::span<T> s) { n += s.size(); });
  return n;
}

template <typename T>
std::vector<TensorShape> Model<T>::tensor_shapes() const {
  std::vector<TensorShape> out;
  auto copy = params;
  for_each_tensor(copy, [&](const std::string& name, std::span<T> s) {
    out.push_back({name, 1, s.size()});
  });
  // Recover 2-D shapes for the matrices.
  const std::size_t D = config.d_model;
  const std::size_t F = config.ffn_dim();
  for (auto& t : out) {
    const auto ends_with = [&](const std::string& suffix) {
      return t.name.size() >= suffix.size() &&
             t.name.compare(t.name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (t.name == "token_embedding") t = {t.name, config.vocab_size, D};
    else if (t.name == "position_embedding") t = {t.name, config.max_T, D};
    else if (ends_with(".w_q") || ends_with(".w_k") || ends_with(".w_v") || ends_with(".w_o"))
      t = {t.name, D, D};
    else if (ends_with(".w_up")) t = {t.name, D, F};
    else if (ends_with(".w_down")) t = {t.name, F, D};
    else if (ends_with("phi.weight") || ends_with("gate.w_f")) t = {t.name, config.rule.m, config.rule.d};
    else if (ends_with("gate.w_z")) t = {t.name, config.rule.d, config.rule.d};
  }
  return out;
}

template <typename T>
Model<T> convert_mixer(const Model<T>& model, const RuleConfig& target, std::uint64_t seed) {
  if (model.config.mixer != MixerKind::softmax)
    throw ConfigError("convert_mixer expects a softmax-attention model");
  target.validate();
  Model<T> out = model;
  out.config.mixer = MixerKind::rule;
  out.config.rule = target;
  out.config.validate();

  const std::size_t d = target.d;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> small(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform_gate = [&] {
    double u = unit(rng);
    while (u <= 0.0) u = unit(rng);
    return static_cast<T>(logit(u));
  };

  for (auto& layer : out.params.layers) {
    layer.heads.assign(out.config.n_heads, zero_rule_params<T>(target));
    for (std::size_t h = 0; h < out.config.n_heads; ++h) {
      RuleParams<T>& p = layer.heads[h];
      if (p.phi.weight)
        for (auto& e : p.phi.weight->span()) e = static_cast<T>(small(rng));
      // ReLU(W x + 1) starts out as 1 + W x, the same offset elu1 has at the
      // origin; with a zero bias a token maps to the zero vector with
      // probability 2^-m.
      if (p.phi.bias)
        for (auto& e : *p.phi.bias) e = T{1};
      auto& g = p.gate;
      switch (target.rule) {
        case RuleKind::decay: {
          for (auto& e : g.w_z->span()) e = static_cast<T>(small(rng));
          for (auto& e : g.w_f->span()) e = static_cast<T>(small(rng));
          for (auto& e : g.b_z->span()) e = uniform_gate();
          for (auto& e : g.b_f->span()) e = uniform_gate();
          for (std::size_t i = 0; i < d; ++i) {
            const T scale = T{1} - sigmoid((*g.b_z)[i]);
            const std::size_t col = h * d + i;
            for (std::size_t r = 0; r < layer.w_v.rows(); ++r) layer.w_v(r, col) *= scale;
          }
          break;
        }
        case RuleKind::gated:
          *g.b_g = uniform_gate();
          break;
        case RuleKind::delta:
          *g.b_g = static_cast<T>(logit(kDeltaGateInit));
          break;
        case RuleKind::add:
          break;
      }
    }
    if (target.rule == RuleKind::add && !is_positive(target.feature_map))
      for (auto& e : layer.w_v.span()) e *= static_cast<T>(kAddValueScale);
  }
  return out;
}

template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  if (config.mixer == MixerKind::rule) {
    ModelConfig base = config;
    base.mixer = MixerKind::softmax;
    return convert_mixer(build_model<T>(base, seed), config.rule, seed + 1);
  }
  Model<T> model{config, zero_params<T>(config)};
  std::mt19937_64 rng(seed);
  const double proj_std = 0.02;
  const double resid_std = 0.02 / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  auto fill = [&](std::span<T> s, double std) {
    std::normal_distribution<double> dist(0.0, std);
    for (auto& e : s) e = static_cast<T>(dist(rng));
  };
  auto& p = model.params;
  fill(p.token_embedding.span(), proj_std);
  fill(p.position_embedding.span(), 0.01);
  for (auto& L : p.layers) {
    for (auto& e : L.ln1_gain) e = T{1};
    fill(L.w_q.span(), proj_std);
    fill(L.w_k.span(), proj_std);
    fill(L.w_v.span(), proj_std);
    fill(L.w_o.span(), resid_std);
    for (auto& e : L.ln2_gain) e = T{1};
    fill(L.w_up.span(), proj_std);
    fill(L.w_down.span(), resid_std);
  }
  for (auto& e : p.lnf_gain) e = T{1};
  return model;
}

TokenBatch TokenBatch::from_sequences(const std::vector<std::vector<int>>& sequences) {
  TokenBatch b;
  b.batch = sequences.size();
  if (b.batch == 0) return b;
  if (sequences.front().size() < 2) throw ConfigError("sequences need at least two tokens");
  b.length = sequences.front().size() - 1;
  for (const auto& s : sequences) {
    if (s.size() != b.length + 1) throw DimensionMismatch("batch sequences must share a length");
    b.inputs.insert(b.inputs.end(), s.begin(), s.end() - 1);
    b.targets.insert(b.targets.end(), s.begin() + 1, s.end());
  }
  return b;
}

namespace {

template <typename T>
struct LayerCache {
  kernels::LayerNormCache<T> ln1, ln2;
  Matrix<T> a, q, k, v, mixed, c, up, act;
  std::vector<SequenceCache<T>> rule_caches;  // batch x heads
  std::vector<Matrix<T>> probs;               // batch x heads, T x T
};

template <typename T>
struct ForwardCache {
  std::vector<LayerCache<T>> layers;
  kernels::LayerNormCache<T> lnf;
  Matrix<T> final_hidden;
};

template <typename T>
Matrix<T> slice(const Matrix<T>& m, std::size_t row0, std::size_t rows, std::size_t col0,
                std::size_t cols) {
  Matrix<T> out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = m(row0 + r, col0 + c);
  return out;
}

template <typename T>
void scatter(Matrix<T>& dst, std::size_t row0, std::size_t col0, const Matrix<T>& src) {
  for (std::size_t r = 0; r < src.rows(); ++r)
    for (std::size_t c = 0; c < src.cols(); ++c) dst(row0 + r, col0 + c) = src(r, c);
}

template <typename T>
void scatter_add(Matrix<T>& dst, std::size_t row0, std::size_t col0, const Matrix<T>& src) {
  for (std::size_t r = 0; r < src.rows(); ++r)
    for (std::size_t c = 0; c < src.cols(); ++c) dst(row0 + r, col0 + c) += src(r, c);
}

// Runs body(i) for i < n in parallel and rethrows the lowest-index failure.
template <typename Body>
void parallel_guarded(std::size_t n, Body&& body) {
  std::vector<std::exception_ptr> errors(n);
  kernels::for_each_index<Exec::parallel>(n, [&](std::size_t i) {
    try {
      body(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Causal softmax attention over one head; keys visible to query t are
// [t - window + 1, t]. Stores row-wise probabilities when `probs` is set.
template <typename T>
Matrix<T> attention_forward(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                            std::size_t window, Matrix<T>* probs) {
  const std::size_t len = q.rows();
  const std::size_t d = q.cols();
  const T scale = T{1} / std::sqrt(static_cast<T>(d));
  Matrix<T> y(len, d);
  if (probs) *probs = Matrix<T>(len, len);
  std::vector<T> w(len);
  for (std::size_t t = 0; t < len; ++t) {
    const std::size_t first = t + 1 > window ? t + 1 - window : 0;
    const std::size_t count = t + 1 - first;
    for (std::size_t j = first; j <= t; ++j) {
      T acc{0};
      for (std::size_t c = 0; c < d; ++c) acc += q(t, c) * k(j, c);
      w[j - first] = acc * scale;
    }
    softmax_inplace<T>(std::span<T>(w.data(), count));
    auto yr = y.row(t);
    for (std::size_t j = first; j <= t; ++j) {
      const T p = w[j - first];
      if (probs) (*probs)(t, j) = p;
      const auto vr = v.row(j);
      for (std::size_t c = 0; c < d; ++c) yr[c] += p * vr[c];
    }
  }
  return y;
}

template <typename T>
void attention_backward(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                        const Matrix<T>& probs, std::size_t window, const Matrix<T>& dy,
                        Matrix<T>& dq, Matrix<T>& dk, Matrix<T>& dv) {
  const std::size_t len = q.rows();
  const std::size_t d = q.cols();
  const T scale = T{1} / std::sqrt(static_cast<T>(d));
  dq = Matrix<T>(len, d);
  dk = Matrix<T>(len, d);
  dv = Matrix<T>(len, d);
  std::vector<T> dp(len);
  for (std::size_t t = 0; t < len; ++t) {
    const std::size_t first = t + 1 > window ? t + 1 - window : 0;
    T weighted{0};
    for (std::size_t j = first; j <= t; ++j) {
      T acc{0};
      for (std::size_t c = 0; c < d; ++c) acc += dy(t, c) * v(j, c);
      dp[j] = acc;
      weighted += acc * probs(t, j);
      for (std::size_t c = 0; c < d; ++c) dv(j, c) += probs(t, j) * dy(t, c);
    }
    for (std::size_t j = first; j <= t; ++j) {
      const T ds = probs(t, j) * (dp[j] - weighted) * scale;
      for (std::size_t c = 0; c < d; ++c) {
        dq(t, c) += ds * k(j, c);
        dk(j, c) += ds * q(t, c);
      }
    }
  }
}

template <typename T>
std::size_t attention_window(const ModelConfig& c, std::size_t length) {
  return c.mixer == MixerKind::local ? c.window : length;
}

template <typename T>
void mixer_forward(const Model<T>& model, const LayerParams<T>& layer, const Matrix<T>& a,
                   const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                   std::size_t batch, std::size_t length, Matrix<T>& mixed,
                   LayerCache<T>* cache) {
  const ModelConfig& c = model.config;
  const std::size_t H = c.n_heads;
  const std::size_t d = c.head_dim();
  mixed = Matrix<T>(batch * length, c.d_model);
  const std::size_t pairs = batch * H;
  if (cache) {
    if (c.mixer == MixerKind::rule) cache->rule_caches.assign(pairs, {});
    else cache->probs.assign(pairs, {});
  }
  parallel_guarded(pairs, [&](std::size_t p) {
    const std::size_t b = p / H;
    const std::size_t h = p % H;
    const std::size_t row0 = b * length;
    const std::size_t col0 = h * d;
    const Matrix<T> qh = slice(q, row0, length, col0, d);
    const Matrix<T> kh = slice(k, row0, length, col0, d);
    const Matrix<T> vh = slice(v, row0, length, col0, d);
    if (c.mixer == MixerKind::rule) {
      const Matrix<T> xh = slice(a, row0, length, col0, d);
      auto result = scan<T>(c.rule, layer.heads[h], xh, qh, kh, vh);
      scatter(mixed, row0, col0, result.y);
      if (cache) cache->rule_caches[p] = std::move(result.cache);
    } else {
      Matrix<T>* probs = cache ? &cache->probs[p] : nullptr;
      const Matrix<T> y = attention_forward(qh, kh, vh, attention_window<T>(c, length), probs);
      scatter(mixed, row0, col0, y);
    }
  });
}

template <typename T>
Matrix<T> forward_batch(const Model<T>& model, const TokenBatch& batch, ForwardCache<T>* cache) {
  const ModelConfig& c = model.config;
  const auto& P = model.params;
  const std::size_t B = batch.batch;
  const std::size_t len = batch.length;
  const std::size_t N = B * len;
  const std::size_t D = c.d_model;
  if (len == 0 || len > c.max_T)
    throw ConfigError("sequence length " + std::to_string(len) + " outside [1, max_T=" +
                      std::to_string(c.max_T) + "]");
  if (batch.inputs.size() != N) throw DimensionMismatch("batch inputs size");
  for (int tok : batch.targets)
    if (tok >= 0 && static_cast<std::size_t>(tok) >= c.vocab_size)
      throw std::out_of_range("target id " + std::to_string(tok) + " outside vocabulary");

  Matrix<T> h(N, D);
  for (std::size_t n = 0; n < N; ++n) {
    const int tok = batch.inputs[n];
    if (tok < 0 || static_cast<std::size_t>(tok) >= c.vocab_size)
      throw std::out_of_range("token id " + std::to_string(tok) + " outside vocabulary");
    const auto e = P.token_embedding.row(static_cast<std::size_t>(tok));
    const auto pos = P.position_embedding.row(n % len);
    auto hr = h.row(n);
    for (std::size_t i = 0; i < D; ++i) hr[i] = e[i] + pos[i];
  }
  if (cache) cache->layers.assign(c.n_layers, {});

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& L = P.layers[l];
    LayerCache<T> local;
    LayerCache<T>& lc = cache ? cache->layers[l] : local;
    Matrix<T> a, q, k, v, mixed, o, cn, up, act, f;
    kernels::layer_norm(h, L.ln1_gain.span(), L.ln1_bias.span(), a, cache ? &lc.ln1 : nullptr);
    kernels::linear<Exec::parallel, T>(a, L.w_q, {}, q);
    kernels::linear<Exec::parallel, T>(a, L.w_k, {}, k);
    kernels::linear<Exec::parallel, T>(a, L.w_v, {}, v);
    mixer_forward(model, L, a, q, k, v, B, len, mixed, cache ? &lc : nullptr);
    kernels::linear<Exec::parallel, T>(mixed, L.w_o, {}, o);
    for (std::size_t i = 0; i < h.size(); ++i) h.span()[i] += o.span()[i];
    kernels::layer_norm(h, L.ln2_gain.span(), L.ln2_bias.span(), cn, cache ? &lc.ln2 : nullptr);
    kernels::linear<Exec::parallel, T>(cn, L.w_up, L.b_up.span(), up);
    kernels::gelu_forward(up, act);
    kernels::linear<Exec::parallel, T>(act, L.w_down, L.b_down.span(), f);
    for (std::size_t i = 0; i < h.size(); ++i) h.span()[i] += f.span()[i];
    if (cache) {
      lc.a = std::move(a);
      lc.q = std::move(q);
      lc.k = std::move(k);
      lc.v = std::move(v);
      lc.mixed = std::move(mixed);
      lc.c = std::move(cn);
      lc.up = std::move(up);
      lc.act = std::move(act);
    }
  }
  Matrix<T> hf;
  kernels::layer_norm(h, P.lnf_gain.span(), P.lnf_bias.span(), hf, cache ? &cache->lnf : nullptr);
  const Matrix<T> head = kernels::transpose(P.token_embedding);
  Matrix<T> logits;
  kernels::linear<Exec::parallel, T>(hf, head, {}, logits);
  if (cache) cache->final_hidden = std::move(hf);
  return logits;
}

template <typename T>
void add_into(Matrix<T>& dst, const Matrix<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.span()[i] += src.span()[i];
}

template <typename T>
ModelParams<T> backward_batch(const Model<T>& model, const TokenBatch& batch,
                              const ForwardCache<T>& cache, const Matrix<T>& dlogits) {
  const ModelConfig& c = model.config;
  const auto& P = model.params;
  const std::size_t B = batch.batch;
  const std::size_t len = batch.length;
  const std::size_t N = B * len;
  const std::size_t H = c.n_heads;
  const std::size_t d = c.head_dim();
  ModelParams<T> g = zero_params<T>(c);

  Matrix<T> dhf;
  kernels::linear<Exec::parallel, T>(dlogits, P.token_embedding, {}, dhf);
  kernels::linear_weight_grad<Exec::parallel, T>(dlogits, cache.final_hidden, g.token_embedding, {});
  Matrix<T> dh;
  kernels::layer_norm_backward<Exec::parallel, T>(dhf, P.lnf_gain.span(), cache.lnf, dh,
                                                  g.lnf_gain.span(), g.lnf_bias.span());

  for (std::size_t l = c.n_layers; l-- > 0;) {
    const auto& L = P.layers[l];
    auto& G = g.layers[l];
    const auto& lc = cache.layers[l];

    // FFN branch.
    Matrix<T> d_act, d_up, dc, tmp;
    kernels::linear_input_grad<Exec::parallel, T>(dh, L.w_down, d_act);
    kernels::linear_weight_grad<Exec::parallel, T>(lc.act, dh, G.w_down, G.b_down.span());
    kernels::gelu_backward(lc.up, d_act, d_up);
    kernels::linear_input_grad<Exec::parallel, T>(d_up, L.w_up, dc);
    kernels::linear_weight_grad<Exec::parallel, T>(lc.c, d_up, G.w_up, G.b_up.span());
    kernels::layer_norm_backward<Exec::parallel, T>(dc, L.ln2_gain.span(), lc.ln2, tmp,
                                                    G.ln2_gain.span(), G.ln2_bias.span());
    add_into(dh, tmp);

    // Mixer branch.
    Matrix<T> d_mixed;
    kernels::linear_input_grad<Exec::parallel, T>(dh, L.w_o, d_mixed);
    kernels::linear_weight_grad<Exec::parallel, T>(lc.mixed, dh, G.w_o, {});
    Matrix<T> dq(N, c.d_model), dk(N, c.d_model), dv(N, c.d_model), da(N, c.d_model);
    const std::size_t pairs = B * H;
    std::vector<RuleParams<T>> head_grads(c.mixer == MixerKind::rule ? pairs : 0);
    parallel_guarded(pairs, [&](std::size_t p) {
      const std::size_t b = p / H;
      const std::size_t h = p % H;
      const std::size_t row0 = b * len;
      const std::size_t col0 = h * d;
      const Matrix<T> dyh = slice(d_mixed, row0, len, col0, d);
      if (c.mixer == MixerKind::rule) {
        auto bundle = backward_scan<T>(c.rule, L.heads[h], lc.rule_caches[p], dyh);
        scatter(dq, row0, col0, bundle.dq);
        scatter(dk, row0, col0, bundle.dk);
        scatter(dv, row0, col0, bundle.dv);
        scatter(da, row0, col0, bundle.dx);
        head_grads[p] = std::move(bundle.params);
      } else {
        Matrix<T> gq, gk, gv;
        attention_backward(slice(lc.q, row0, len, col0, d), slice(lc.k, row0, len, col0, d),
                           slice(lc.v, row0, len, col0, d), lc.probs[p],
                           attention_window<T>(c, len), dyh, gq, gk, gv);
        scatter(dq, row0, col0, gq);
        scatter(dk, row0, col0, gk);
        scatter(dv, row0, col0, gv);
      }
    });
    if (c.mixer == MixerKind::rule)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t b = 0; b < B; ++b) accumulate(G.heads[h], head_grads[b * H + h]);

    for (const auto* pair : {&dq, &dk, &dv}) {
      const Matrix<T>& w = pair == &dq ? L.w_q : pair == &dk ? L.w_k : L.w_v;
      Matrix<T>& gw = pair == &dq ? G.w_q : pair == &dk ? G.w_k : G.w_v;
      kernels::linear_input_grad<Exec::parallel, T>(*pair, w, tmp);
      add_into(da, tmp);
      kernels::linear_weight_grad<Exec::parallel, T>(lc.a, *pair, gw, {});
    }
    kernels::layer_norm_backward<Exec::parallel, T>(da, L.ln1_gain.span(), lc.ln1, tmp,
                                                    G.ln1_gain.span(), G.ln1_bias.span());
    add_into(dh, tmp);
  }

  for (std::size_t n = 0; n < N; ++n) {
    const auto tok = static_cast<std::size_t>(batch.inputs[n]);
    auto ge = g.token_embedding.row(tok);
    auto gp = g.position_embedding.row(n % len);
    const auto gr = dh.row(n);
    for (std::size_t i = 0; i < c.d_model; ++i) {
      ge[i] += gr[i];
      gp[i] += gr[i];
    }
  }
  return g;
}

TokenBatch single_sequence(std::span<const int> inputs, std::span<const int> targets) {
  TokenBatch b;
  b.batch = 1;
  b.length = inputs.size();
  b.inputs.assign(inputs.begin(), inputs.end());
  if (targets.empty()) b.targets.assign(inputs.size(), -1);
  else b.targets.assign(targets.begin(), targets.end());
  return b;
}

}  // namespace

template <typename T>
Matrix<T> forward_logits(const Model<T>& model, std::span<const int> inputs) {
  return forward_batch<T>(model, single_sequence(inputs, {}), nullptr);
}

template <typename T>
LmOutput<T> forward_lm(const Model<T>& model, std::span<const int> tokens) {
  if (tokens.size() < 2) throw ConfigError("forward_lm needs at least two tokens");
  for (int tok : tokens)
    if (tok < 0 || static_cast<std::size_t>(tok) >= model.config.vocab_size)
      throw std::out_of_range("token id " + std::to_string(tok) + " outside vocabulary");
  const TokenBatch b = single_sequence(tokens.first(tokens.size() - 1), tokens.subspan(1));
  LmOutput<T> out;
  out.logits = forward_batch<T>(model, b, nullptr);
  out.loss = kernels::cross_entropy<Exec::parallel, T>(out.logits, b.targets, nullptr);
  return out;
}

template <typename T>
LossAndGrad<T> loss_and_grad(const Model<T>& model, const TokenBatch& batch) {
  ForwardCache<T> cache;
  const Matrix<T> logits = forward_batch<T>(model, batch, &cache);
  Matrix<T> dlogits;
  LossAndGrad<T> out;
  out.loss = kernels::cross_entropy<Exec::parallel, T>(logits, batch.targets, &dlogits);
  out.grads = backward_batch<T>(model, batch, cache, dlogits);
  return out;
}

template <typename T>
double batch_loss(const Model<T>& model, const TokenBatch& batch,
                  std::vector<double>* per_row_nll) {
  const Matrix<T> logits = forward_batch<T>(model, batch, nullptr);
  return kernels::cross_entropy<Exec::parallel, T>(logits, batch.targets, nullptr, per_row_nll);
}

#define FW_INSTANTIATE(T)                                                                   \
  template struct Model<T>;                                                                 \
  template ModelParams<T> zero_params<T>(const ModelConfig&);                               \
  template Model<T> build_model<T>(const ModelConfig&, std::uint64_t);                      \
  template Model<T> convert_mixer<T>(const Model<T>&, const RuleConfig&, std::uint64_t);    \
  template Matrix<T> forward_logits<T>(const Model<T>&, std::span<const int>);              \
  template LmOutput<T> forward_lm<T>(const Model<T>&, std::span<const int>);                \
  template LossAndGrad<T> loss_and_grad<T>(const Model<T>&, const TokenBatch&);             \
  template double batch_loss<T>(const Model<T>&, const TokenBatch&, std::vector<double>*);

FW_INSTANTIATE(float)
FW_INSTANTIATE(double)
#undef FW_INSTANTIATE

}  // namespace fw
