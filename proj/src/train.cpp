#include "fw/train.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include <json.hpp>

#include "fw/config_io.hpp"

namespace fw {

std::string_view to_string(Schedule schedule) {
  return schedule == Schedule::constant ? "constant" : "cosine";
}

Schedule parse_schedule(std::string_view name) {
  if (name == "constant") return Schedule::constant;
  if (name == "cosine") return Schedule::cosine;
  throw ConfigError("unknown schedule '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (batch_size == 0 || seq_len == 0) throw ConfigError("batch_size and seq_len must be >= 1");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
  if (warmup_steps > steps) throw ConfigError("warmup_steps must not exceed steps");
  if (!(lr >= 0.0) || !(min_lr >= 0.0)) throw ConfigError("learning rates must be >= 0");
  if (eval_every == 0 || log_every == 0) throw ConfigError("eval_every and log_every must be >= 1");
}

TrainConfig train_preset(std::string_view name) {
  TrainConfig c;
  if (name == "pile-appendix-a") {
    c.batch_size = 32;
    c.steps = 100000;
    c.lr = 6e-4;
    c.warmup_steps = 0;
    c.schedule = Schedule::constant;
    c.clip_norm = 1.0;
    c.eval_every = 4000;
  } else if (name == "wt103-appendix-b") {
    c.batch_size = 26;
    c.steps = 100000;
    c.lr = 1e-4;
    c.warmup_steps = 4000;
    c.schedule = Schedule::cosine;
    c.min_lr = 2e-6;
    c.clip_norm = 0.1;
    c.eval_every = 4000;
  } else if (name != "desk") {
    throw ConfigError("unknown training preset '" + std::string(name) + "'");
  }
  return c;
}

std::vector<std::string> train_preset_names() { return {"desk", "pile-appendix-a", "wt103-appendix-b"}; }

bool apply_train_key(TrainConfig& c, const std::string& key, const std::string& value) {
  if (key == "batch_size") c.batch_size = parse_count(key, value);
  else if (key == "seq_len") c.seq_len = parse_count(key, value);
  else if (key == "steps") c.steps = parse_count(key, value);
  else if (key == "lr") c.lr = parse_real(key, value);
  else if (key == "warmup_steps") c.warmup_steps = parse_count(key, value);
  else if (key == "schedule") c.schedule = parse_schedule(value);
  else if (key == "min_lr") c.min_lr = parse_real(key, value);
  else if (key == "clip_norm") c.clip_norm = parse_real(key, value);
  else if (key == "eval_every") c.eval_every = parse_count(key, value);
  else if (key == "log_every") c.log_every = parse_count(key, value);
  else if (key == "eval_tokens") c.eval_tokens = parse_count(key, value);
  else return false;
  return true;
}

void write_train_config(std::ostream& out, const TrainConfig& c) {
  const auto precision = out.precision(std::numeric_limits<double>::max_digits10);
  out << "batch_size=" << c.batch_size << '\n'
      << "seq_len=" << c.seq_len << '\n'
      << "steps=" << c.steps << '\n'
      << "lr=" << c.lr << '\n'
      << "warmup_steps=" << c.warmup_steps << '\n'
      << "schedule=" << to_string(c.schedule) << '\n'
      << "min_lr=" << c.min_lr << '\n'
      << "clip_norm=" << c.clip_norm << '\n'
      << "eval_every=" << c.eval_every << '\n'
      << "log_every=" << c.log_every << '\n'
      << "eval_tokens=" << c.eval_tokens << '\n';
  out.precision(precision);
}

double learning_rate(const TrainConfig& c, std::size_t step) {
  if (step < c.warmup_steps)
    return c.lr * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  if (c.schedule == Schedule::constant) return c.lr;
  const std::size_t span = c.steps > c.warmup_steps ? c.steps - c.warmup_steps : 1;
  const double progress =
      std::min(1.0, static_cast<double>(step - c.warmup_steps) / static_cast<double>(span));
  return c.min_lr + (c.lr - c.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
std::vector<std::span<T>> tensor_spans(ModelParams<T>& params) {
  std::vector<std::span<T>> out;
  for_each_tensor(params, [&](const std::string&, std::span<T> s) { out.push_back(s); });
  return out;
}

template <typename T>
double global_norm(ModelParams<T>& grads) {
  double sum = 0.0;
  for (auto s : tensor_spans(grads))
    for (T g : s) sum += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(sum);
}

template <typename T>
double clip_global_norm(ModelParams<T>& grads, double clip_norm) {
  const double norm = global_norm(grads);
  if (std::isfinite(norm) && norm > clip_norm) {
    const T scale = static_cast<T>(clip_norm / norm);
    for (auto s : tensor_spans(grads))
      for (T& g : s) g *= scale;
  }
  return norm;
}

template <typename T>
AdamState<T> init_adam(const ModelConfig& config) {
  return {zero_params<T>(config), zero_params<T>(config), 0};
}

template <typename T>
void adam_update(ModelParams<T>& params, ModelParams<T>& grads, AdamState<T>& state, double lr,
                 const AdamHyper& hyper) {
  ++state.t;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.t));
  auto p = tensor_spans(params);
  auto g = tensor_spans(grads);
  auto m = tensor_spans(state.m);
  auto v = tensor_spans(state.v);
  if (p.size() != g.size() || p.size() != m.size()) throw DimensionMismatch("adam: structure");
  const T b1 = static_cast<T>(hyper.beta1);
  const T b2 = static_cast<T>(hyper.beta2);
  const T step = static_cast<T>(lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(hyper.eps);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].size() != g[i].size()) throw DimensionMismatch("adam: tensor size");
    for (std::size_t j = 0; j < p[i].size(); ++j) {
      const T grad = g[i][j];
      m[i][j] = b1 * m[i][j] + (T{1} - b1) * grad;
      v[i][j] = b2 * v[i][j] + (T{1} - b2) * grad * grad;
      p[i][j] -= step * m[i][j] / (std::sqrt(v[i][j] * inv_c2) + eps);
    }
  }
}

void TrainReport::write_jsonl(std::ostream& out, bool with_timing) const {
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["split"] = r.split;
    j["loss"] = r.loss;
    j["ppl"] = r.ppl;
    j["lr"] = r.lr;
    if (with_timing) j["wall_ms"] = r.wall_ms;
    out << j.dump() << '\n';
  }
  nlohmann::ordered_json summary;
  summary["split"] = "summary";
  summary["best_valid_loss"] = best_valid_loss;
  summary["best_valid_ppl"] = best_valid_ppl;
  summary["diverged"] = diverged;
  if (diverged_step) summary["diverged_step"] = *diverged_step;
  if (diverged) summary["reason"] = divergence_reason;
  if (with_timing) summary["wall_ms_per_step"] = wall_ms_per_step;
  out << summary.dump() << '\n';
}

TokenBatch sample_batch(std::span<const int> tokens, std::size_t batch_size, std::size_t seq_len,
                        std::mt19937_64& rng) {
  if (tokens.size() < seq_len + 1)
    throw ConfigError("split of " + std::to_string(tokens.size()) + " tokens is shorter than seq_len + 1");
  std::uniform_int_distribution<std::size_t> offset(0, tokens.size() - seq_len - 1);
  std::vector<std::vector<int>> rows;
  rows.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::size_t o = offset(rng);
    rows.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(o),
                      tokens.begin() + static_cast<std::ptrdiff_t>(o + seq_len + 1));
  }
  return TokenBatch::from_sequences(rows);
}

namespace {

struct Window {
  std::size_t start;  // first input position
  std::size_t first_target;
  std::size_t end;  // one past the last target position
};

std::vector<Window> eval_windows(std::size_t n, std::size_t context, std::size_t window) {
  std::vector<Window> out;
  const std::size_t stride = window - context;
  for (std::size_t pos = 1; pos < n; pos += stride) {
    const std::size_t end = std::min(pos + stride, n);
    const std::size_t start = pos - 1 > context ? pos - 1 - context : 0;
    out.push_back({start, pos, end});
  }
  return out;
}

}  // namespace

template <typename T>
double evaluate_loss(const Model<T>& model, std::span<const int> tokens, std::size_t context,
                     std::size_t window, std::size_t batch) {
  if (tokens.size() < 2) throw ConfigError("evaluation split is empty");
  if (window == 0 || window > model.config.max_T) window = model.config.max_T;
  if (context >= window)
    throw ConfigError("context (" + std::to_string(context) + ") must be below the window (" +
                      std::to_string(window) + ")");
  if (batch == 0) batch = 1;
  const auto windows = eval_windows(tokens.size(), context, window);
  double total = 0.0;
  std::size_t scored = 0;
  std::size_t i = 0;
  while (i < windows.size()) {
    // Group consecutive windows of equal input length.
    const std::size_t len = windows[i].end - 1 - windows[i].start;
    std::size_t j = i;
    TokenBatch b;
    b.length = len;
    while (j < windows.size() && j - i < batch && windows[j].end - 1 - windows[j].start == len) {
      const Window& w = windows[j];
      for (std::size_t p = w.start; p + 1 < w.end; ++p) {
        b.inputs.push_back(tokens[p]);
        b.targets.push_back(p + 1 >= w.first_target ? tokens[p + 1] : -1);
      }
      ++j;
    }
    b.batch = j - i;
    std::vector<double> nll;
    batch_loss(model, b, &nll);
    for (std::size_t r = 0; r < nll.size(); ++r) {
      if (b.targets[r] < 0) continue;
      total += nll[r];
      ++scored;
    }
    i = j;
  }
  return total / static_cast<double>(scored);
}

template <typename T>
double evaluate_perplexity(const Model<T>& model, std::span<const int> tokens,
                           std::size_t context, std::size_t window, std::size_t batch) {
  return std::exp(evaluate_loss(model, tokens, context, window, batch));
}

template <typename T>
TrainReport train(Model<T>& model, const CorpusSplits& data, const TrainConfig& config) {
  config.validate();
  if (data.train.empty() || data.valid.empty()) throw ConfigError("train and valid splits must be non-empty");
  if (config.seq_len > model.config.max_T)
    throw ConfigError("seq_len exceeds the model's max_T");
  using clock = std::chrono::steady_clock;
  TrainReport report;
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    0x7261696eu};
  std::mt19937_64 rng(seq);
  AdamState<T> adam = init_adam<T>(model.config);
  const std::span<const int> valid(data.valid.data(),
                                   config.eval_tokens == 0 ? data.valid.size()
                                                           : std::min(config.eval_tokens, data.valid.size()));
  const std::size_t eval_window = config.seq_len;

  const auto run_start = clock::now();
  auto last = run_start;
  auto fail = [&](std::size_t step, std::string reason) {
    report.diverged = true;
    report.diverged_step = step;
    report.divergence_reason = std::move(reason);
  };

  std::size_t completed = 0;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const double lr = learning_rate(config, step);
    const TokenBatch batch = sample_batch(data.train, config.batch_size, config.seq_len, rng);
    LossAndGrad<T> lg;
    try {
      lg = loss_and_grad(model, batch);
    } catch (const NumericalFault& fault) {
      fail(step, fault.what());
      break;
    }
    if (!std::isfinite(lg.loss)) {
      fail(step, "non-finite training loss");
      break;
    }
    const double norm = clip_global_norm(lg.grads, config.clip_norm);
    if (!std::isfinite(norm)) {
      fail(step, "non-finite gradient norm");
      break;
    }
    adam_update(model.params, lg.grads, adam, lr);
    report.train_losses.push_back(lg.loss);
    completed = step + 1;

    const auto now = clock::now();
    if (completed % config.log_every == 0 || completed == config.steps) {
      report.records.push_back({completed, "train", lg.loss, std::exp(lg.loss), lr,
                                std::chrono::duration<double, std::milli>(now - last).count()});
    }
    if (completed % config.eval_every == 0 || completed == config.steps) {
      double loss = 0.0;
      try {
        loss = evaluate_loss(model, valid, 0, eval_window);
      } catch (const NumericalFault& fault) {
        fail(completed, fault.what());
        break;
      }
      const auto after = clock::now();
      report.records.push_back({completed, "valid", loss, std::exp(loss), lr,
                                std::chrono::duration<double, std::milli>(after - now).count()});
      if (!std::isfinite(loss)) {
        fail(completed, "non-finite validation loss");
        break;
      }
      if (loss < report.best_valid_loss) {
        report.best_valid_loss = loss;
        report.best_valid_ppl = std::exp(loss);
      }
    }
    last = clock::now();
  }
  const double total_ms = std::chrono::duration<double, std::milli>(clock::now() - run_start).count();
  report.wall_ms_per_step = completed == 0 ? 0.0 : total_ms / static_cast<double>(completed);
  return report;
}

#define FW_INSTANTIATE(T)                                                                          \
  template std::vector<std::span<T>> tensor_spans<T>(ModelParams<T>&);                             \
  template double global_norm<T>(ModelParams<T>&);                                                 \
  template double clip_global_norm<T>(ModelParams<T>&, double);                                    \
  template AdamState<T> init_adam<T>(const ModelConfig&);                                          \
  template void adam_update<T>(ModelParams<T>&, ModelParams<T>&, AdamState<T>&, double,            \
                               const AdamHyper&);                                                  \
  template TrainReport train<T>(Model<T>&, const CorpusSplits&, const TrainConfig&);               \
  template double evaluate_loss<T>(const Model<T>&, std::span<const int>, std::size_t, std::size_t, \
                                   std::size_t);                                                   \
  template double evaluate_perplexity<T>(const Model<T>&, std::span<const int>, std::size_t,       \
                                         std::size_t, std::size_t);

FW_INSTANTIATE(float)
FW_INSTANTIATE(double)
#undef FW_INSTANTIATE

}  // namespace fw
