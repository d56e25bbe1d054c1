// Acceptance run: one PASS/FAIL line per criterion. Each criterion also
// returns a serialized record of its outputs (timings excluded) so the
// determinism check can compare two complete runs.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>

#include "fw/bench.hpp"
#include "fw/corpus.hpp"
#include "fw/generation.hpp"
#include "fw/gradients.hpp"
#include "fw/kernels.hpp"
#include "fw/model.hpp"
#include "fw/presets.hpp"
#include "fw/reference_attention.hpp"
#include "fw/rules.hpp"
#include "fw/train.hpp"

using namespace fw;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;      // human-readable summary line
  std::ostringstream log;  // serialized outputs, compared by criterion 10

  void fail(const std::string& why) {
    if (pass) detail = why;
    pass = false;
  }
};

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string fixed(double x, int digits) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

template <typename T>
Matrix<T> uniform(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix<T> m(r, c);
  for (auto& e : m.span()) e = static_cast<T>(u(rng));
  return m;
}

template <typename T>
Vector<T> row_of(const Matrix<T>& m, std::size_t r) {
  return Vector<T>(std::vector<T>(m.row(r).begin(), m.row(r).end()));
}

template <typename T>
double max_abs_diff(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return worst;
}

double elapsed_s(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

// 1. Recurrent add rule with attention normalization against the quadratic
// double loop. elu+1 features are computed here, not by the library.
void kernelization(Outcome& out) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t T = 32, d = 8;
  const RuleConfig c{RuleKind::add, FeatureMapKind::elu1, true, false, d, d};
  const auto params = zero_rule_params<double>(c);
  auto elu1 = [](const Matrix<double>& a) {
    Matrix<double> f(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double x = a.span()[i];
      f.span()[i] = x > 0 ? x + 1.0 : std::exp(x);
    }
    return f;
  };
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 rng(seed);
    const auto x = uniform<double>(T, d, rng, -1, 1);
    const auto q = uniform<double>(T, d, rng, -2, 2);
    const auto k = uniform<double>(T, d, rng, -2, 2);
    const auto v = uniform<double>(T, d, rng, -1, 1);
    const auto rec = scan(c, params, x, q, k, v).y;
    const auto direct = kernel_attention_direct<double>(elu1(k), elu1(q), v, 1e-12);
    const double diff = max_abs_diff<double>(rec.span(), direct.span());
    out.log << "seed " << seed << " max_abs_diff " << num(diff) << '\n';
    worst = std::max(worst, diff);
  }
  const double secs = elapsed_s(start);
  out.detail = "max |scan - direct| = " + num(worst) + " over 10 seeds";
  if (!(worst <= 1e-10)) out.fail("max |scan - direct| = " + num(worst) + " > 1e-10");
  if (secs >= 1.0) out.fail("runtime " + num(secs) + " s >= 1 s");
}

template <typename T>
Matrix<T> loop_of_steps(const RuleConfig& c, const RuleParams<T>& p, const Matrix<T>& x,
                        const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v) {
  FastWeightState<T> s = init_state<T>(c);
  Matrix<T> y(x.rows(), c.d);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto r = step(c, p, s, row_of(x, t), row_of(q, t), row_of(k, t), row_of(v, t));
    s = std::move(r.state);
    std::copy(r.y.begin(), r.y.end(), y.row(t).begin());
  }
  return y;
}

template <typename T>
double scan_vs_steps(const RuleConfig& c, std::size_t len, std::uint64_t seed) {
  const auto p = random_rule_params<T>(c, seed);
  std::mt19937_64 rng(seed * 1000 + len);
  // Positive keys and queries keep normalized configurations clear of a zero denominator.
  const bool positive = (c.attention_norm || c.sum_norm) && !is_positive(c.feature_map);
  const auto x = uniform<T>(len, c.d, rng, -1, 1);
  const auto q = uniform<T>(len, c.d, rng, positive ? 0.1 : -1, 1);
  const auto k = uniform<T>(len, c.d, rng, positive ? 0.1 : -1, 1);
  const auto v = uniform<T>(len, c.d, rng, -1, 1);
  const auto a = scan(c, p, x, q, k, v).y;
  const auto b = loop_of_steps(c, p, x, q, k, v);
  return max_abs_diff<T>(a.span(), b.span());
}

// 2. scan == repeated step for every legal configuration.
void step_scan(Outcome& out) {
  const auto start = std::chrono::steady_clock::now();
  double worst_d = 0, worst_f = 0;
  std::size_t cases = 0;
  for (const auto& c : legal_rule_configs(8, 4))
    for (std::size_t len : {1u, 7u, 64u}) {
      const double dd = scan_vs_steps<double>(c, len, 17);
      const double df = scan_vs_steps<float>(c, len, 17);
      out.log << c.describe() << " T=" << len << ' ' << num(dd) << ' ' << num(df) << '\n';
      worst_d = std::max(worst_d, dd);
      worst_f = std::max(worst_f, df);
      if (!(dd <= 1e-12)) out.fail(c.describe() + " T=" + std::to_string(len) + ": double diff " + num(dd));
      if (!(df <= 1e-5)) out.fail(c.describe() + " T=" + std::to_string(len) + ": float diff " + num(df));
      ++cases;
    }
  const double secs = elapsed_s(start);
  if (out.pass)
    out.detail = std::to_string(cases) + " cases, max diff double " + num(worst_d) + ", float " + num(worst_f);
  if (secs >= 5.0) out.fail("runtime " + num(secs) + " s >= 5 s");
}

// 3. Gate limits reduce to the simpler rules exactly.
void gate_limits(Outcome& out) {
  const std::size_t d = 4, m = 4, T = 12;
  std::mt19937_64 rng(3);
  const auto x = uniform<double>(T, d, rng, -1, 1);
  const auto q = uniform<double>(T, d, rng, -1, 1);
  const auto k = uniform<double>(T, d, rng, -1, 1);
  const auto v = uniform<double>(T, d, rng, -1, 1);

  // decay with G = 1 everywhere against add, same feature map.
  const RuleConfig dec{RuleKind::decay, FeatureMapKind::linear, false, false, d, m};
  const RuleConfig add{RuleKind::add, FeatureMapKind::linear, false, false, d, m};
  auto pd = random_rule_params<double>(dec, 5);
  auto pa = zero_rule_params<double>(add);
  pa.phi = pd.phi;
  const Matrix<double> ones(d, m, 1.0);
  {
    auto sd = init_state<double>(dec);
    auto sa = init_state<double>(add);
    bool same = true;
    for (std::size_t t = 0; t < T; ++t) {
      auto rd = step_with_gate<double>(dec, pd, sd, row_of(x, t), row_of(q, t), row_of(k, t), row_of(v, t), ones);
      auto ra = step(add, pa, sa, row_of(x, t), row_of(q, t), row_of(k, t), row_of(v, t));
      same = same && rd.state.S == ra.state.S && rd.y == ra.y;
      sd = std::move(rd.state);
      sa = std::move(ra.state);
    }
    out.log << "decay G=1 == add: " << same << '\n';
    if (!same) out.fail("decay with G = 1 differs from add");
  }

  // gated: g = 1 freezes the state, g = 0 overwrites it with v k~^T.
  for (bool norm : {false, true}) {
    const RuleConfig gc{RuleKind::gated, FeatureMapKind::elu1, norm, false, d, d};
    const auto pg = random_rule_params<double>(gc, 6);
    auto s = init_state<double>(gc);
    for (std::size_t t = 0; t + 1 < T; ++t)
      s = step(gc, pg, s, row_of(x, t), row_of(q, t), row_of(k, t), row_of(v, t)).state;
    const std::size_t t = T - 1;
    const auto frozen = step_with_gate<double>(gc, pg, s, row_of(x, t), row_of(q, t), row_of(k, t), row_of(v, t), 1.0);
    const auto written = step_with_gate<double>(gc, pg, s, row_of(x, t), row_of(q, t), row_of(k, t), row_of(v, t), 0.0);
    const auto kt = apply_feature_map(gc.feature_map, pg.phi, row_of(k, t));
    Matrix<double> outer(d, d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) outer(i, j) = v(t, i) * kt[j];
    bool ok = frozen.state == s && written.state.S == outer;
    if (norm) ok = ok && *written.state.z == kt;
    out.log << "gated norm=" << norm << " freeze/overwrite: " << ok << '\n';
    if (!ok) out.fail(std::string("gated forced gate limits fail (norm=") + (norm ? "on" : "off") + ")");
  }

  // delta: g = 1 with a unit-norm key stores v exactly at that key.
  {
    const RuleConfig dc{RuleKind::delta, FeatureMapKind::identity, false, false, d, d};
    const auto p = random_rule_params<double>(dc, 7);
    double worst = 0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
      auto s = init_state<double>(dc);
      s.S = uniform<double>(d, d, rng, -1, 1);
      auto key = row_of(uniform<double>(1, d, rng, -1, 1), 0);
      double n = 0;
      for (double e : key) n += e * e;
      for (double& e : key) e /= std::sqrt(n);
      const auto val = row_of(uniform<double>(1, d, rng, -1, 1), 0);
      const auto xin = row_of(uniform<double>(1, d, rng, -1, 1), 0);
      const auto r = step_with_gate<double>(dc, p, s, xin, key, key, val, 1.0);
      worst = std::max(worst, max_abs_diff<double>(r.y.span(), val.span()));
    }
    out.log << "delta retrieval max diff " << num(worst) << '\n';
    if (!(worst <= 1e-12)) out.fail("delta g = 1 retrieval error " + num(worst) + " > 1e-12");
    if (out.pass) out.detail = "decay G=1 == add, gated freeze/overwrite exact, delta retrieval " + num(worst);
  }
}

// 4. Analytic backward against central differences.
void gradients(Outcome& out) {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0;
  std::string worst_cfg;
  std::size_t checks = 0;
  for (const auto& c : legal_rule_configs(4, 3))
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const FdReport r = gradcheck_rule(c, seed, 8, 1e-5);
      out.log << c.describe() << " seed " << seed << ' ' << num(r.max_rel_err) << '\n';
      if (!(r.max_rel_err <= worst)) {
        worst = r.max_rel_err;
        worst_cfg = c.describe();
      }
      ++checks;
    }
  const double secs = elapsed_s(start);
  out.detail = std::to_string(checks) + " checks, max rel err " + num(worst) + " (" + worst_cfg + ")";
  if (!(worst <= 1e-5)) out.fail("max rel err " + num(worst) + " > 1e-5 (" + worst_cfg + ")");
  if (secs >= 60.0) out.fail("runtime " + num(secs) + " s >= 60 s");
}

// 5. Per-token latency and live memory from T = 256 to T = 4096.
void inference_scaling(Outcome& out) {
  const auto start = std::chrono::steady_clock::now();
  const BenchShape shape;
  const std::vector<std::string> mixers{"decay", "delta", "softmax"};
  const auto records = bench_generation(default_bench_factory(shape, 1), mixers, {256, 4096}, 7, 2, 1);
  std::map<std::string, std::map<std::size_t, BenchRecord>> by;
  for (const auto& r : records) by[r.mixer][r.seq_len] = r;
  std::ostringstream detail;
  for (const auto& mixer : mixers) {
    const auto& a = by[mixer][256];
    const auto& b = by[mixer][4096];
    const double ratio = b.per_token_latency_s / a.per_token_latency_s;
    const double bytes_ratio = static_cast<double>(b.live_bytes) / static_cast<double>(a.live_bytes);
    out.log << mixer << " bytes " << a.live_bytes << ' ' << b.live_bytes << '\n';
    detail << mixer << " latency x" << fixed(ratio, 2) << " bytes x" << bytes_ratio << "; ";
    if (mixer == "softmax") {
      if (!(ratio >= 4.0)) out.fail("softmax latency ratio " + num(ratio) + " < 4");
      if (b.live_bytes != 16 * a.live_bytes) out.fail("softmax KV bytes do not scale 16x");
    } else {
      if (!(ratio <= 1.5)) out.fail(mixer + " latency ratio " + num(ratio) + " > 1.5");
      if (a.live_bytes != b.live_bytes) out.fail(mixer + " live bytes change with T");
    }
  }
  const double secs = elapsed_s(start);
  if (out.pass) out.detail = detail.str() + fixed(secs, 0) + " s";
  if (secs >= 300.0) out.fail("runtime " + num(secs) + " s >= 300 s");
}

struct MixerCase {
  const char* name;
  MixerKind mixer;
  RuleKind rule;
  FeatureMapKind map;
  bool norm;
};

const MixerCase kMixers[] = {
    {"softmax", MixerKind::softmax, RuleKind::add, FeatureMapKind::relu, true},
    {"local", MixerKind::local, RuleKind::add, FeatureMapKind::relu, true},
    {"add", MixerKind::rule, RuleKind::add, FeatureMapKind::relu, true},
    {"gated", MixerKind::rule, RuleKind::gated, FeatureMapKind::relu, true},
    {"delta", MixerKind::rule, RuleKind::delta, FeatureMapKind::relu, false},
    {"decay", MixerKind::rule, RuleKind::decay, FeatureMapKind::linear, false},
};

ModelConfig small_model(const MixerCase& mc) {
  ModelConfig c;
  c.d_model = 32;
  c.n_heads = 2;
  c.n_layers = 2;
  c.ffn_mult = 2;
  c.max_T = 64;
  c.mixer = mc.mixer;
  c.window = 6;
  c.rule = {mc.rule, mc.map, mc.norm, mc.rule == RuleKind::delta, 16,
            preserves_dim(mc.map) ? std::size_t{16} : std::size_t{8}};
  return c;
}

template <typename T>
double generation_gap(const Model<T>& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<int> prompt(5);
  for (auto& t : prompt) t = byte(rng);
  const auto res = generate(model, std::span<const int>(prompt), 32, Sampling{});
  std::vector<int> seq = prompt;
  seq.insert(seq.end(), res.tokens.begin(), res.tokens.end());
  seq.pop_back();
  const auto batch = forward_logits(model, seq);
  double worst = 0;
  // Only the 32 generated positions; the prompt logits come for free.
  for (std::size_t t = prompt.size() - 1; t < seq.size(); ++t)
    worst = std::max(worst, max_abs_diff<T>(res.step_logits[t].span(), batch.row(t)));
  return worst;
}

// 6. Greedy decoding logits equal teacher-forced logits.
void generation(Outcome& out) {
  std::ostringstream detail;
  for (const auto& mc : kMixers) {
    const auto cfg = small_model(mc);
    const double gf = generation_gap(build_model<float>(cfg, 3), 4);
    const double gd = generation_gap(build_model<double>(cfg, 3), 4);
    out.log << mc.name << ' ' << num(gf) << ' ' << num(gd) << '\n';
    detail << mc.name << ' ' << num(gf) << '/' << num(gd) << "; ";
    if (!(gf <= 1e-4)) out.fail(std::string(mc.name) + " float gap " + num(gf));
    if (!(gd <= 1e-10)) out.fail(std::string(mc.name) + " double gap " + num(gd));
  }
  if (out.pass) out.detail = "float/double gaps: " + detail.str();
}

// 7. Conversion keeps the forward pass finite and initializes as documented.
void conversion(Outcome& out) {
  ModelConfig base = small_model(kMixers[0]);
  const auto soft = build_model<double>(base, 20);
  const auto softf = build_model<float>(base, 20);
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<int> tokens(64);
  for (auto& t : tokens) t = byte(rng);
  std::size_t targets = 0;
  for (const auto& target : legal_rule_configs(16, 8)) {
    ++targets;
    // The rule scan throws on any non-finite state or output, so a clean
    // return plus finite logits means every activation was finite.
    auto finite_logits = [&](const auto& model) {
      try {
        const auto logits = forward_logits(model, tokens);
        return std::all_of(logits.span().begin(), logits.span().end(), [](auto e) { return std::isfinite(e); });
      } catch (const NumericalFault&) {
        return false;
      }
    };
    const bool ok = finite_logits(convert_mixer(soft, target, 22)) && finite_logits(convert_mixer(softf, target, 22));
    out.log << target.describe() << " finite " << ok << '\n';
    if (!ok) out.fail("non-finite forward after conversion to " + target.describe());
  }

  double gate_err = 0;
  bool scaling_exact = true;
  for (auto rule : {RuleKind::add, RuleKind::gated, RuleKind::delta, RuleKind::decay})
    for (auto map : {FeatureMapKind::identity, FeatureMapKind::linear, FeatureMapKind::relu}) {
      const RuleConfig target{rule, map, false, rule == RuleKind::delta, 16, preserves_dim(map) ? 16u : 8u};
      const auto conv = convert_mixer(soft, target, 23);
      for (std::size_t l = 0; l < base.n_layers; ++l)
        for (std::size_t h = 0; h < base.n_heads; ++h) {
          const auto& g = conv.params.layers[l].heads[h].gate;
          if (rule == RuleKind::delta) gate_err = std::max(gate_err, std::abs(1.0 / (1.0 + std::exp(-*g.b_g)) - 0.007));
          for (std::size_t i = 0; i < 16; ++i) {
            double scale = 1.0;
            if (rule == RuleKind::decay) scale = 1.0 - sigmoid((*g.b_z)[i]);
            if (rule == RuleKind::add && !is_positive(map)) scale = 1.0 / 512.0;
            for (std::size_t r = 0; r < base.d_model; ++r)
              scaling_exact = scaling_exact && conv.params.layers[l].w_v(r, h * 16 + i) ==
                                                   soft.params.layers[l].w_v(r, h * 16 + i) * scale;
          }
        }
    }
  out.log << "delta gate err " << num(gate_err) << " w_v exact " << scaling_exact << '\n';
  if (!(gate_err <= 1e-9)) out.fail("sigmoid(b_g) off 0.007 by " + num(gate_err));
  if (!scaling_exact) out.fail("W_v rescaling not exact");
  if (out.pass)
    out.detail = std::to_string(targets) + " targets finite, |sigmoid(b_g) - 0.007| = " + num(gate_err) +
                 ", W_v rescaling exact";
}

// Desk-scale training setup shared by criterion 8.
ExperimentSpec trainability_spec(RuleKind rule, std::size_t m, std::uint64_t seed) {
  ExperimentSpec s;
  s.model.d_model = 64;
  s.model.n_heads = 2;
  s.model.n_layers = 2;
  s.model.ffn_mult = 4;
  s.model.max_T = 64;
  s.model.mixer = MixerKind::rule;
  s.model.rule = {rule, FeatureMapKind::linear, false, false, 32, m};
  s.train.batch_size = 8;
  s.train.seq_len = 64;
  s.train.steps = 2000;
  s.train.lr = 3e-3;
  s.train.warmup_steps = 100;
  s.train.schedule = Schedule::cosine;
  s.train.min_lr = 1e-4;
  s.train.eval_every = 200;
  s.train.eval_tokens = 8192;
  s.train.seed = seed;
  return s;
}

const CorpusSplits& corpus() {
  static const CorpusSplits c = load_corpus(default_corpus_path(), {0.9, 0.05, 0.05}, 0);
  return c;
}

// 8. decay <= add at m = 4, and decay m = 32 < decay m = 4, on mean best
// validation loss over three seeds.
void trainability(Outcome& out) {
  const auto start = std::chrono::steady_clock::now();
  struct Arm {
    const char* name;
    RuleKind rule;
    std::size_t m;
    double mean = 0;
  };
  Arm arms[] = {{"add-m4", RuleKind::add, 4}, {"decay-m4", RuleKind::decay, 4}, {"decay-m32", RuleKind::decay, 32}};
  for (auto& arm : arms) {
    std::string per_seed;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      auto spec = trainability_spec(arm.rule, arm.m, seed);
      auto model = build_model<float>(spec.model, seed);
      const auto report = train(model, corpus(), spec.train);
      const double loss = report.diverged ? std::numeric_limits<double>::infinity() : report.best_valid_loss;
      out.log << arm.name << " seed " << seed << " best_valid_loss " << num(loss)
              << (report.diverged ? " DIVERGED " + report.divergence_reason : std::string()) << '\n';
      per_seed += (per_seed.empty() ? "" : ", ") + fixed(loss, 4);
      arm.mean += loss / 3.0;
    }
    std::printf("  criterion 8: %-9s per-seed best valid loss [%s], mean %.4f\n", arm.name, per_seed.c_str(),
                arm.mean);
    std::fflush(stdout);
  }
  const double secs = elapsed_s(start);
  out.detail = "mean best valid loss add-m4 " + fixed(arms[0].mean, 4) + ", decay-m4 " +
               fixed(arms[1].mean, 4) + ", decay-m32 " +
               fixed(arms[2].mean, 4) + "; " + fixed(secs, 0) + " s";
  if (!(arms[1].mean <= arms[0].mean)) out.fail("decay m=4 mean loss above add m=4: " + out.detail);
  if (!(arms[2].mean < arms[1].mean)) out.fail("decay m=32 mean loss not below decay m=4: " + out.detail);
  if (secs > 1800.0) out.fail("runtime " + num(secs) + " s > 30 min");
}

// 9. The 4 x 3 ablation grid, at a size that only exercises its shape.
void ablation_shape(Outcome& out) {
  auto shrink = [](ExperimentSpec& s) {
    s.model.d_model = 32;
    s.model.n_heads = 2;
    s.model.n_layers = 1;
    s.model.max_T = 32;
    s.model.rule.d = 16;
    if (!preserves_dim(s.model.rule.feature_map)) s.model.rule.m = 4;
    s.train.batch_size = 4;
    s.train.seq_len = 32;
    s.train.steps = 20;
    s.train.warmup_steps = 5;
    s.train.lr = 1e-3;
    s.train.eval_every = 20;
    s.train.eval_tokens = 1024;
  };
  const auto names = table1_preset_names();
  const auto grid = run_ablation_grid(corpus(), names, 1, shrink);
  std::ostringstream csv, md;
  write_ablation_csv(csv, grid);
  write_ablation_markdown(md, grid);
  out.log << csv.str() << md.str();

  std::map<std::string, std::map<std::string, std::string>> cells;
  for (const auto& o : grid) cells[o.rule][o.column] = o.status;
  std::size_t filled = 0;
  for (const char* rule : {"add", "gated", "delta", "decay"})
    for (const char* col : {"baseline", "norm-off", "phi-off"}) {
      const auto it = cells[rule].find(col);
      if (it == cells[rule].end()) {
        out.fail(std::string("missing cell ") + rule + "/" + col);
        continue;
      }
      const bool na_cell = std::string(rule) == "decay" && std::string(col) == "baseline";
      if (na_cell != (it->second == "N/A")) out.fail(std::string("wrong N/A marking at ") + rule + "/" + col);
      if (it->second != "ppl" && it->second != "DIVERGED" && it->second != "N/A")
        out.fail("unknown status " + it->second);
      ++filled;
    }
  if (grid.size() != 12) out.fail("grid has " + std::to_string(grid.size()) + " outcomes, expected 12");
  const std::string table = md.str();
  const auto md_lines = static_cast<std::size_t>(std::count(table.begin(), table.end(), '\n'));
  if (md_lines != 6) out.fail("markdown table has " + std::to_string(md_lines) + " lines, expected 6");

  // A cell that blows up must come back as a DIVERGED outcome, not an exception.
  const auto blown = run_ablation_grid(corpus(), {"table1-gated-baseline"}, 1, [&](ExperimentSpec& s) {
    shrink(s);
    s.train.lr = 1e30;
    s.train.warmup_steps = 0;
  });
  const bool recorded = blown.size() == 1 && blown[0].status == "DIVERGED" && blown[0].diverged_step.has_value();
  out.log << "forced divergence recorded " << recorded << '\n';
  if (!recorded) out.fail("forced divergence not recorded as an outcome");
  if (out.pass) out.detail = std::to_string(filled) + " cells, decay+norm N/A, divergence recorded";
}

struct Criterion {
  int id;
  const char* name;
  std::function<void(Outcome&)> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {1, "kernelization identity", kernelization},
      {2, "step/scan equivalence", step_scan},
      {3, "gate-limit identities", gate_limits},
      {4, "gradient correctness", gradients},
      {5, "constant-time inference", inference_scaling},
      {6, "incremental/batch generation", generation},
      {7, "conversion initialization", conversion},
      {8, "desk-scale trainability ordering", trainability},
      {9, "ablation grid shape", ablation_shape},
  };
  return all;
}

struct RunResult {
  std::vector<bool> pass;
  std::vector<std::string> logs;
};

RunResult run_all(const std::vector<int>& selected, bool print, const std::string& dump_dir) {
  RunResult result;
  for (const auto& c : criteria()) {
    if (std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    Outcome o;
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    result.pass.push_back(o.pass);
    result.logs.push_back(o.log.str());
    if (!dump_dir.empty()) std::ofstream(dump_dir + "/criterion" + std::to_string(c.id) + ".txt") << o.log.str();
    if (print) {
      std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
      std::fflush(stdout);
    }
  }
  return result;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> selected{1, 2, 3, 4, 5, 6, 7, 8, 9};
  bool repeat = true;
  std::string dump_dir;
  app.add_option("--only", selected, "Criteria 1-9 to run")->delimiter(',')->check(CLI::Range(1, 9));
  app.add_flag("!--no-determinism", repeat, "Skip criterion 10 (the second run)");
  app.add_option("--dump", dump_dir, "Write each criterion's serialized outputs to this directory");
  CLI11_PARSE(app, argc, argv);
  std::sort(selected.begin(), selected.end());
  selected.erase(std::unique(selected.begin(), selected.end()), selected.end());

  // Single-threaded throughout, as the determinism criterion requires.
  kernels::ScopedThreadLimit single(1);
  const RunResult first = run_all(selected, true, dump_dir);
  bool all = std::all_of(first.pass.begin(), first.pass.end(), [](bool b) { return b; });

  if (repeat) {
    const RunResult second = run_all(selected, false, {});
    std::string diff;
    for (std::size_t i = 0; i < selected.size(); ++i) {
      if (first.pass[i] != second.pass[i]) diff += " pass/fail of " + std::to_string(selected[i]);
      if (first.logs[i] != second.logs[i]) diff += " outputs of " + std::to_string(selected[i]);
    }
    const bool same = diff.empty();
    std::printf("%s criterion 10 (determinism): %s\n", same ? "PASS" : "FAIL",
                same ? "second run of the selected criteria reproduced pass/fail and outputs"
                     : ("differences in" + diff).c_str());
    all = all && same;
  }
  return all ? 0 : 1;
}
