#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "../support.hpp"
#include "fw/generation.hpp"

using namespace fw;

namespace {

struct MixerCase {
  const char* name;
  MixerKind mixer;
  RuleKind rule;
  FeatureMapKind map;
  bool norm;
};

const MixerCase kCases[] = {
    {"softmax", MixerKind::softmax, RuleKind::add, FeatureMapKind::relu, true},
    {"local", MixerKind::local, RuleKind::add, FeatureMapKind::relu, true},
    {"add", MixerKind::rule, RuleKind::add, FeatureMapKind::relu, true},
    {"gated", MixerKind::rule, RuleKind::gated, FeatureMapKind::relu, true},
    {"delta", MixerKind::rule, RuleKind::delta, FeatureMapKind::relu, false},
    {"decay", MixerKind::rule, RuleKind::decay, FeatureMapKind::linear, false},
    {"decay-identity", MixerKind::rule, RuleKind::decay, FeatureMapKind::identity, false},
};

ModelConfig config_for(const MixerCase& mc) {
  ModelConfig c;
  c.d_model = 32;
  c.n_heads = 2;
  c.n_layers = 2;
  c.ffn_mult = 2;
  c.max_T = 1100;
  c.mixer = mc.mixer;
  c.window = 6;
  c.rule = {mc.rule, mc.map, mc.norm, mc.rule == RuleKind::delta, 16,
            preserves_dim(mc.map) ? std::size_t{16} : std::size_t{8}};
  return c;
}

template <typename T>
double step_vs_batch(const Model<T>& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto prompt = fwtest::random_tokens(5, 256, rng);
  const auto res = generate(model, std::span<const int>(prompt), 32, Sampling{});
  std::vector<int> seq = prompt;
  seq.insert(seq.end(), res.tokens.begin(), res.tokens.end());
  seq.pop_back();
  const auto batch = forward_logits(model, seq);
  REQUIRE(res.step_logits.size() == seq.size());
  double worst = 0;
  for (std::size_t t = 0; t < seq.size(); ++t)
    for (std::size_t v = 0; v < 256; ++v)
      worst = std::max(worst, static_cast<double>(std::abs(res.step_logits[t][v] - batch(t, v))));
  return worst;
}

}  // namespace

TEST_SUITE("generation") {

TEST_CASE("incremental logits equal teacher-forced logits") {
  for (const auto& mc : kCases) {
    const auto cfg = config_for(mc);
    CHECK_MESSAGE(step_vs_batch(build_model<float>(cfg, 3), 4) <= 1e-4, mc.name);
    CHECK_MESSAGE(step_vs_batch(build_model<double>(cfg, 3), 4) <= 1e-10, mc.name);
  }
}

TEST_CASE("greedy generation is deterministic") {
  for (const auto& mc : kCases) {
    const auto model = build_model<float>(config_for(mc), 5);
    const std::vector<int> prompt{72, 101, 108, 108, 111};
    const auto a = generate(model, std::span<const int>(prompt), 20, Sampling{});
    const auto b = generate(model, std::span<const int>(prompt), 20, Sampling{});
    CHECK(a.tokens == b.tokens);
    CHECK(a.tokens.size() == 20);
  }
}

TEST_CASE("temperature sampling is reproducible from its seed") {
  const auto model = build_model<float>(config_for(kCases[5]), 6);
  const std::vector<int> prompt{1, 2, 3};
  Sampling s{Sampling::Mode::temperature, 1.5, 77};
  const auto a = generate(model, std::span<const int>(prompt), 40, s);
  const auto b = generate(model, std::span<const int>(prompt), 40, s);
  CHECK(a.tokens == b.tokens);
  s.seed = 78;
  CHECK(generate(model, std::span<const int>(prompt), 40, s).tokens != a.tokens);
}

TEST_CASE("sample_token") {
  std::mt19937_64 rng(1);
  const std::vector<double> logits{0.0, 3.0, 1.0};
  CHECK(sample_token<double>(logits, Sampling{}, rng) == 1);
  // Very peaked distribution at a tiny temperature.
  CHECK(sample_token<double>(logits, Sampling{Sampling::Mode::temperature, 1e-3, 0}, rng) == 1);
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 20000; ++i)
    ++counts[static_cast<std::size_t>(sample_token<double>(logits, Sampling{Sampling::Mode::temperature, 1.0, 0}, rng))];
  const double z = 1 + std::exp(3.0) + std::exp(1.0);
  CHECK(std::abs(counts[1] / 20000.0 - std::exp(3.0) / z) < 0.02);
  CHECK(std::abs(counts[0] / 20000.0 - 1 / z) < 0.02);
}

TEST_CASE("softmax KV cache matches cache-free recompute") {
  const auto model = build_model<double>(config_for(kCases[0]), 7);
  std::mt19937_64 rng(8);
  const auto tokens = fwtest::random_tokens(24, 256, rng);
  auto state = init_generation_state(model);
  double worst = 0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto cached = decode_step(model, state, tokens[t]);
    const auto fresh = forward_logits(model, std::span<const int>(tokens).first(t + 1));
    for (std::size_t v = 0; v < 256; ++v) worst = std::max(worst, std::abs(cached[v] - fresh(t, v)));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("rule state size does not depend on tokens generated") {
  for (const auto& mc : kCases) {
    const auto model = build_model<float>(config_for(mc), 9);
    auto state = init_generation_state(model);
    std::size_t at10 = 0, at1000 = 0;
    int tok = 65;
    for (std::size_t t = 1; t <= 1000; ++t) {
      const auto logits = decode_step(model, state, tok);
      tok = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
      if (t == 10) at10 = state.bytes();
      if (t == 1000) at1000 = state.bytes();
    }
    if (mc.mixer == MixerKind::softmax) {
      const double ratio = static_cast<double>(at1000) / static_cast<double>(at10);
      CHECK(ratio >= 90.0);
      CHECK(ratio <= 110.0);
    } else {
      CHECK_MESSAGE(at10 == at1000, mc.name);
    }
  }
}

TEST_CASE("decode past max_T and empty prompts are rejected") {
  auto cfg = config_for(kCases[5]);
  cfg.max_T = 3;
  const auto model = build_model<float>(cfg, 1);
  auto state = init_generation_state(model);
  for (int i = 0; i < 3; ++i) decode_step(model, state, 1);
  CHECK_THROWS_AS(decode_step(model, state, 1), ConfigError);
  CHECK_THROWS_AS(generate(model, std::span<const int>(), 4, Sampling{}), ConfigError);
  CHECK(generate(model, std::span<const int>(std::vector<int>{1}), 0, Sampling{}).tokens.empty());
}

}  // TEST_SUITE
