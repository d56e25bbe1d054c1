#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fw/bench.hpp"
#include "fw/generation.hpp"

using namespace fw;

TEST_SUITE("benchmark") {

TEST_CASE("analytic live bytes") {
  const BenchShape shape;
  const auto decay = bench_model_config("decay", shape, 4096);
  const auto delta = bench_model_config("delta", shape, 4096);
  const auto soft = bench_model_config("softmax", shape, 4096);
  CHECK(analytic_live_bytes(decay, 512) == analytic_live_bytes(decay, 4096));
  CHECK(analytic_live_bytes(delta, 512) == analytic_live_bytes(delta, 4096));
  // Neither carries a normalizer in the benchmark configuration.
  CHECK(analytic_live_bytes(decay, 512) == analytic_live_bytes(delta, 512));
  CHECK(analytic_live_bytes(decay, 1) == 2 * 4 * 32 * 32 * 4);
  CHECK(static_cast<double>(analytic_live_bytes(soft, 4096)) / analytic_live_bytes(soft, 512) == 8.0);
  CHECK(analytic_live_bytes(soft, 256) == 256 * 2 * 128 * 2 * 4);
  const auto local = bench_model_config("local", shape, 4096);
  CHECK(analytic_live_bytes(local, 100) == analytic_live_bytes(local, 4000));
  CHECK_THROWS_AS(bench_model_config("hebbian", shape, 16), ConfigError);
}

TEST_CASE("analytic bytes equal the decoder's actual buffers") {
  BenchShape shape;
  shape.d_model = 32;
  shape.n_heads = 2;
  shape.m = 8;
  shape.window = 4;
  for (const char* mixer : {"softmax", "local", "add", "gated", "delta", "decay"}) {
    const auto model = build_model<float>(bench_model_config(mixer, shape, 32), 1);
    auto state = init_generation_state(model);
    for (std::size_t t = 1; t <= 20; ++t) {
      decode_step(model, state, static_cast<int>(t));
      CHECK_MESSAGE(state.bytes() == analytic_live_bytes(model.config, t), mixer << " T=" << t);
    }
  }
  ModelConfig normed = bench_model_config("add", shape, 8);
  normed.rule.attention_norm = true;
  normed.rule.feature_map = FeatureMapKind::relu;
  const auto model = build_model<float>(normed, 2);
  CHECK(init_generation_state(model).bytes() == analytic_live_bytes(normed, 3));
}

TEST_CASE("bench_generation produces one record per mixer and length") {
  BenchShape shape;
  shape.d_model = 16;
  shape.n_heads = 2;
  shape.m = 4;
  const auto records =
      bench_generation(default_bench_factory(shape, 1), {"decay", "softmax"}, {8, 16, 32}, 5, 1, 2);
  REQUIRE(records.size() == 6);
  for (const auto& r : records) {
    CHECK(r.per_token_latency_s > 0);
    CHECK(r.repeats == 5);
  }
  CHECK_THROWS_AS(bench_generation(default_bench_factory(shape, 1), {"decay"}, {8}, 4, 0, 0), ConfigError);
  CHECK_THROWS_AS(bench_generation(default_bench_factory(shape, 1), {"decay"}, {16, 8}, 5, 0, 0), ConfigError);
}

TEST_CASE("csv layout and round trip") {
  std::vector<BenchRecord> records{{"softmax", 4096, 1.25e-3, 8388608, 7},
                                   {"decay", 4096, 3.0e-5, 32768, 7},
                                   {"decay", 256, 2.9e-5, 32768, 7},
                                   {"softmax", 256, 1.0e-4, 524288, 7}};
  std::stringstream ss;
  write_csv(ss, records);
  std::vector<std::string> lines;
  for (std::string line; std::getline(ss, line);) lines.push_back(line);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == kBenchCsvHeader);
  for (const auto& line : lines) CHECK(std::count(line.begin(), line.end(), ',') == 4);
  CHECK(lines[1].rfind("decay,256,", 0) == 0);
  CHECK(lines[4].rfind("softmax,4096,", 0) == 0);
  ss.clear();
  ss.seekg(0);
  const auto back = read_csv(ss);
  std::vector<BenchRecord> sorted{records[2], records[1], records[3], records[0]};
  CHECK(back == sorted);

  std::stringstream one;
  write_csv(one, {records[0]});
  const std::string text = one.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
}

TEST_CASE("emit_csv writes the file and a shape sidecar") {
  const auto path = (std::filesystem::temp_directory_path() / "fw_bench_test.csv").string();
  emit_csv({{"decay", 16, 1e-5, 100, 5}}, path, BenchShape{});
  std::ifstream in(path);
  CHECK(read_csv(in).size() == 1);
  std::ifstream side(path + ".json");
  const auto j = nlohmann::json::parse(side);
  CHECK(j["batch"] == 1);
  CHECK(j["d_model"] == 128);
  CHECK(j["n_layers"] == 2);
  CHECK_THROWS_AS(emit_csv({}, path, BenchShape{}), ConfigError);
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".json");
}

}  // TEST_SUITE
