#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace {

namespace fs = std::filesystem;

const fs::path& scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "fw_cli_test";
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct Run {
  int code;
  std::string out;
};

Run run(const std::string& args) {
  const auto out_file = scratch() / "stdout.txt";
  const std::string cmd = std::string(FW_CLI_PATH) + " " + args + " > " + out_file.string() + " 2> " +
                          (scratch() / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  std::ifstream in(out_file);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kTiny =
    "--set mixer=decay --set feature_map=linear --set m=4 --set d_model=16 --set n_heads=2 "
    "--set n_layers=1 --set max_T=32 --set steps=6 --set warmup_steps=1 --set seq_len=16 "
    "--set batch_size=2 --set eval_every=3 --set eval_tokens=300";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("help and bad flags") {
  CHECK(run("--help").code == 0);
  for (const char* sub : {"train", "eval", "generate", "convert", "bench", "gradcheck", "ablate"}) {
    const auto r = run(std::string(sub) + " --help");
    CHECK_MESSAGE(r.code == 0, sub);
    CHECK(r.out.find("Usage") != std::string::npos);
  }
  CHECK(run("train --no-such-flag").code == 2);
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("gradcheck --precision quad").code == 2);
}

TEST_CASE("runtime errors exit 1") {
  CHECK(run("eval --checkpoint " + (scratch() / "missing.ckpt").string()).code == 1);
  CHECK(run("train --preset not-a-preset").code == 1);
  CHECK(run("train --set warp_factor=9").code == 1);
  CHECK(run("bench --mixers hebbian --lengths 4 --out " + (scratch() / "x.csv").string()).code == 1);
}

TEST_CASE("gradcheck passes for the delta rule in double precision") {
  const auto r = run("gradcheck --rule delta --precision double");
  CHECK(r.code == 0);
  const auto at = r.out.find("max_rel_err ");
  REQUIRE(at != std::string::npos);
  CHECK(std::stod(r.out.substr(r.out.rfind("max_rel_err ") + 12)) <= 1e-5);
  // An impossible tolerance flips the exit code.
  CHECK(run("gradcheck --rule delta --tol 0").code == 1);
}

TEST_CASE("bench writes one row per mixer and length") {
  const auto csv = scratch() / "b.csv";
  const auto r = run("bench --mixers decay,softmax --lengths 16,64 --repeats 5 --warmup 0 --d-model 16 "
                     "--heads 2 --m 4 --out " + csv.string());
  REQUIRE(r.code == 0);
  std::istringstream in(slurp(csv));
  std::string line;
  std::getline(in, line);
  CHECK(line == "mixer,seq_len,per_token_latency_s,live_bytes,repeats");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 4);
  CHECK(fs::exists(csv.string() + ".json"));
}

TEST_CASE("train is reproducible and its checkpoint feeds eval, generate and convert") {
  const auto r1 = scratch() / "r1.jsonl";
  const auto r2 = scratch() / "r2.jsonl";
  const auto ckpt = scratch() / "m.ckpt";
  REQUIRE(run(std::string("train ") + kTiny + " --seed 4 --threads 1 --report " + r1.string() + " --out " + ckpt.string()).code == 0);
  REQUIRE(run(std::string("train ") + kTiny + " --seed 4 --threads 1 --report " + r2.string()).code == 0);
  CHECK(slurp(r1) == slurp(r2));
  CHECK(slurp(r1).find("wall_ms") == std::string::npos);
  const auto timed = scratch() / "r3.jsonl";
  REQUIRE(run(std::string("train ") + kTiny + " --seed 4 --timing --report " + timed.string()).code == 0);
  CHECK(slurp(timed).find("wall_ms") != std::string::npos);

  const auto ev = run("eval --checkpoint " + ckpt.string() + " --split valid --max-tokens 200");
  CHECK(ev.code == 0);
  CHECK(ev.out.find("\"ppl\"") != std::string::npos);
  const auto g1 = run("generate --checkpoint " + ckpt.string() + " --prompt abc -n 10");
  const auto g2 = run("generate --checkpoint " + ckpt.string() + " --prompt abc -n 10");
  CHECK(g1.code == 0);
  CHECK(g1.out == g2.out);
  CHECK(g1.out.rfind("abc", 0) == 0);
  // A decay checkpoint cannot be converted again.
  CHECK(run("convert --checkpoint " + ckpt.string() + " --out " + (scratch() / "c.ckpt").string() + " --rule delta").code == 1);
}

TEST_CASE("ablate tabulates the requested presets") {
  const auto csv = scratch() / "a.csv";
  const auto r = run("ablate --presets table1-gated-phi-off,table1-decay-baseline --set d_model=16 --set n_heads=2 "
                     "--set n_layers=1 --set max_T=32 --set steps=3 --set warmup_steps=1 --set seq_len=16 "
                     "--set batch_size=2 --set eval_every=3 --set eval_tokens=200 --csv " + csv.string());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("| Decay | N/A |") != std::string::npos);
  CHECK(slurp(csv).find("table1-gated-phi-off,gated,phi-off,") != std::string::npos);
  CHECK(run("ablate --presets table1-add-baseline,bogus").code == 1);
}

}  // TEST_SUITE
