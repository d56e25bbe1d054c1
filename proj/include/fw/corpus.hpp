#pragma once

// Byte-level corpus handling: every byte is a token in [0, 256).

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fw {

struct CorpusSplits {
  std::vector<int> train, valid, test;
  std::string source;
  std::array<double, 3> fractions{0.9, 0.05, 0.05};
  std::uint64_t seed = 0;
};

std::vector<int> tokenize(std::string_view bytes);
std::string detokenize(std::span<const int> tokens);

// Contiguous train/valid/test chunks in file order. The split itself does
// not depend on `seed`; it is kept as provenance for downstream sampling.
CorpusSplits split_tokens(std::vector<int> tokens, const std::array<double, 3>& fractions,
                          std::uint64_t seed, std::string source = {});
CorpusSplits load_corpus(const std::string& path, const std::array<double, 3>& fractions,
                         std::uint64_t seed);

// Path of the corpus bundled with the source tree.
std::string default_corpus_path();

}  // namespace fw
