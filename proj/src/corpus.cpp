#include "fw/corpus.hpp"

#include <cmath>
#include <fstream>
#include <iterator>

#include "fw/errors.hpp"

#ifndef FW_DATA_DIR
#define FW_DATA_DIR "data"
#endif

namespace fw {

std::vector<int> tokenize(std::string_view bytes) {
  std::vector<int> out(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = static_cast<unsigned char>(bytes[i]);
  return out;
}

std::string detokenize(std::span<const int> tokens) {
  std::string out(tokens.size(), '\0');
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] > 255)
      throw std::out_of_range("token " + std::to_string(tokens[i]) + " is not a byte");
    out[i] = static_cast<char>(static_cast<unsigned char>(tokens[i]));
  }
  return out;
}

CorpusSplits split_tokens(std::vector<int> tokens, const std::array<double, 3>& fractions,
                          std::uint64_t seed, std::string source) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("split fractions must be positive");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  const auto n = tokens.size();
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  const auto n_valid = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
  if (n_train == 0 || n_valid == 0 || n_train + n_valid >= n)
    throw ConfigError("corpus of " + std::to_string(n) + " tokens is too small for the requested splits");
  CorpusSplits out;
  out.train.assign(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.valid.assign(tokens.begin() + static_cast<std::ptrdiff_t>(n_train),
                   tokens.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  out.test.assign(tokens.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), tokens.end());
  out.source = std::move(source);
  out.fractions = fractions;
  out.seed = seed;
  return out;
}

CorpusSplits load_corpus(const std::string& path, const std::array<double, 3>& fractions,
                         std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open corpus " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw ConfigError("corpus " + path + " is empty");
  return split_tokens(tokenize(bytes), fractions, seed, path);
}

std::string default_corpus_path() { return std::string(FW_DATA_DIR) + "/corpus.txt"; }

}  // namespace fw
