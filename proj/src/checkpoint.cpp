#include "fw/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fw/config_io.hpp"

namespace fw {

namespace {

constexpr const char* kMagic = "fastweights-checkpoint v1";

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

}  // namespace

std::string blob_path(const std::string& manifest_path) { return manifest_path + ".bin"; }

void save_checkpoint(const Model<float>& model, const std::string& manifest_path) {
  std::ofstream manifest(manifest_path);
  std::ofstream blob(blob_path(manifest_path), std::ios::binary);
  if (!manifest || !blob) throw std::runtime_error("cannot write checkpoint " + manifest_path);
  manifest << "# " << kMagic << '\n';
  write_model_config(manifest, model.config);
  std::size_t offset = 0;
  for (const auto& shape : model.tensor_shapes()) {
    manifest << "tensor " << shape.name << ' ' << shape.rows << ' ' << shape.cols << ' ' << offset
             << '\n';
    offset += shape.rows * shape.cols * sizeof(float);
  }
  auto params = model.params;
  for_each_tensor(params, [&](const std::string&, std::span<float> s) {
    for (float f : s) {
      const std::uint32_t word = to_little(std::bit_cast<std::uint32_t>(f));
      blob.write(reinterpret_cast<const char*>(&word), sizeof word);
    }
  });
  if (!manifest || !blob) throw std::runtime_error("write failed for checkpoint " + manifest_path);
}

Model<float> load_checkpoint(const std::string& manifest_path) {
  std::ifstream manifest(manifest_path);
  if (!manifest) throw std::runtime_error("cannot open checkpoint " + manifest_path);
  std::string line;
  std::ostringstream config_text;
  struct Entry {
    std::string name;
    std::size_t rows, cols, offset;
  };
  std::vector<Entry> entries;
  while (std::getline(manifest, line)) {
    if (line.rfind("tensor ", 0) == 0) {
      std::istringstream in(line.substr(7));
      Entry e;
      if (!(in >> e.name >> e.rows >> e.cols >> e.offset))
        throw ConfigError("malformed tensor line: " + line);
      entries.push_back(e);
    } else {
      config_text << line << '\n';
    }
  }
  std::istringstream config_in(config_text.str());
  ModelConfig config;
  for (const auto& [key, value] : parse_key_values(config_in))
    if (!apply_model_key(config, key, value)) throw ConfigError("unknown checkpoint key " + key);
  finalize_model_config(config);
  config.validate();

  Model<float> model{config, zero_params<float>(config)};
  const auto shapes = model.tensor_shapes();
  if (shapes.size() != entries.size())
    throw ConfigError("checkpoint has " + std::to_string(entries.size()) + " tensors, config implies " +
                      std::to_string(shapes.size()));

  std::ifstream blob(blob_path(manifest_path), std::ios::binary);
  if (!blob) throw std::runtime_error("cannot open checkpoint blob " + blob_path(manifest_path));
  std::size_t index = 0;
  for_each_tensor(model.params, [&](const std::string& name, std::span<float> s) {
    const Entry& e = entries[index];
    const TensorShape& shape = shapes[index];
    ++index;
    if (e.name != name || e.rows != shape.rows || e.cols != shape.cols)
      throw ConfigError("checkpoint tensor " + e.name + " does not match expected " + name);
    blob.seekg(static_cast<std::streamoff>(e.offset));
    for (float& f : s) {
      std::uint32_t word = 0;
      blob.read(reinterpret_cast<char*>(&word), sizeof word);
      f = std::bit_cast<float>(to_little(word));
    }
    if (!blob) throw std::runtime_error("checkpoint blob truncated at " + name);
  });
  return model;
}

}  // namespace fw
