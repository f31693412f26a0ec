#ifndef CLUST3_CHECKPOINT_HPP
#define CLUST3_CHECKPOINT_HPP

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "tensor.hpp"

namespace clust3 {

// Checkpoint container: one UTF-8 JSON manifest line (ordered list of
// {name, shape, dtype}) followed by the raw little-endian scalar payloads
// concatenated in manifest order. Round-trips bit-exactly.

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
inline const char* dtype_name();
template <>
inline const char* dtype_name<float>() {
  return "f32";
}
template <>
inline const char* dtype_name<double>() {
  return "f64";
}

template <class T>
void save_container(const std::string& path, const std::vector<NamedTensor<T>>& entries) {
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& e : entries)
    manifest.push_back({{"name", e.name}, {"shape", e.tensor.shape}, {"dtype", dtype_name<T>()}});
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError("cannot open for writing: " + path);
  out << manifest.dump() << "\n";
  // assumes a little-endian host
  for (const auto& e : entries)
    out.write(reinterpret_cast<const char*>(e.tensor.data.data()),
              static_cast<std::streamsize>(e.tensor.data.size() * sizeof(T)));
  if (!out) throw Error("write failed: " + path);
}

template <class T>
std::vector<NamedTensor<T>> load_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error("truncated container: " + path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad container manifest in " + path + ": " + e.what());
  }
  std::vector<NamedTensor<T>> entries;
  for (const auto& m : manifest) {
    if (m.at("dtype").get<std::string>() != dtype_name<T>())
      throw Error("container dtype mismatch in " + path);
    NamedTensor<T> e;
    e.name = m.at("name").get<std::string>();
    e.tensor = Tensor<T>(m.at("shape").get<std::vector<int>>());
    in.read(reinterpret_cast<char*>(e.tensor.data.data()),
            static_cast<std::streamsize>(e.tensor.data.size() * sizeof(T)));
    if (!in) throw Error("truncated container payload: " + path);
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace clust3

#endif
