#pragma once

// Checkpoint file layout:
//   bytes 0..7   magic "CZSPCKPT"
//   bytes 8..15  uint64 little-endian manifest length
//   manifest     JSON: {"version":1,"tensors":[{name,shape,dtype,offset,bytes}]}
//   blob         raw little-endian tensor data, offsets relative to blob start
// Loading verifies names and shapes and casts between f32/f64 as needed.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "clozespan/optim.hpp"
#include "clozespan/tensor.hpp"

namespace clozespan {

namespace detail {
inline constexpr char kCheckpointMagic[8] = {'C', 'Z', 'S', 'P', 'C', 'K', 'P', 'T'};

template <typename Real>
const char* dtype_name() {
  if constexpr (sizeof(Real) == 4)
    return "f32";
  else
    return "f64";
}
}  // namespace detail

template <typename Real>
void save_checkpoint(const std::string& path, const NamedParams<Real>& params,
                     const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["meta"] = meta;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : params) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = tensor.shape();
    entry["dtype"] = detail::dtype_name<Real>();
    entry["offset"] = offset;
    const std::uint64_t nbytes = tensor.size() * sizeof(Real);
    entry["bytes"] = nbytes;
    manifest["tensors"].push_back(std::move(entry));
    offset += nbytes;
  }
  const std::string header = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, tensor] : params)
    out.write(reinterpret_cast<const char*>(tensor.value().data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(Real)));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline nlohmann::json load_checkpoint_meta(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  const nlohmann::json manifest = nlohmann::json::parse(header);
  return manifest.value("meta", nlohmann::json::object());
}

// Loads values into the given parameters. Every parameter must be present in
// the file with a matching shape; extra file entries outside `params` are
// ignored, so decoder-only files load into decoder-only parameter sets.
template <typename Real>
void load_checkpoint(const std::string& path, NamedParams<Real>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  const nlohmann::json manifest = nlohmann::json::parse(header);
  const std::streampos blob_start = in.tellg();

  struct Entry {
    Shape shape;
    std::string dtype;
    std::uint64_t offset, bytes;
  };
  std::unordered_map<std::string, Entry> entries;
  for (const auto& e : manifest.at("tensors"))
    entries[e.at("name").get<std::string>()] =
        Entry{e.at("shape").get<Shape>(), e.at("dtype").get<std::string>(),
              e.at("offset").get<std::uint64_t>(), e.at("bytes").get<std::uint64_t>()};

  for (auto& [name, tensor] : params) {
    auto it = entries.find(name);
    if (it == entries.end())
      throw std::runtime_error("checkpoint " + path + " is missing tensor: " + name);
    const Entry& e = it->second;
    if (e.shape != tensor.shape())
      throw std::runtime_error("checkpoint tensor " + name + " has shape " +
                               shape_str(e.shape) + ", expected " +
                               shape_str(tensor.shape()));
    in.seekg(blob_start + static_cast<std::streamoff>(e.offset));
    if (e.dtype == detail::dtype_name<Real>()) {
      in.read(reinterpret_cast<char*>(tensor.value().data()),
              static_cast<std::streamsize>(e.bytes));
    } else if (e.dtype == "f32") {
      std::vector<float> buf(e.bytes / sizeof(float));
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(e.bytes));
      for (std::size_t i = 0; i < buf.size(); ++i)
        tensor.value()[i] = static_cast<Real>(buf[i]);
    } else if (e.dtype == "f64") {
      std::vector<double> buf(e.bytes / sizeof(double));
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(e.bytes));
      for (std::size_t i = 0; i < buf.size(); ++i)
        tensor.value()[i] = static_cast<Real>(buf[i]);
    } else {
      throw std::runtime_error("checkpoint tensor " + name + " has unknown dtype " +
                               e.dtype);
    }
    if (!in) throw std::runtime_error("truncated checkpoint data: " + path);
  }
}

}  // namespace clozespan
