#pragma once

// Versioned binary checkpoint:
//   "UIGNNCKP"  8-byte magic
//   u32         format version
//   u64 + bytes JSON metadata (model config, input scale, caller metadata)
//   u64         array count
//   per array:  u32 name length, name bytes, i64 rows, i64 cols,
//               rows*cols f64 column-major
// All integers and doubles are little-endian as written by the host.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "uignn/errors.hpp"
#include "uignn/model.hpp"

namespace uignn {

inline constexpr char kCheckpointMagic[8] = {'U', 'I', 'G', 'N', 'N', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"history", c.history},
          {"hidden", c.hidden},
          {"layers", c.layers},
          {"order", c.order},
          {"activation", to_string(c.activation)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.history = j.at("history").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.order = j.at("order").get<int>();
  c.activation = parse_activation(j.at("activation").get<std::string>());
  c.validate();
  return c;
}

struct Checkpoint {
  ModelParams params;
  nlohmann::json metadata = nlohmann::json::object();  ///< free-form run information
};

namespace detail {

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("checkpoint '" + path + "' is truncated");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put(out, kCheckpointVersion);
  nlohmann::json meta = {{"model", to_json(ck.params.config())},
                         {"input_offset", ck.params.input_offset},
                         {"input_scale", ck.params.input_scale},
                         {"run", ck.metadata}};
  const std::string text = meta.dump();
  detail::put(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto& arrays = ck.params.arrays();
  detail::put(out, static_cast<std::uint64_t>(arrays.size()));
  for (const auto& a : arrays) {
    detail::put(out, static_cast<std::uint32_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    detail::put(out, static_cast<std::int64_t>(a.value.rows()));
    detail::put(out, static_cast<std::int64_t>(a.value.cols()));
    out.write(reinterpret_cast<const char*>(a.value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(a.value.size())));
  }
  if (!out) throw Error("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw FormatError("'" + path + "' is not a checkpoint");
  const auto version = detail::get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported");
  const auto meta_len = detail::get<std::uint64_t>(in, path);
  std::string text(meta_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw FormatError("checkpoint '" + path + "' is truncated");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  const ModelConfig config = model_config_from_json(meta.at("model"));
  const auto count = detail::get<std::uint64_t>(in, path);
  std::vector<ad::Parameter> arrays;
  arrays.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = detail::get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = detail::get<std::int64_t>(in, path);
    const auto cols = detail::get<std::int64_t>(in, path);
    if (rows < 0 || cols < 0) throw FormatError("checkpoint array '" + name + "' has a negative shape");
    Matrix value(rows, cols);
    in.read(reinterpret_cast<char*>(value.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(value.size())));
    if (!in) throw FormatError("checkpoint '" + path + "' is truncated");
    arrays.emplace_back(std::move(name), std::move(value));
  }
  Checkpoint ck;
  ck.params = ModelParams::from_arrays(config, std::move(arrays));
  ck.params.input_offset = meta.at("input_offset").get<double>();
  ck.params.input_scale = meta.at("input_scale").get<double>();
  ck.metadata = meta.value("run", nlohmann::json::object());
  return ck;
}

}  // namespace uignn
