#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gcap/adam.hpp"
#include "gcap/errors.hpp"
#include "gcap/io.hpp"
#include "gcap/model.hpp"
#include "gcap/tensor.hpp"

namespace gcap {

/// File layout: "GCAP1", u64 little-endian manifest length, compact JSON manifest,
/// then every tensor as contiguous little-endian f64 at the manifest's byte offsets.
inline constexpr std::string_view kCheckpointMagic = "GCAP";
inline constexpr char kCheckpointVersion = '1';

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  /// Run configuration echo, kept verbatim so a reload re-emits identical bytes.
  Json config;
  std::size_t epoch = 0;
  std::size_t vocab_size = 0;
  std::vector<NamedTensor> params;
  /// Hyperparameters and step; moments are empty before the first update.
  AdamState optimizer;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint64_t get_u64(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i])) << (8 * i);
  return v;
}

inline void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

inline double get_f64(std::string_view in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace detail

inline Checkpoint make_checkpoint(const Json& config, const ModelParams& params, const AdamState& adam,
                                  std::size_t epoch) {
  Checkpoint c;
  c.config = config;
  c.epoch = epoch;
  c.vocab_size = params.vocab_size;
  for (const auto& [name, t] : params.named()) {
    c.params.push_back({name, t->shape(), {t->values().begin(), t->values().end()}});
  }
  c.optimizer = adam;
  return c;
}

inline std::string serialize_checkpoint(const Checkpoint& c) {
  const auto& opt = c.optimizer;
  const bool moments = !opt.m.empty();
  if (moments && (opt.m.size() != c.params.size() || opt.v.size() != c.params.size())) {
    throw ShapeError("optimizer moments do not match the parameter list");
  }

  std::vector<std::pair<std::string, std::pair<Shape, const std::vector<double>*>>> entries;
  for (const auto& p : c.params) entries.push_back({p.name, {p.shape, &p.values}});
  if (moments) {
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      entries.push_back({"adam.m." + c.params[i].name, {c.params[i].shape, &opt.m[i]}});
    }
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      entries.push_back({"adam.v." + c.params[i].name, {c.params[i].shape, &opt.v[i]}});
    }
  }

  Json tensors = Json::array();
  std::string payload;
  for (const auto& [name, entry] : entries) {
    const auto& [shape, values] = entry;
    if (numel(shape) != values->size()) throw ShapeError("tensor '" + name + "' does not match its shape");
    tensors.push_back({{"name", name}, {"shape", shape}, {"offset", payload.size()}, {"bytes", values->size() * 8}});
    for (double v : *values) detail::put_f64(payload, v);
  }
  Json manifest = {{"version", 1},
                   {"config", c.config},
                   {"epoch", c.epoch},
                   {"vocab_size", c.vocab_size},
                   {"optimizer",
                    {{"step", opt.step},
                     {"lr", opt.lr},
                     {"beta1", opt.beta1},
                     {"beta2", opt.beta2},
                     {"eps", opt.eps},
                     {"moments", moments}}},
                   {"tensors", std::move(tensors)}};
  const std::string text = manifest.dump();

  std::string out(kCheckpointMagic);
  out.push_back(kCheckpointVersion);
  detail::put_u64(out, text.size());
  out += text;
  out += payload;
  return out;
}

inline Checkpoint parse_checkpoint(std::string_view bytes, const std::string& where = "checkpoint") {
  const std::size_t header = kCheckpointMagic.size() + 1;
  if (bytes.size() < header || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw VersionError(where + ": not a checkpoint (bad magic)");
  }
  if (bytes[kCheckpointMagic.size()] != kCheckpointVersion) {
    throw VersionError(where + ": unsupported checkpoint version '" + std::string(1, bytes[kCheckpointMagic.size()]) +
                       "'");
  }
  if (bytes.size() < header + 8) throw FormatError(where + ": truncated manifest length");
  const std::uint64_t len = detail::get_u64(bytes.substr(header));
  if (len > bytes.size() - header - 8) throw FormatError(where + ": truncated manifest");
  const std::string_view payload = bytes.substr(header + 8 + len);
  const Json manifest = parse_json(std::string(bytes.substr(header + 8, len)), where + " manifest");

  try {
    if (manifest.at("version").get<int>() != 1) throw VersionError(where + ": unsupported manifest version");
    Checkpoint c;
    c.config = manifest.at("config");
    c.epoch = manifest.at("epoch").get<std::size_t>();
    c.vocab_size = manifest.at("vocab_size").get<std::size_t>();
    const Json& o = manifest.at("optimizer");
    c.optimizer.step = o.at("step").get<std::uint64_t>();
    c.optimizer.lr = o.at("lr").get<double>();
    c.optimizer.beta1 = o.at("beta1").get<double>();
    c.optimizer.beta2 = o.at("beta2").get<double>();
    c.optimizer.eps = o.at("eps").get<double>();
    const bool moments = o.at("moments").get<bool>();

    struct Entry {
      std::string name;
      Shape shape;
      std::uint64_t offset;
      std::uint64_t bytes;
    };
    std::vector<Entry> entries;
    for (const auto& t : manifest.at("tensors")) {
      Entry e{t.at("name").get<std::string>(), t.at("shape").get<Shape>(), t.at("offset").get<std::uint64_t>(),
              t.at("bytes").get<std::uint64_t>()};
      if (e.bytes != numel(e.shape) * 8) {
        throw FormatError(where + ": tensor '" + e.name + "' byte length disagrees with shape " + to_string(e.shape));
      }
      entries.push_back(std::move(e));
    }
    std::vector<std::size_t> order(entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return entries[a].offset < entries[b].offset; });
    std::uint64_t cursor = 0;
    for (std::size_t i : order) {
      if (entries[i].offset < cursor) throw FormatError(where + ": tensor '" + entries[i].name + "' overlaps another");
      if (entries[i].offset > cursor) throw FormatError(where + ": gap before tensor '" + entries[i].name + "'");
      cursor += entries[i].bytes;
    }
    if (cursor > payload.size()) throw FormatError(where + ": truncated payload");
    if (cursor < payload.size()) throw FormatError(where + ": trailing bytes after payload");

    auto read = [&](const Entry& e) {
      std::vector<double> values(numel(e.shape));
      for (std::size_t k = 0; k < values.size(); ++k) values[k] = detail::get_f64(payload.substr(e.offset + 8 * k));
      return values;
    };
    const std::size_t n = moments ? entries.size() / 3 : entries.size();
    if (moments && entries.size() != 3 * n) throw FormatError(where + ": optimizer moments incomplete");
    for (std::size_t i = 0; i < n; ++i) c.params.push_back({entries[i].name, entries[i].shape, read(entries[i])});
    if (moments) {
      for (std::size_t i = 0; i < n; ++i) {
        const Entry& m = entries[n + i];
        const Entry& v = entries[2 * n + i];
        if (m.name != "adam.m." + entries[i].name || v.name != "adam.v." + entries[i].name || m.shape != entries[i].shape ||
            v.shape != entries[i].shape) {
          throw FormatError(where + ": optimizer moments do not line up with '" + entries[i].name + "'");
        }
        c.optimizer.m.push_back(read(m));
        c.optimizer.v.push_back(read(v));
      }
    }
    return c;
  } catch (const Json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) { write_file(path, serialize_checkpoint(c)); }

inline Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path), path); }

/// Copies checkpoint tensors into freshly shaped params, matching by name and shape.
inline ModelParams restore_params(const Checkpoint& c, const ModelConfig& config) {
  ModelParams p = ModelParams::init(config, c.vocab_size, 0);
  auto named = p.named();
  if (named.size() != c.params.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(c.params.size()) + " tensors, config expects " +
                      std::to_string(named.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& [name, t] = named[i];
    const auto& src = c.params[i];
    if (src.name != name || src.shape != t->shape()) {
      throw ConfigError("checkpoint tensor '" + src.name + "' " + to_string(src.shape) + " does not match '" + name +
                        "' " + to_string(t->shape()));
    }
    std::copy(src.values.begin(), src.values.end(), t->values().begin());
  }
  return p;
}

}  // namespace gcap
