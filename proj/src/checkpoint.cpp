// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0

#include "mffu/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace mffu {
namespace {

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

struct Writer {
  std::vector<std::uint8_t> buf;

  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  void u8(std::uint8_t v) { buf.push_back(v); }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
};

struct Reader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;

  void bytes(void* p, std::size_t n) {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated data");
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint16_t u16() {
    std::uint16_t v;
    bytes(&v, 2);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  std::string str(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
};

}  // namespace

std::string config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["base_width"] = cfg.base_width;
  j["depth"] = cfg.depth;
  j["num_classes"] = cfg.num_classes;
  j["in_channels"] = cfg.in_channels;
  j["input_h"] = cfg.input_h;
  j["input_w"] = cfg.input_w;
  j["seed"] = cfg.seed;
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig cfg;
  cfg.base_width = j.at("base_width").get<int>();
  cfg.depth = j.at("depth").get<int>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.in_channels = j.at("in_channels").get<int>();
  cfg.input_h = j.at("input_h").get<int>();
  cfg.input_w = j.at("input_w").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

std::vector<std::uint8_t> checkpoint_bytes(const Model<float>& m) {
  Writer w;
  w.bytes("MFFU", 4);
  w.u32(kCheckpointVersion);
  const std::string cfg = config_to_json(m.cfg);
  w.u64(cfg.size());
  w.bytes(cfg.data(), cfg.size());

  std::uint32_t count = 0;
  auto& mm = const_cast<Model<float>&>(m);
  visit_params(mm, [&](const std::string&, Tensor<float>&, bool) { ++count; });
  w.u32(count);
  visit_params(mm, [&](const std::string& name, Tensor<float>& t, bool) {
    if (name.size() > 0xffff) throw std::runtime_error("checkpoint: name too long");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) w.u32(static_cast<std::uint32_t>(t.dim(d)));
    w.bytes(t.data(), sizeof(float) * static_cast<std::size_t>(t.size()));
  });

  w.u64(fnv1a64(w.buf.data(), w.buf.size()));
  return std::move(w.buf);
}

Model<float> checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 + 4 + 4) throw std::runtime_error("checkpoint: file too short");
  const std::uint64_t stored =
      [&] {
        std::uint64_t v;
        std::memcpy(&v, bytes.data() + bytes.size() - 8, 8);
        return v;
      }();
  if (fnv1a64(bytes.data(), bytes.size() - 8) != stored)
    throw std::runtime_error("checkpoint: checksum mismatch");

  Reader r{bytes};
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "MFFU", 4) != 0) throw std::runtime_error("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const std::uint64_t cfg_len = r.u64();
  const std::string cfg_text = r.str(cfg_len);
  const ModelConfig cfg = config_from_json(cfg_text);

  Model<float> m = build_model<float>(cfg);
  const std::uint32_t count = r.u32();
  std::uint32_t expected = 0;
  visit_params(m, [&](const std::string&, Tensor<float>&, bool) { ++expected; });
  if (count != expected)
    throw std::runtime_error("checkpoint: tensor count does not match the embedded config");

  visit_params(m, [&](const std::string& name, Tensor<float>& t, bool) {
    const std::string got = r.str(r.u16());
    if (got != name)
      throw std::runtime_error("checkpoint: tensor name mismatch, expected " + name + " got " +
                               got);
    const int rank = r.u8();
    if (rank != t.rank()) throw std::runtime_error("checkpoint: rank mismatch for " + name);
    for (int d = 0; d < rank; ++d) {
      if (r.u32() != static_cast<std::uint32_t>(t.dim(d)))
        throw std::runtime_error("checkpoint: shape mismatch for " + name);
    }
    r.bytes(t.data(), sizeof(float) * static_cast<std::size_t>(t.size()));
  });
  if (r.pos != bytes.size() - 8) throw std::runtime_error("checkpoint: trailing bytes");
  return m;
}

void save_checkpoint(const Model<float>& m, const std::string& path) {
  const auto bytes = checkpoint_bytes(m);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

Model<float> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return checkpoint_from_bytes(bytes);
}

}  // namespace mffu
