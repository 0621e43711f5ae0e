#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "pyra/errors.hpp"
#include "pyra/tensor.hpp"

namespace pyra {

// Binary container of named tensors plus the JSON config that produced them.
//
// Layout, all integers little-endian regardless of host:
//   magic "PYRA" (4 bytes)
//   format version     u32
//   config length      u64, then that many bytes of UTF-8 JSON
//   tensor count       u64
//   per tensor:
//     name length      u16, then that many bytes of UTF-8 name
//     dtype tag        u8 (0 = f32, 1 = f64)
//     rank             u8
//     dims             u64 each
//     data             raw little-endian scalars, row-major
inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'P', 'Y', 'R', 'A'};

namespace detail {

template <typename U>
void put_le(std::string& out, U value) {
  for (size_t b = 0; b < sizeof(U); ++b) out.push_back(static_cast<char>((value >> (8 * b)) & 0xFF));
}

inline void put_f64(std::string& out, double value) {
  uint64_t bits;
  std::memcpy(&bits, &value, sizeof bits);
  put_le<uint64_t>(out, bits);
}

// Cursor over a byte buffer that reports the exact offset and the shortfall
// whenever a read would run past the end.
struct ByteReader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n, const char* what) const {
    if (pos + n > buf.size()) {
      throw format_error("checkpoint truncated at byte offset " + std::to_string(pos) + ": reading " + what +
                         " needs " + std::to_string(n) + " bytes but only " + std::to_string(buf.size() - pos) +
                         " remain");
    }
  }

  template <typename U>
  U read_le(const char* what) {
    need(sizeof(U), what);
    U value = 0;
    for (size_t b = 0; b < sizeof(U); ++b) {
      value |= static_cast<U>(static_cast<unsigned char>(buf[pos + b])) << (8 * b);
    }
    pos += sizeof(U);
    return value;
  }

  std::string read_bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

// Serializes the config and tensors into the checkpoint byte layout.
inline std::string serialize_checkpoint(const std::string& config_json,
                                        const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  detail::put_le<uint32_t>(out, kCheckpointVersion);
  detail::put_le<uint64_t>(out, config_json.size());
  out += config_json;
  detail::put_le<uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xFFFF) throw format_error("checkpoint: tensor name longer than 65535 bytes");
    detail::put_le<uint16_t>(out, static_cast<uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(1));  // dtype f64
    const auto& shape = t.shape();
    if (shape.size() > 0xFF) throw format_error("checkpoint: tensor rank exceeds 255");
    out.push_back(static_cast<char>(shape.size()));
    for (int64_t d : shape) detail::put_le<uint64_t>(out, static_cast<uint64_t>(d));
    for (double v : t.data()) detail::put_f64(out, v);
  }
  return out;
}

struct LoadedCheckpoint {
  std::string config_json;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

// Parses checkpoint bytes. f32 payloads are upcast to the library's f64
// tensors; anything malformed names the byte offset it failed at.
inline LoadedCheckpoint parse_checkpoint(const std::string& buf) {
  detail::ByteReader r{buf};
  std::string magic = r.read_bytes(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) {
    throw format_error("checkpoint: bad magic at byte offset 0 (expected \"PYRA\")");
  }
  uint32_t version = r.read_le<uint32_t>("format version");
  if (version != kCheckpointVersion) {
    throw format_error("checkpoint: unsupported format version " + std::to_string(version) + " at byte offset 4 " +
                       "(expected " + std::to_string(kCheckpointVersion) + ")");
  }
  uint64_t config_len = r.read_le<uint64_t>("config length");
  LoadedCheckpoint out;
  out.config_json = r.read_bytes(static_cast<size_t>(config_len), "config JSON");
  uint64_t count = r.read_le<uint64_t>("tensor count");
  out.tensors.reserve(static_cast<size_t>(count));
  for (uint64_t k = 0; k < count; ++k) {
    uint16_t name_len = r.read_le<uint16_t>("tensor name length");
    std::string name = r.read_bytes(name_len, "tensor name");
    uint8_t dtype = r.read_le<uint8_t>("dtype tag");
    if (dtype > 1) {
      throw format_error("checkpoint: unknown dtype tag " + std::to_string(dtype) + " for tensor '" + name +
                         "' at byte offset " + std::to_string(r.pos - 1));
    }
    uint8_t rank = r.read_le<uint8_t>("rank");
    Shape shape(rank);
    int64_t numel = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      uint64_t dim = r.read_le<uint64_t>("dimension");
      shape[d] = static_cast<int64_t>(dim);
      numel *= shape[d];
    }
    Tensor t = Tensor::zeros(shape);
    auto& data = t.data();
    if (dtype == 1) {
      for (int64_t i = 0; i < numel; ++i) {
        uint64_t bits = r.read_le<uint64_t>("f64 tensor data");
        double v;
        std::memcpy(&v, &bits, sizeof v);
        data[static_cast<size_t>(i)] = v;
      }
    } else {
      for (int64_t i = 0; i < numel; ++i) {
        uint32_t bits = r.read_le<uint32_t>("f32 tensor data");
        float v;
        std::memcpy(&v, &bits, sizeof v);
        data[static_cast<size_t>(i)] = static_cast<double>(v);
      }
    }
    out.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (r.pos != buf.size()) {
    throw format_error("checkpoint: " + std::to_string(buf.size() - r.pos) + " trailing bytes at byte offset " +
                       std::to_string(r.pos));
  }
  return out;
}

// Copies loaded tensor data into live model tensors by name. Strict on both
// sides: every destination must be found with a matching shape, and every
// loaded tensor must be consumed — a silently ignored tensor would mean the
// checkpoint and the model disagree about what was saved.
inline void apply_named_tensors(std::vector<std::pair<std::string, Tensor>> params,
                                const std::vector<std::pair<std::string, Tensor>>& loaded) {
  std::vector<bool> used(loaded.size(), false);
  for (auto& [name, dst] : params) {
    bool found = false;
    for (size_t i = 0; i < loaded.size(); ++i) {
      if (used[i] || loaded[i].first != name) continue;
      const Tensor& src = loaded[i].second;
      if (src.shape() != dst.shape()) {
        throw format_error("checkpoint: tensor '" + name + "' has shape " + shape_str(src.shape()) +
                           " but the model expects " + shape_str(dst.shape()));
      }
      dst.data() = src.data();
      used[i] = true;
      found = true;
      break;
    }
    if (!found) throw format_error("checkpoint: missing tensor '" + name + "'");
  }
  for (size_t i = 0; i < loaded.size(); ++i) {
    if (!used[i]) throw format_error("checkpoint: tensor '" + loaded[i].first + "' has no destination in the model");
  }
}

inline void save_checkpoint(const std::string& path, const std::string& config_json,
                            const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::string bytes = serialize_checkpoint(config_json, tensors);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw format_error("checkpoint: cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw format_error("checkpoint: short write to '" + path + "'");
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw format_error("checkpoint: cannot open '" + path + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace pyra
