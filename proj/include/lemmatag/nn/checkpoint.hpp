#pragma once

// Parameter checkpoint ("MLXP"), little-endian:
//   magic "MLXP", version u32, count u32, then per tensor
//   name length u16, UTF-8 name, rank u8, dims u32 each, float32 values.

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "lemmatag/errors.hpp"
#include "lemmatag/nn/tensor.hpp"

namespace lemmatag::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace le {

inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }
inline void put_u16(std::string& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

// Bounds-checked little-endian cursor. `what` names the record for errors.
class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint64_t uint(int width, const std::string& what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  float f32(const std::string& what) { return std::bit_cast<float>(static_cast<std::uint32_t>(uint(4, what))); }
  std::string_view bytes(std::size_t n, const std::string& what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  class Truncated : public DataError {
   public:
    using DataError::DataError;
  };

 private:
  void need(std::size_t n, const std::string& what) {
    if (bytes_.size() - pos_ < n) throw Truncated("truncated record: " + what);
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace le

template <typename T>
std::string serialize_checkpoint(const ParamStore<T>& params) {
  std::string out = "MLXP";
  le::put_u32(out, kCheckpointVersion);
  le::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    le::put_u16(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    le::put_u8(out, static_cast<std::uint8_t>(p.value.rank()));
    for (auto d : p.value.shape) le::put_u32(out, static_cast<std::uint32_t>(d));
    for (T v : p.value.values) le::put_f32(out, static_cast<float>(v));
  }
  return out;
}

// Loads every tensor of a checkpoint into `params`, matching by name. The
// checkpoint must hold exactly the store's parameters with equal shapes.
template <typename T>
void deserialize_checkpoint(std::string_view bytes, ParamStore<T>& params) {
  le::Reader in(bytes);
  if (in.bytes(4, "magic") != "MLXP") throw DataError("not an MLXP checkpoint (bad magic)");
  const auto version = in.uint(4, "version");
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto count = in.uint(4, "tensor count");
  if (count != params.size()) {
    throw DataError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                    std::to_string(params.size()));
  }
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name_len = in.uint(2, "tensor name length");
    const std::string name(in.bytes(name_len, "tensor name"));
    auto* p = params.find(name);
    if (!p) throw DataError("checkpoint tensor '" + name + "' is not a model parameter");
    const auto rank = in.uint(1, name + " rank");
    Shape shape;
    for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(in.uint(4, name + " dims"));
    if (shape != p->value.shape) {
      throw DataError("checkpoint tensor '" + name + "' has shape " + to_string(shape) + ", model expects " +
                      to_string(p->value.shape));
    }
    for (auto& v : p->value.values) v = static_cast<T>(in.f32(name + " values"));
  }
  if (!in.at_end()) throw DataError("trailing bytes after last checkpoint tensor");
}

template <typename T>
void save_checkpoint(const ParamStore<T>& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  const auto bytes = serialize_checkpoint(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path + "'");
}

template <typename T>
void load_checkpoint(const std::string& path, ParamStore<T>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  deserialize_checkpoint(bytes, params);
}

}  // namespace lemmatag::nn
