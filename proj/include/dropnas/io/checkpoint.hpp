#ifndef DROPNAS_IO_CHECKPOINT_HPP
#define DROPNAS_IO_CHECKPOINT_HPP

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "dropnas/supernet/modules.hpp"

// Versioned binary parameter container, little-endian throughout:
//   magic "DNAS" | u32 version | u64 config hash | u32 param count
//   per param: u32 name length, name bytes, u8 dtype (0 = f64, 1 = f32),
//              u32 ndim, i64 dims..., raw values
static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace dropnas {

constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
};

namespace detail {
template <class T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T read_pod(std::ifstream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("checkpoint truncated while reading " + what);
  return v;
}
}  // namespace detail

inline void save_checkpoint(const ParamStore& params, const std::string& path,
                            std::uint64_t config_hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write("DNAS", 4);
  detail::write_pod(out, kCheckpointVersion);
  detail::write_pod(out, config_hash);
  detail::write_pod(out, static_cast<std::uint32_t>(params.entries.size()));
  for (const ParamInfo& e : params.entries) {
    detail::write_pod(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::write_pod<std::uint8_t>(out, sizeof(Real) == 8 ? 0 : 1);
    detail::write_pod(out, static_cast<std::uint32_t>(e.t.shape().size()));
    for (int d : e.t.shape()) detail::write_pod(out, static_cast<std::int64_t>(d));
    out.write(reinterpret_cast<const char*>(e.t.v().data()),
              static_cast<std::streamsize>(e.t.v().size() * sizeof(Real)));
  }
  if (!out) throw IoError("write failure on checkpoint: " + path);
}

// Loads values into an existing, identically shaped parameter store
// (i.e. a model built from the same config). Returns the header.
inline CheckpointHeader load_checkpoint(ParamStore& params, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "DNAS")
    throw IoError("not a checkpoint file: " + path);
  CheckpointHeader hdr;
  hdr.version = detail::read_pod<std::uint32_t>(in, "version");
  if (hdr.version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(hdr.version));
  hdr.config_hash = detail::read_pod<std::uint64_t>(in, "config hash");
  const auto count = detail::read_pod<std::uint32_t>(in, "param count");
  if (count != params.entries.size())
    throw IoError("checkpoint has " + std::to_string(count) + " params, model has " +
                  std::to_string(params.entries.size()));
  for (ParamInfo& e : params.entries) {
    const auto name_len = detail::read_pod<std::uint32_t>(in, "name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw IoError("checkpoint truncated in name");
    if (name != e.name)
      throw IoError("checkpoint param '" + name + "' does not match model param '" + e.name + "'");
    const auto dtype = detail::read_pod<std::uint8_t>(in, "dtype");
    if (dtype != (sizeof(Real) == 8 ? 0 : 1))
      throw IoError("checkpoint precision does not match this build");
    const auto ndim = detail::read_pod<std::uint32_t>(in, "ndim");
    Shape shape(ndim);
    for (auto& d : shape)
      d = static_cast<int>(detail::read_pod<std::int64_t>(in, "dim"));
    if (shape != e.t.shape())
      throw IoError("checkpoint shape mismatch on '" + name + "'");
    in.read(reinterpret_cast<char*>(e.t.v().data()),
            static_cast<std::streamsize>(e.t.v().size() * sizeof(Real)));
    if (!in) throw IoError("checkpoint truncated in values of '" + name + "'");
  }
  return hdr;
}

}  // namespace dropnas

#endif
