#include "pisa/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "pisa/errors.hpp"

namespace pisa {

namespace {

constexpr char kMagic[4] = {'P', 'I', 'S', 'A'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

void read_exact(std::istream& in, void* dst, std::size_t n, const char* what) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw CheckpointTruncatedError(std::string("checkpoint truncated while reading ") + what);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  read_exact(in, b, 4, what);
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

// Bytes left in a seekable stream; guards allocations against corrupt sizes.
std::uint64_t remaining(std::istream& in) {
  const auto here = in.tellg();
  if (here < 0) return UINT64_MAX;
  in.seekg(0, std::ios::end);
  const auto end = in.tellg();
  in.seekg(here);
  return end < here ? 0 : static_cast<std::uint64_t>(end - here);
}

void need(std::istream& in, std::uint64_t bytes, const char* what) {
  if (bytes > remaining(in)) throw CheckpointTruncatedError(std::string("checkpoint truncated in ") + what);
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw CheckpointError(std::string("checkpoint field too large: ") + what);
  return static_cast<std::uint32_t>(v);
}

}  // namespace

const Tensor32* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void write_checkpoint(std::ostream& out, const NamedTensors<float>& tensors, const std::string& config_json) {
  out.write(kMagic, 4);
  out.put(static_cast<char>(kCheckpointVersion));
  put_u32(out, checked_u32(tensors.size(), "entry count"));
  for (const auto& [name, t] : tensors) {
    put_u32(out, checked_u32(name.size(), "name length"));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, checked_u32(t->rank(), "rank"));
    for (std::size_t d : t->shape()) put_u32(out, checked_u32(d, "dimension"));
    for (float v : t->data()) put_f32(out, v);
  }
  put_u32(out, checked_u32(config_json.size(), "config length"));
  out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
}

void save_checkpoint(const std::string& path, const NamedTensors<float>& tensors, const std::string& config_json) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  write_checkpoint(out, tensors, config_json);
  if (!out) throw CheckpointError("failed writing " + path);
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) throw CheckpointHeaderError("not a PISA checkpoint");
  const int version = in.get();
  if (version == std::char_traits<char>::eof()) throw CheckpointTruncatedError("checkpoint truncated after magic");
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  Checkpoint ckpt;
  const std::uint32_t count = get_u32(in, "entry count");
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint32_t name_len = get_u32(in, "name length");
    need(in, name_len, "name");
    std::string name(name_len, '\0');
    read_exact(in, name.data(), name.size(), "name");
    const std::uint32_t rank = get_u32(in, "rank");
    if (rank > 2) throw CheckpointError("tensor '" + name + "' has unsupported rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(get_u32(in, "dimensions"));
    std::uint64_t numel = 1;
    for (std::size_t d : shape) numel *= d;
    if (numel > remaining(in) / 4) throw CheckpointTruncatedError("checkpoint truncated in tensor data");
    Tensor32 t(shape);
    for (float& v : t.data()) v = std::bit_cast<float>(get_u32(in, "tensor data"));
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  const std::uint32_t config_len = get_u32(in, "config length");
  need(in, config_len, "config");
  ckpt.config_json.resize(config_len);
  read_exact(in, ckpt.config_json.data(), ckpt.config_json.size(), "config");
  return ckpt;
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  return read_checkpoint(in);
}

void apply_checkpoint(const Checkpoint& ckpt, const NamedTensors<float>& target) {
  for (const auto& [name, t] : target) {
    const Tensor32* src = ckpt.find(name);
    if (!src) throw CheckpointError("checkpoint has no tensor '" + name + "'");
    if (src->shape() != t->shape())
      throw CheckpointError("tensor '" + name + "' has shape " + shape_str(src->shape()) + ", expected " +
                            shape_str(t->shape()));
    std::copy(src->data().begin(), src->data().end(), t->data().begin());
  }
}

}  // namespace pisa
