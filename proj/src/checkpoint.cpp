#include "dta/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dta {

namespace {

constexpr char kMagic[4] = {'D', 'T', 'A', 'U'};
constexpr char kOptTag[4] = {'O', 'P', 'T', 'S'};
constexpr uint32_t kVersion = 1;

void put_u16(std::ostream& out, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_table(std::ostream& out, const std::vector<NamedTensor>& table) {
  put_u32(out, static_cast<uint32_t>(table.size()));
  for (const auto& t : table) {
    if (t.name.size() > 0xffff)
      throw std::invalid_argument("checkpoint: tensor name too long");
    put_u16(out, static_cast<uint16_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    out.put(0);  // dtype f32
    out.put(static_cast<char>(t.dims.size()));
    for (int64_t d : t.dims) put_u32(out, static_cast<uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
}

std::vector<NamedTensor> read_table(std::istream& in, const std::string& path) {
  uint32_t count = get_u32(in);
  if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
  std::vector<NamedTensor> table;
  table.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    uint16_t nlen = get_u16(in);
    t.name.resize(nlen);
    in.read(t.name.data(), nlen);
    int dtype = in.get();
    if (dtype != 0) throw std::runtime_error("checkpoint: unsupported dtype in " + path);
    int ndim = in.get();
    if (ndim < 0 || ndim > 8) throw std::runtime_error("checkpoint: bad rank in " + path);
    int64_t total = 1;
    for (int d = 0; d < ndim; ++d) {
      int64_t e = get_u32(in);
      t.dims.push_back(e);
      total *= e;
    }
    t.data.resize(static_cast<size_t>(total));
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor in " + path);
    table.push_back(std::move(t));
  }
  return table;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  write_table(out, data.tensors);
  if (data.has_opt) {
    out.write(kOptTag, 4);
    write_table(out, data.opt);
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint32_t version = get_u32(in);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  CheckpointData data;
  data.tensors = read_table(in, path);
  char tag[4];
  in.read(tag, 4);
  if (in && std::memcmp(tag, kOptTag, 4) == 0) {
    data.opt = read_table(in, path);
    data.has_opt = true;
  }
  return data;
}

}  // namespace dta
