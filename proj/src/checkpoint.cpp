#include "bifusion/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace bifusion {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& magic,
                     const std::vector<StateItem>& items) {
  if (magic.size() != 4) throw IoError("checkpoint magic must be 4 bytes");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(magic.data(), 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(items.size()));
  std::uint64_t offset = 0;
  for (const auto& it : items) {
    if (numel_of(it.shape) != static_cast<std::int64_t>(it.data->size()))
      throw IoError("state item " + it.name + " shape does not match its storage");
    put_u32(os, static_cast<std::uint32_t>(it.name.size()));
    os.write(it.name.data(), static_cast<std::streamsize>(it.name.size()));
    put_u32(os, static_cast<std::uint32_t>(it.shape.size()));
    for (auto e : it.shape) put_u64(os, static_cast<std::uint64_t>(e));
    put_u64(os, offset);
    offset += it.data->size() * sizeof(double);
  }
  for (const auto& it : items)
    os.write(reinterpret_cast<const char*>(it.data->data()),
             static_cast<std::streamsize>(it.data->size() * sizeof(double)));
  if (!os) throw IoError("write failed: " + path);
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path, std::string* magic_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is) throw LoadError("truncated checkpoint: " + path);
  if (magic_out) magic_out->assign(magic, 4);
  const std::uint32_t version = get_u32(is);
  if (version != kVersion)
    throw LoadError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = get_u32(is);
  struct Rec {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Rec> recs;
  for (std::uint32_t i = 0; i < count; ++i) {
    Rec r;
    const std::uint32_t len = get_u32(is);
    r.name.resize(len);
    is.read(r.name.data(), len);
    const std::uint32_t ndim = get_u32(is);
    for (std::uint32_t d = 0; d < ndim; ++d)
      r.shape.push_back(static_cast<std::int64_t>(get_u64(is)));
    r.offset = get_u64(is);
    recs.push_back(std::move(r));
  }
  if (!is) throw LoadError("truncated checkpoint manifest: " + path);
  const std::streampos blob_start = is.tellg();
  std::vector<CheckpointEntry> out;
  for (const auto& r : recs) {
    CheckpointEntry e;
    e.name = r.name;
    e.shape = r.shape;
    e.data.resize(static_cast<std::size_t>(numel_of(r.shape)));
    is.seekg(blob_start + static_cast<std::streamoff>(r.offset));
    is.read(reinterpret_cast<char*>(e.data.data()),
            static_cast<std::streamsize>(e.data.size() * sizeof(double)));
    if (!is) throw LoadError("truncated checkpoint blob for " + r.name + ": " + path);
    out.push_back(std::move(e));
  }
  return out;
}

std::string checkpoint_magic(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is) throw LoadError("truncated checkpoint: " + path);
  return std::string(magic, 4);
}

void load_checkpoint(const std::string& path, const std::string& magic,
                     const std::vector<StateItem>& items) {
  std::string file_magic;
  auto entries = read_checkpoint(path, &file_magic);
  if (file_magic != magic)
    throw LoadError("checkpoint " + path + " has magic '" + file_magic + "', expected '" +
                    magic + "'");
  std::unordered_map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  for (const auto& it : items) {
    auto found = by_name.find(it.name);
    if (found == by_name.end())
      throw LoadError("checkpoint " + path + " is missing parameter " + it.name);
    if (found->second->shape != it.shape)
      throw LoadError("checkpoint " + path + " parameter " + it.name + " has shape " +
                      shape_str(found->second->shape) + ", expected " + shape_str(it.shape));
    *it.data = found->second->data;
  }
}

}  // namespace bifusion
