#include "sam/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "sam/error.hpp"

namespace sam::ckpt {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'M', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

void put_u32(std::ofstream& f, std::uint32_t v) {
  std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                       static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
  f.write(reinterpret_cast<char*>(b), 4);
}

void put_str(std::ofstream& f, const std::string& s) {
  put_u32(f, static_cast<std::uint32_t>(s.size()));
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

struct Reader {
  std::vector<std::uint8_t> bytes;
  std::size_t pos = 0;
  std::string path;

  void need(std::size_t n, const char* what) {
    if (pos + n > bytes.size())
      throw IoError("checkpoint truncated reading " + std::string(what) + " at offset " +
                    std::to_string(pos) + ": " + path);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = bytes[pos] | (std::uint32_t(bytes[pos + 1]) << 8) |
                      (std::uint32_t(bytes[pos + 2]) << 16) |
                      (std::uint32_t(bytes[pos + 3]) << 24);
    pos += 4;
    return v;
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes[pos++];
  }
  std::string str(const char* what) {
    std::uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

void save(const std::string& path, const ParamStore& params,
          const std::map<std::string, std::string>& meta) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint: " + path);
  f.write(kMagic, 8);
  std::ofstream& o = f;
  put_u32(o, kVersion);
  put_u32(o, static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    put_str(o, k);
    put_str(o, v);
  }
  put_u32(o, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = params.entry(i);
    put_str(o, e.name);
    o.put(static_cast<char>(kDtypeF32));
    o.put(e.trainable ? 1 : 0);
    put_u32(o, static_cast<std::uint32_t>(e.value.shape.size()));
    for (int d : e.value.shape) put_u32(o, static_cast<std::uint32_t>(d));
    // Host is little-endian on every platform this builds for.
    o.write(reinterpret_cast<const char*>(e.value.v.data()),
            static_cast<std::streamsize>(e.value.v.size() * sizeof(float)));
  }
  if (!f) throw IoError("write failed for checkpoint: " + path);
}

Checkpoint load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  Reader r;
  r.path = path;
  r.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  r.need(8, "magic");
  if (std::memcmp(r.bytes.data(), kMagic, 8) != 0)
    throw IoError("not a checkpoint file (bad magic): " + path);
  r.pos = 8;
  std::uint32_t version = r.u32("version");
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path);

  Checkpoint out;
  std::uint32_t nmeta = r.u32("manifest size");
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.str("manifest key");
    out.meta[k] = r.str("manifest value");
  }
  std::uint32_t ntensors = r.u32("tensor count");
  for (std::uint32_t i = 0; i < ntensors; ++i) {
    std::string name = r.str("tensor name");
    std::uint8_t dtype = r.u8("dtype");
    if (dtype != kDtypeF32)
      throw IoError("unsupported dtype " + std::to_string(dtype) + " for tensor " + name +
                    " in " + path);
    bool trainable = r.u8("trainable flag") != 0;
    std::uint32_t ndims = r.u32("rank");
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < ndims; ++d) {
      shape.push_back(static_cast<int>(r.u32("dimension")));
      n *= static_cast<std::size_t>(shape.back());
    }
    r.need(n * sizeof(float), "tensor values");
    Tensor t(shape);
    std::memcpy(t.v.data(), r.bytes.data() + r.pos, n * sizeof(float));
    r.pos += n * sizeof(float);
    out.params.add(std::move(name), std::move(t), trainable);
  }
  if (r.pos != r.bytes.size())
    throw IoError("trailing bytes after checkpoint payload at offset " +
                  std::to_string(r.pos) + ": " + path);
  return out;
}

}  // namespace sam::ckpt
