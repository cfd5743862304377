#include "textldm/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace tldm {

namespace {

constexpr char kMagic[4] = {'T', 'L', 'D', 'M'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

struct Reader {
  std::span<const std::uint8_t> bytes;
  std::uint64_t offset = 0;

  void need(std::uint64_t n, const char* what) const {
    if (offset + n > bytes.size()) {
      throw CheckpointError(std::string("truncated checkpoint while reading ") + what, offset);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = std::uint32_t(bytes[offset]) | std::uint32_t(bytes[offset + 1]) << 8 |
                      std::uint32_t(bytes[offset + 2]) << 16 |
                      std::uint32_t(bytes[offset + 3]) << 24;
    offset += 4;
    return v;
  }
  float f32(const char* what) {
    const std::uint32_t v = u32(what);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  std::string str(std::uint32_t len, const char* what) {
    need(len, what);
    std::string s(reinterpret_cast<const char*>(bytes.data() + offset), len);
    offset += len;
    return s;
  }
};

}  // namespace

CheckpointError::CheckpointError(const std::string& message, std::uint64_t offset)
    : std::runtime_error(message + " (offset " + std::to_string(offset) + ")"),
      offset_(offset) {}

const Tensor* Checkpoint::find_tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  const Tensor* t = find_tensor(name);
  if (!t) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
  return *t;
}

const std::string& Checkpoint::get(const std::string& key) const {
  auto it = config.find(key);
  if (it == config.end()) throw std::runtime_error("checkpoint: missing config key '" + key + "'");
  return it->second;
}

std::int64_t Checkpoint::get_int(const std::string& key) const {
  return std::stoll(get(key));
}

double Checkpoint::get_double(const std::string& key) const { return std::stod(get(key)); }

void Checkpoint::set_int(const std::string& key, std::int64_t value) {
  config[key] = std::to_string(value);
}

void Checkpoint::set_double(const std::string& key, double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  config[key] = buf;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, Checkpoint::kVersion);

  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (const auto& [name, t] : ckpt.tensors) {
    (void)name;
    for (float v : t.data()) put_f32(out, v);
  }

  std::string kv;
  for (const auto& [k, v] : ckpt.config) {
    kv += k;
    kv += " = ";
    kv += v;
    kv += '\n';
  }
  put_u32(out, static_cast<std::uint32_t>(kv.size()));
  out.insert(out.end(), kv.begin(), kv.end());
  return out;
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r{bytes};
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("bad magic, not a TLDM checkpoint", 0);
  }
  r.offset = 4;
  const std::uint32_t version = r.u32("version");
  if (version != Checkpoint::kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version), 4);
  }

  Checkpoint ckpt;
  const std::uint32_t count = r.u32("tensor count");
  std::vector<std::pair<std::string, Shape>> table;
  table.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("tensor name length");
    std::string name = r.str(name_len, "tensor name");
    const std::uint32_t ndim = r.u32("tensor rank");
    Shape shape(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d) shape[d] = r.u32("tensor dimension");
    table.emplace_back(std::move(name), std::move(shape));
  }
  for (auto& [name, shape] : table) {
    const auto numel = static_cast<std::size_t>(shape_numel(shape));
    std::vector<float> data(numel);
    r.need(std::uint64_t(numel) * 4, "tensor payload");
    for (std::size_t i = 0; i < numel; ++i) data[i] = r.f32("tensor payload");
    ckpt.tensors.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
  }

  const std::uint32_t kv_len = r.u32("config block length");
  const std::string kv = r.str(kv_len, "config block");
  if (r.offset != bytes.size()) {
    throw CheckpointError("trailing bytes after checkpoint payload", r.offset);
  }
  std::size_t pos = 0;
  while (pos < kv.size()) {
    std::size_t eol = kv.find('\n', pos);
    if (eol == std::string::npos) eol = kv.size();
    const std::string line = kv.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    const std::size_t sep = line.find(" = ");
    if (sep == std::string::npos) {
      throw CheckpointError("malformed config line '" + line + "'", r.offset);
    }
    ckpt.config[line.substr(0, sep)] = line.substr(sep + 3);
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint file: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace tldm
