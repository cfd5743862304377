#ifndef TEXTLDM_CHECKPOINT_HPP
#define TEXTLDM_CHECKPOINT_HPP

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "textldm/tensor.hpp"

namespace tldm {

/// Thrown on malformed checkpoint bytes; carries the file offset at which
/// parsing failed.
class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(const std::string& message, std::uint64_t offset);
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Bit-exact container: magic "TLDM", u32 version, little-endian; a
/// length-prefixed name/shape table; raw f32 tensor payloads in table order;
/// then a length-prefixed UTF-8 "key = value" block holding the config
/// snapshot and rng state.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::vector<std::pair<std::string, Tensor>> tensors;  // ordered
  std::map<std::string, std::string> config;            // sorted, deterministic

  const Tensor* find_tensor(const std::string& name) const;
  const Tensor& tensor(const std::string& name) const;  // throws when missing

  bool has(const std::string& key) const { return config.count(key) > 0; }
  const std::string& get(const std::string& key) const;  // throws when missing
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;

  void set(const std::string& key, const std::string& value) { config[key] = value; }
  void set_int(const std::string& key, std::int64_t value);
  void set_double(const std::string& key, double value);
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace tldm

#endif  // TEXTLDM_CHECKPOINT_HPP
