#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "niva/tensor.hpp"

namespace niva {

// Named parameter tensors with training flags. Entry order is creation order
// and is the serialization order, so runs are reproducible.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    DenseArray value;
    bool decay = false;   // weight decay applies (linear-layer weights only)
    bool frozen = false;  // excluded from gradient updates
  };

  int add(std::string name, DenseArray value, bool decay, bool frozen);
  bool contains(const std::string& name) const;
  Entry& at(const std::string& name);
  const Entry& at(const std::string& name) const;
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, int> index_;
};

std::array<std::uint8_t, 32> sha256(const std::uint8_t* data, std::size_t len);
std::string sha256_hex(const std::string& data);

// Checkpoint file: magic "NIVA", u32 version, config JSON, length-prefixed
// named tensors in 32-bit little-endian floats, then a SHA-256 digest of the
// payload. Loading then saving is byte-identical.
struct Checkpoint {
  std::uint32_t format_version = 1;
  std::string config_json;  // canonical config echo
  ParamStore params;        // values rounded to f32 on save
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace niva
