#pragma once

// Binary tensor and checkpoint files. All integers little-endian.
//
// Tensor file:
//   "LTNS" | version u8 = 1 | dtype u8 (0 real32, 1 int32) | rank u8 | reserved u8 = 0
//   | rank x u64 dims | row-major payload
//
// Checkpoint file:
//   "LKPT" | version u8 = 1 | record count u32
//   | records sorted by path: path length u16 | utf-8 path | embedded tensor file

#include "linknet/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace linknet {

class FormatError : public std::runtime_error {
 public:
  FormatError(std::size_t offset, std::string field, const std::string& message);
  std::size_t offset() const { return offset_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t offset_;
  std::string field_;
};

enum class DType : std::uint8_t { Real32 = 0, Int32 = 1 };

using AnyTensor = std::variant<TensorF, TensorI>;
using Checkpoint = std::map<std::string, AnyTensor>;

inline constexpr std::uint8_t kTensorFileVersion = 1;
inline constexpr std::uint8_t kCheckpointVersion = 1;

void encode_tensor(std::vector<std::uint8_t>& out, const TensorF& t);
void encode_tensor(std::vector<std::uint8_t>& out, const TensorI& t);
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);

/// Decodes one tensor starting at `offset` (advanced past it). Offsets in
/// diagnostics are absolute within `bytes`.
AnyTensor decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

void save_tensor(const std::filesystem::path& path, const TensorF& t);
void save_tensor(const std::filesystem::path& path, const TensorI& t);
AnyTensor load_tensor(const std::filesystem::path& path);
TensorF load_real_tensor(const std::filesystem::path& path);
TensorI load_int_tensor(const std::filesystem::path& path);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace linknet
