#include "linknet/io.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <limits>

namespace linknet {

FormatError::FormatError(std::size_t offset, std::string field, const std::string& message)
    : std::runtime_error("byte " + std::to_string(offset) + ", field '" + field + "': " + message),
      offset_(offset),
      field_(std::move(field)) {}

namespace {

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Cursor {
 public:
  Cursor(std::span<const std::uint8_t> bytes, std::size_t& pos) : bytes_(bytes), pos_(pos) {}

  std::uint64_t le(int width, const char* field) {
    need(static_cast<std::size_t>(width), field);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* field) {
    need(n, field);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  void expect_magic(const char (&magic)[5], const char* field) {
    const std::size_t at = pos_;
    auto s = take(4, field);
    for (int i = 0; i < 4; ++i)
      if (s[static_cast<std::size_t>(i)] != static_cast<std::uint8_t>(magic[i]))
        throw FormatError(at, field, std::string("expected magic \"") + magic + "\"");
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* field) const {
    if (bytes_.size() - pos_ < n)
      throw FormatError(pos_, field,
                        "truncated: need " + std::to_string(n) + " bytes, have " + std::to_string(bytes_.size() - pos_));
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t& pos_;
};

template <typename Scalar>
void encode_impl(std::vector<std::uint8_t>& out, const Tensor<Scalar>& t, DType dtype) {
  if (t.rank() < 1 || t.rank() > 255) throw std::invalid_argument("tensor rank must be in [1, 255]");
  out.insert(out.end(), {'L', 'T', 'N', 'S'});
  out.push_back(kTensorFileVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  out.push_back(0);
  for (Index d : t.shape()) put_le(out, static_cast<std::uint64_t>(d), 8);
  out.reserve(out.size() + static_cast<std::size_t>(t.size()) * 4);
  for (Scalar v : t.values()) put_le(out, std::bit_cast<std::uint32_t>(v), 4);
}

}  // namespace

void encode_tensor(std::vector<std::uint8_t>& out, const TensorF& t) { encode_impl(out, t, DType::Real32); }
void encode_tensor(std::vector<std::uint8_t>& out, const TensorI& t) { encode_impl(out, t, DType::Int32); }

AnyTensor decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  Cursor cur(bytes, offset);
  cur.expect_magic("LTNS", "magic");
  const std::size_t version_at = cur.pos();
  const auto version = cur.le(1, "version");
  if (version != kTensorFileVersion)
    throw FormatError(version_at, "version", "unsupported version " + std::to_string(version));
  const std::size_t dtype_at = cur.pos();
  const auto dtype = cur.le(1, "dtype");
  if (dtype > 1) throw FormatError(dtype_at, "dtype", "unknown dtype " + std::to_string(dtype));
  const std::size_t rank_at = cur.pos();
  const auto rank = cur.le(1, "rank");
  if (rank == 0) throw FormatError(rank_at, "rank", "rank must be >= 1");
  const std::size_t reserved_at = cur.pos();
  if (cur.le(1, "reserved") != 0) throw FormatError(reserved_at, "reserved", "must be 0");

  Shape shape;
  std::uint64_t count = 1;
  for (std::uint64_t i = 0; i < rank; ++i) {
    const std::size_t at = cur.pos();
    const std::uint64_t d = cur.le(8, "dims");
    if (d == 0) throw FormatError(at, "dims", "dimension " + std::to_string(i) + " is zero");
    if (d > static_cast<std::uint64_t>(std::numeric_limits<Index>::max()) ||
        count > std::numeric_limits<std::uint64_t>::max() / 4 / d)
      throw FormatError(at, "dims", "element count overflows");
    count *= d;
    shape.push_back(static_cast<Index>(d));
  }
  if (count * 4 > cur.remaining())
    throw FormatError(cur.pos(), "payload",
                      "truncated: need " + std::to_string(count * 4) + " bytes, have " + std::to_string(cur.remaining()));
  auto payload = cur.take(static_cast<std::size_t>(count * 4), "payload");
  auto word = [&](std::size_t i) {
    std::uint32_t v = 0;
    for (std::size_t b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(payload[4 * i + b]) << (8 * b);
    return v;
  };
  if (dtype == 0) {
    std::vector<float> data(static_cast<std::size_t>(count));
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::bit_cast<float>(word(i));
    return TensorF(std::move(shape), std::move(data));
  }
  std::vector<std::int32_t> data(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::bit_cast<std::int32_t>(word(i));
  return TensorI(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.size() > std::numeric_limits<std::uint32_t>::max()) throw std::invalid_argument("too many records");
  std::vector<std::uint8_t> out{'L', 'K', 'P', 'T', kCheckpointVersion};
  put_le(out, ckpt.size(), 4);
  for (const auto& [path, tensor] : ckpt) {  // std::map iterates in sorted order
    if (path.empty() || path.size() > 0xFFFF) throw std::invalid_argument("checkpoint path length out of range");
    put_le(out, path.size(), 2);
    out.insert(out.end(), path.begin(), path.end());
    std::visit([&](const auto& t) { encode_tensor(out, t); }, tensor);
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  Cursor cur(bytes, pos);
  cur.expect_magic("LKPT", "magic");
  const std::size_t version_at = cur.pos();
  const auto version = cur.le(1, "version");
  if (version != kCheckpointVersion)
    throw FormatError(version_at, "version", "unsupported checkpoint version " + std::to_string(version));
  const auto count = cur.le(4, "record_count");
  Checkpoint out;
  std::string previous;
  for (std::uint64_t r = 0; r < count; ++r) {
    const std::size_t len_at = cur.pos();
    const auto len = cur.le(2, "path_length");
    if (len == 0) throw FormatError(len_at, "path_length", "empty path");
    const std::size_t path_at = cur.pos();
    auto raw = cur.take(static_cast<std::size_t>(len), "path");
    std::string path(raw.begin(), raw.end());
    if (r > 0 && !(previous < path))
      throw FormatError(path_at, "path", "paths must be unique and sorted ('" + path + "' after '" + previous + "')");
    out.emplace(path, decode_tensor(bytes, pos));
    previous = std::move(path);
  }
  if (cur.remaining() != 0) throw FormatError(cur.pos(), "trailer", "unexpected trailing bytes");
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

void save_tensor(const std::filesystem::path& path, const TensorF& t) {
  std::vector<std::uint8_t> bytes;
  encode_tensor(bytes, t);
  write_file(path, bytes);
}

void save_tensor(const std::filesystem::path& path, const TensorI& t) {
  std::vector<std::uint8_t> bytes;
  encode_tensor(bytes, t);
  write_file(path, bytes);
}

AnyTensor load_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  AnyTensor t = decode_tensor(bytes, pos);
  if (pos != bytes.size()) throw FormatError(pos, "trailer", "unexpected trailing bytes in " + path.string());
  return t;
}

TensorF load_real_tensor(const std::filesystem::path& path) {
  AnyTensor t = load_tensor(path);
  if (auto* f = std::get_if<TensorF>(&t)) return std::move(*f);
  throw FormatError(5, "dtype", path.string() + ": expected real32 tensor");
}

TensorI load_int_tensor(const std::filesystem::path& path) {
  AnyTensor t = load_tensor(path);
  if (auto* i = std::get_if<TensorI>(&t)) return std::move(*i);
  throw FormatError(5, "dtype", path.string() + ": expected int32 tensor");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace linknet
