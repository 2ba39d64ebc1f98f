#pragma once

// AUGSAL1 tensor files:
//   bytes 0..6   magic "AUGSAL1"
//   byte  7      dtype tag (1 = float64, 2 = float32)
//   byte  8      rank r (1..8)
//   r x uint64   dimensions, outermost first
//   payload      row-major little-endian values
// Writers always emit float64, so write/read round-trips are bit-exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "augsal/error.hpp"
#include "augsal/tensor.hpp"

namespace augsal {

inline constexpr char kTensorMagic[7] = {'A', 'U', 'G', 'S', 'A', 'L', '1'};

enum class DType : std::uint8_t { kFloat64 = 1, kFloat32 = 2 };

/// Array of arbitrary rank as stored on disk.
struct RawArray {
  std::vector<std::uint64_t> shape;
  std::vector<double> values;
};

namespace detail {

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) out = (out << 8) | ((v >> (8 * i)) & 0xFF);
    return out;
  }
  return v;
}

inline void put_u64(std::string& buf, std::uint64_t v) {
  v = to_little(v);
  char bytes[8];
  std::memcpy(bytes, &v, 8);
  buf.append(bytes, 8);
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v;
  std::memcpy(&v, p, 8);
  return to_little(v);
}

}  // namespace detail

inline std::string encode_array(const RawArray& a) {
  require(!a.shape.empty() && a.shape.size() <= 8, ErrorCode::kShapeMismatch, "rank must be within 1..8");
  std::uint64_t count = 1;
  for (auto d : a.shape) count *= d;
  require(count == a.values.size(), ErrorCode::kShapeMismatch, "value count does not match shape");

  std::string buf(kTensorMagic, sizeof(kTensorMagic));
  buf.push_back(static_cast<char>(DType::kFloat64));
  buf.push_back(static_cast<char>(a.shape.size()));
  for (auto d : a.shape) detail::put_u64(buf, d);
  for (double v : a.values) detail::put_u64(buf, std::bit_cast<std::uint64_t>(v));
  return buf;
}

inline RawArray decode_array(const std::string& bytes, const std::string& origin = "<memory>") {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  require(n >= 9 && std::memcmp(p, kTensorMagic, sizeof(kTensorMagic)) == 0, ErrorCode::kMalformedHeader,
          origin + ": missing AUGSAL1 magic");
  const auto tag = p[7];
  require(tag == static_cast<unsigned char>(DType::kFloat64) || tag == static_cast<unsigned char>(DType::kFloat32),
          ErrorCode::kDtypeMismatch, origin + ": unknown dtype tag " + std::to_string(tag));
  const std::size_t rank = p[8];
  require(rank >= 1 && rank <= 8, ErrorCode::kMalformedHeader, origin + ": invalid rank " + std::to_string(rank));
  require(n >= 9 + 8 * rank, ErrorCode::kMalformedHeader, origin + ": header truncated");

  RawArray a;
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    a.shape.push_back(detail::get_u64(p + 9 + 8 * i));
    require(a.shape.back() < (1ULL << 40), ErrorCode::kMalformedHeader, origin + ": implausible dimension");
    count *= a.shape.back();
  }
  const std::size_t width = tag == static_cast<unsigned char>(DType::kFloat64) ? 8 : 4;
  const std::size_t offset = 9 + 8 * rank;
  require(n - offset >= count * width, ErrorCode::kTruncatedPayload,
          origin + ": payload holds " + std::to_string(n - offset) + " bytes, expected " +
              std::to_string(count * width));
  require(n - offset == count * width, ErrorCode::kMalformedHeader, origin + ": trailing bytes after payload");

  a.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* q = p + offset + i * width;
    if (width == 8) {
      a.values[i] = std::bit_cast<double>(detail::get_u64(q));
    } else {
      std::uint32_t bits;
      std::memcpy(&bits, q, 4);
      a.values[i] = static_cast<double>(std::bit_cast<float>(detail::to_little(bits)));
    }
  }
  return a;
}

inline void write_array(const RawArray& a, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  const auto buf = encode_array(a);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + path.string());
}

inline RawArray read_array(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_array(bytes, path.string());
}

inline void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  write_array({{t.channels(), t.height(), t.width()}, t.storage()}, path);
}
inline void write_tensor(const ImageTensor& t, const std::filesystem::path& path) { write_tensor(t.tensor(), path); }
inline void write_tensor(const LatentTensor& t, const std::filesystem::path& path) { write_tensor(t.tensor(), path); }
inline void write_tensor(const SaliencyMap& t, const std::filesystem::path& path) { write_tensor(t.tensor(), path); }

inline Tensor to_tensor(RawArray a, const std::string& origin) {
  require(a.shape.size() == 3, ErrorCode::kShapeMismatch,
          origin + ": expected rank-3 tensor, found rank " + std::to_string(a.shape.size()));
  return Tensor(a.shape[0], a.shape[1], a.shape[2], std::move(a.values));
}

inline Tensor read_tensor(const std::filesystem::path& path) { return to_tensor(read_array(path), path.string()); }

inline ImageTensor read_image_tensor(const std::filesystem::path& path) {
  auto t = read_tensor(path);
  require(t.channels() == 3, ErrorCode::kShapeMismatch, path.string() + ": image tensors carry 3 channels");
  return ImageTensor(std::move(t));
}

inline LatentTensor read_latent_tensor(const std::filesystem::path& path) { return LatentTensor(read_tensor(path)); }

inline SaliencyMap read_saliency_tensor(const std::filesystem::path& path) {
  auto t = read_tensor(path);
  require(t.channels() == 1, ErrorCode::kShapeMismatch, path.string() + ": saliency tensors carry 1 channel");
  return SaliencyMap(std::move(t));
}

}  // namespace augsal
