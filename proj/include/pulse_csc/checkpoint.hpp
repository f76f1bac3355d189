#ifndef PULSE_CSC_CHECKPOINT_HPP
#define PULSE_CSC_CHECKPOINT_HPP

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "pulse_csc/error.hpp"
#include "pulse_csc/unfolded.hpp"

namespace pulse_csc {

// Binary layout, all little-endian:
//   "CSCD" | u32 version | u32 M | u32 L | u32 K | u32 N_train
//   | f64 decoder[M*L] | f64 W1[k][M*L] (k < K) | f64 W2[k][M*M*L] (k < K-1) | f64 theta[k][M] (k < K)
//   | u32 crc32(everything after the magic, up to the crc)
inline constexpr std::array<char, 4> checkpoint_magic{'C', 'S', 'C', 'D'};
inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

inline void put_f64(std::vector<unsigned char>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xffu));
}

class ByteReader {
public:
  explicit ByteReader(const std::vector<unsigned char>& buf) : buf_(buf) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  [[nodiscard]] std::size_t position() const noexcept { return pos_; }
  void seek(std::size_t p) { pos_ = p; }

private:
  void need(std::size_t n) const {
    require(pos_ + n <= buf_.size(), ErrorCode::checkpoint, "checkpoint truncated");
  }

  const std::vector<unsigned char>& buf_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t len) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(len)));
}

}  // namespace detail

/// Serializes a model whose banks all have L taps.
inline std::vector<unsigned char> encode_checkpoint(const UnfoldedModel& model) {
  model.validate();
  for (const auto& b : model.w1) require(b.length == model.L, ErrorCode::checkpoint, "W1 bank length != L");
  for (const auto& b : model.w2) require(b.length == model.L, ErrorCode::checkpoint, "W2 bank length != L");

  std::vector<unsigned char> out(checkpoint_magic.begin(), checkpoint_magic.end());
  detail::put_u32(out, checkpoint_version);
  detail::put_u32(out, static_cast<std::uint32_t>(model.M));
  detail::put_u32(out, static_cast<std::uint32_t>(model.L));
  detail::put_u32(out, static_cast<std::uint32_t>(model.K));
  detail::put_u32(out, model.n_train);
  for (auto group : model.parameter_groups())
    for (double v : group) detail::put_f64(out, v);
  detail::put_u32(out, detail::crc32_of(out.data() + 4, out.size() - 4));
  return out;
}

inline UnfoldedModel decode_checkpoint(const std::vector<unsigned char>& buf) {
  require(buf.size() >= 4 + 5 * 4 + 4 && std::memcmp(buf.data(), checkpoint_magic.data(), 4) == 0,
          ErrorCode::checkpoint, "missing CSCD magic");
  const std::size_t crc_pos = buf.size() - 4;
  detail::ByteReader tail(buf);
  tail.seek(crc_pos);
  require(tail.u32() == detail::crc32_of(buf.data() + 4, crc_pos - 4), ErrorCode::checkpoint, "CRC mismatch");

  detail::ByteReader in(buf);
  in.seek(4);
  const std::uint32_t version = in.u32();
  require(version == checkpoint_version, ErrorCode::checkpoint, "unsupported checkpoint version " + std::to_string(version));
  UnfoldedModel model;
  model.M = in.u32();
  model.L = in.u32();
  model.K = in.u32();
  model.n_train = in.u32();
  require(model.M >= 1 && model.L >= 1 && model.K >= 1, ErrorCode::checkpoint, "invalid dimensions");
  const std::size_t expected = 4 + 5 * 4 + 8 * (model.M * model.L * (1 + model.K) + model.M * model.M * model.L * (model.K - 1) + model.M * model.K) + 4;
  require(buf.size() == expected, ErrorCode::checkpoint, "payload size does not match dimensions");

  model.decoder = Dictionary(model.M, model.L, std::vector<double>(model.M * model.L));
  model.w1.assign(model.K, ConvBank(model.M, 1, model.L));
  model.w2.assign(model.K - 1, ConvBank(model.M, model.M, model.L));
  model.theta.assign(model.K, std::vector<double>(model.M));
  for (auto group : model.parameter_groups())
    for (double& v : group) v = in.f64();
  model.validate();
  return model;
}

inline void save_checkpoint(const UnfoldedModel& model, const std::string& path) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), ErrorCode::io, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(f.good(), ErrorCode::io, "write failed for " + path);
}

inline UnfoldedModel load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::checkpoint, "cannot open checkpoint " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(buf);
}

}  // namespace pulse_csc

#endif  // PULSE_CSC_CHECKPOINT_HPP
