#include "refdiff/mels_format.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace refdiff::io {

namespace {

constexpr std::size_t kHeaderSize = 4 + 4 * 4 + 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& s, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace

std::string encode_mels(const dsp::MelSpectrogram& mel) {
  require(mel.n_mels() >= 1 && mel.frames() >= 1, "encode_mels: empty spectrogram");
  require(mel.hop >= 1, "encode_mels: hop must be positive");
  std::string out;
  out.reserve(kHeaderSize + static_cast<std::size_t>(mel.data.size()) * 4);
  out += "MELS";
  put_u32(out, kMelsVersion);
  put_u32(out, static_cast<std::uint32_t>(mel.n_mels()));
  put_u32(out, static_cast<std::uint32_t>(mel.frames()));
  put_u32(out, static_cast<std::uint32_t>(mel.hop));
  out.push_back(mel.is_log ? 1 : 0);
  for (Eigen::Index i = 0; i < mel.data.size(); ++i) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(mel.data.data()[i])));
  }
  return out;
}

dsp::MelSpectrogram decode_mels(const std::string& bytes) {
  if (bytes.size() < kHeaderSize || bytes.compare(0, 4, "MELS") != 0) {
    throw InputError("MELS: bad magic or truncated header");
  }
  const auto version = get_u32(bytes, 4);
  if (version != kMelsVersion) throw InputError("MELS: unsupported version " + std::to_string(version));
  const auto rows = get_u32(bytes, 8);
  const auto cols = get_u32(bytes, 12);
  const auto hop = get_u32(bytes, 16);
  const auto is_log = static_cast<unsigned char>(bytes[20]);
  if (rows == 0 || cols == 0 || hop == 0 || is_log > 1) throw InputError("MELS: invalid header fields");
  const std::size_t count = static_cast<std::size_t>(rows) * cols;
  if (bytes.size() != kHeaderSize + count * 4) throw InputError("MELS: payload size mismatch");

  dsp::MelSpectrogram mel;
  mel.data.resize(rows, cols);
  mel.hop = static_cast<int>(hop);
  mel.is_log = is_log == 1;
  for (std::size_t i = 0; i < count; ++i) {
    const float v = std::bit_cast<float>(get_u32(bytes, kHeaderSize + 4 * i));
    if (!std::isfinite(v)) throw InputError("MELS: non-finite value");
    if (!mel.is_log && v < 0.0f) throw InputError("MELS: negative value in linear spectrogram");
    mel.data.data()[i] = v;
  }
  return mel;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("write failed: " + path.string());
}

void write_mels(const std::filesystem::path& path, const dsp::MelSpectrogram& mel) {
  write_file(path, encode_mels(mel));
}

dsp::MelSpectrogram read_mels(const std::filesystem::path& path) {
  return decode_mels(read_file(path));
}

}  // namespace refdiff::io
