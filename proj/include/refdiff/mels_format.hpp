#pragma once

#include <filesystem>
#include <string>

#include "refdiff/dsp.hpp"

namespace refdiff::io {

// "MELS" container:
//   magic "MELS" | u32 version (1) | u32 F | u32 T | u32 hop | u8 is_log |
//   F*T float32, frequency-major, little endian.
// Values are stored as float32, so a read returns the float-rounded values.
inline constexpr std::uint32_t kMelsVersion = 1;

std::string encode_mels(const dsp::MelSpectrogram& mel);
dsp::MelSpectrogram decode_mels(const std::string& bytes);

void write_mels(const std::filesystem::path& path, const dsp::MelSpectrogram& mel);
dsp::MelSpectrogram read_mels(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace refdiff::io
