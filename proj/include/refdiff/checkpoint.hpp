#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "refdiff/denoiser.hpp"
#include "refdiff/diffusion.hpp"
#include "refdiff/synthgen.hpp"

// RDCK container:
//   "RDCK" | u32 version | u32 header length | JSON header | f64 LE blocks
// The header carries the architecture, the noise schedule, the normalisation
// statistics, a free-form training record, and the name and shape of every
// parameter block in for_each_param order.
namespace refdiff::denoiser {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  DenoiserParams params;
  diffusion::ScheduleConfig schedule;
  synthgen::NormStats stats;
  nlohmann::json training = nlohmann::json::object();
};

std::string encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Bitwise equality of every parameter block (and matching layout).
bool params_identical(const DenoiserParams& a, const DenoiserParams& b);

}  // namespace refdiff::denoiser
