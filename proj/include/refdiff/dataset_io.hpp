#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "refdiff/synthgen.hpp"

// On-disk datasets: a JSON-lines manifest next to per-sample MELS files
// (normalised log domain). Each record embeds the score, the oracle
// regions, the condition matrix and the normalisation statistics.
namespace refdiff::io {

nlohmann::json manifest_record(const synthgen::SynthSample& s, int index, const synthgen::NormStats& stats,
                               const std::string& gt_file, const std::string& ref_file);

// Writes manifest.jsonl plus sample_<i>_gt.mels / sample_<i>_ref.mels into
// `dir` and returns the manifest path.
std::filesystem::path write_dataset(const synthgen::Dataset& ds, const std::filesystem::path& dir);

// MELS paths in the manifest are resolved relative to the manifest's directory.
synthgen::Dataset read_dataset(const std::filesystem::path& manifest);

}  // namespace refdiff::io
