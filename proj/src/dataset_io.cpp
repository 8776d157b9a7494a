#include "refdiff/dataset_io.hpp"

#include <fstream>
#include <sstream>

#include "refdiff/mels_format.hpp"

namespace refdiff::io {

nlohmann::json manifest_record(const synthgen::SynthSample& s, int index, const synthgen::NormStats& stats,
                               const std::string& gt_file, const std::string& ref_file) {
  nlohmann::json regions = nlohmann::json::array();
  for (const auto& r : s.true_regions.regions) regions.push_back({r.start, r.end});
  nlohmann::json cond = nlohmann::json::array();
  for (Eigen::Index r = 0; r < s.cond.rows(); ++r) {
    std::vector<double> row(s.cond.row(r).begin(), s.cond.row(r).end());
    cond.push_back(row);
  }
  return {{"index", index},
          {"seed", s.seed},
          {"frames", s.frames()},
          {"gt", gt_file},
          {"ref", ref_file},
          {"score", synthgen::score_to_json(s.score)},
          {"regions", regions},
          {"region_window", s.true_regions.window},
          {"cond", cond},
          {"norm_stats", synthgen::stats_to_json(stats)}};
}

std::filesystem::path write_dataset(const synthgen::Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string manifest;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    const std::string gt = "sample_" + std::to_string(i) + "_gt.mels";
    const std::string ref = "sample_" + std::to_string(i) + "_ref.mels";
    write_mels(dir / gt, s.gt_mel);
    write_mels(dir / ref, s.ref_mel);
    manifest += manifest_record(s, static_cast<int>(i), ds.stats, gt, ref).dump() + "\n";
  }
  const auto path = dir / "manifest.jsonl";
  write_file(path, manifest);
  return path;
}

synthgen::Dataset read_dataset(const std::filesystem::path& manifest) {
  std::istringstream lines(read_file(manifest));
  const auto base = manifest.parent_path();
  synthgen::Dataset ds;
  std::string line;
  bool first = true;
  int lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = manifest.string() + ":" + std::to_string(lineno);
    try {
      const auto rec = nlohmann::json::parse(line);
      synthgen::SynthSample s;
      s.score = synthgen::score_from_json(rec.at("score"));
      s.seed = rec.at("seed").get<std::uint64_t>();
      s.gt_mel = read_mels(base / rec.at("gt").get<std::string>());
      s.ref_mel = read_mels(base / rec.at("ref").get<std::string>());
      const auto& cond = rec.at("cond");
      if (!cond.is_array() || cond.empty()) throw InputError(where + ": empty condition matrix");
      s.cond.resize(static_cast<Eigen::Index>(cond.size()), s.gt_mel.frames());
      for (std::size_t r = 0; r < cond.size(); ++r) {
        const auto row = cond[r].get<std::vector<double>>();
        if (static_cast<Eigen::Index>(row.size()) != s.gt_mel.frames()) {
          throw InputError(where + ": condition length differs from frame count");
        }
        for (std::size_t c = 0; c < row.size(); ++c) {
          s.cond(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
        }
      }
      s.true_regions.window = rec.at("region_window").get<int>();
      s.true_regions.total_frames = s.gt_mel.frames();
      for (const auto& r : rec.at("regions")) {
        s.true_regions.regions.push_back({r.at(0).get<int>(), r.at(1).get<int>()});
      }
      if (s.ref_mel.frames() != s.gt_mel.frames() || s.ref_mel.n_mels() != s.gt_mel.n_mels() ||
          s.score.total_frames() != s.gt_mel.frames()) {
        throw InputError(where + ": frame counts disagree");
      }
      const auto stats = synthgen::stats_from_json(rec.at("norm_stats"));
      if (first) {
        ds.stats = stats;
        ds.config.synth = s.score.config;
        ds.config.region_window = s.true_regions.window;
        first = false;
      } else if (stats.log_min != ds.stats.log_min || stats.log_max != ds.stats.log_max) {
        throw InputError(where + ": normalisation statistics differ between records");
      }
      ds.samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(where + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw InputError(where + ": " + e.what());
    }
  }
  if (ds.samples.empty()) throw InputError("manifest " + manifest.string() + " has no records");
  return ds;
}

}  // namespace refdiff::io
