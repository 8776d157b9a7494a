#pragma once

#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "refdiff/dsp.hpp"

// Pitch-transition analysis on mel-spectrograms: a high/low band energy
// ratio is smoothed, its crossings of the series mean mark transition
// points, and a window around each point becomes a transition region.
namespace refdiff::transition {

struct EnergyRatioSeries {
  std::vector<double> raw;
  std::vector<double> smoothed;
  double mean = 0.0;
  int kernel_size = 1;
};

struct Region {
  int start = 0;
  int end = 0;  // exclusive

  friend bool operator==(const Region&, const Region&) = default;
};

struct TransitionRegionSet {
  std::vector<Region> regions;  // sorted, disjoint, non-adjacent
  int window = 0;
  int total_frames = 0;

  [[nodiscard]] bool contains(int frame) const;
  [[nodiscard]] int covered_frames() const;
};

struct WeightMap {
  Matrix data;
  double lambda_in = 1.0;
  double base = 1.0;
};

struct AnalysisParams {
  int k = 9;
  int w = 8;
  double eps = 1e-6;
  double lambda = 2.0;
  int blur_size = 5;
  double blur_sigma = 1.0;
};

struct BandEnergies {
  std::vector<double> low;
  std::vector<double> high;
};

// Low band: rows [0, F/2); high band: rows [F/2, F).
BandEnergies band_energies(const dsp::MelSpectrogram& mel);

std::vector<double> energy_ratio(const std::vector<double>& low, const std::vector<double>& high,
                                 double eps = 1e-6);

// Uniform moving average of odd width k with reflect padding; 1 <= k <= 2T-1.
std::vector<double> smooth_ratio(const std::vector<double>& ratio, int k);

EnergyRatioSeries make_series(std::vector<double> raw, int k);

// Frames t >= 1 where sign(R_smooth - mean) changes, with sign(0) := +1.
std::vector<int> detect_transition_points(const EnergyRatioSeries& series);

TransitionRegionSet build_regions(const std::vector<int>& points, int w, int total_frames);

dsp::MelSpectrogram blur_regions(const dsp::MelSpectrogram& mel, const TransitionRegionSet& regions,
                                 const dsp::GaussianKernel& kernel);

WeightMap weight_map(const TransitionRegionSet& regions, int n_rows, double lambda_in);

struct Analysis {
  EnergyRatioSeries series;
  std::vector<int> points;
  TransitionRegionSet regions;
};

// band_energies -> energy_ratio -> smooth_ratio -> detect -> build_regions.
// k is reduced to the largest odd width the series length allows.
Analysis analyze(const dsp::MelSpectrogram& mel, const AnalysisParams& params = {});

nlohmann::json region_report(const Analysis& analysis, int hop, const AnalysisParams& params);
TransitionRegionSet regions_from_report(const nlohmann::json& report);

}  // namespace refdiff::transition
