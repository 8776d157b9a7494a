#include "refdiff/transition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace refdiff::transition {

bool TransitionRegionSet::contains(int frame) const {
  return std::any_of(regions.begin(), regions.end(),
                     [frame](const Region& r) { return r.start <= frame && frame < r.end; });
}

int TransitionRegionSet::covered_frames() const {
  int n = 0;
  for (const auto& r : regions) n += r.end - r.start;
  return n;
}

BandEnergies band_energies(const dsp::MelSpectrogram& mel) {
  if (mel.is_log) throw std::invalid_argument("band_energies: log-compressed input rejected");
  require(mel.n_mels() >= 2, "band_energies: need at least 2 frequency bins");
  if ((mel.data.array() < 0.0).any()) {
    throw std::invalid_argument("band_energies: negative energies");
  }
  const Eigen::Index half = mel.data.rows() / 2;
  BandEnergies e;
  e.low.resize(static_cast<std::size_t>(mel.frames()));
  e.high.resize(static_cast<std::size_t>(mel.frames()));
  for (int t = 0; t < mel.frames(); ++t) {
    double lo = 0.0;
    double hi = 0.0;
    for (Eigen::Index f = 0; f < half; ++f) lo += mel.data(f, t);
    for (Eigen::Index f = half; f < mel.data.rows(); ++f) hi += mel.data(f, t);
    e.low[static_cast<std::size_t>(t)] = lo;
    e.high[static_cast<std::size_t>(t)] = hi;
  }
  return e;
}

std::vector<double> energy_ratio(const std::vector<double>& low, const std::vector<double>& high,
                                 double eps) {
  require(low.size() == high.size(), "energy_ratio: length mismatch");
  require(eps > 0.0, "energy_ratio: eps must be positive");
  std::vector<double> r(low.size());
  for (std::size_t t = 0; t < low.size(); ++t) r[t] = high[t] / (low[t] + eps);
  return r;
}

std::vector<double> smooth_ratio(const std::vector<double>& ratio, int k) {
  require(k >= 1 && k % 2 == 1, "smooth_ratio: kernel size must be odd");
  const auto n = static_cast<std::ptrdiff_t>(ratio.size());
  require(n >= 1 && k <= 2 * n - 1, "smooth_ratio: kernel wider than 2T-1");
  const int half = (k - 1) / 2;
  std::vector<double> out(ratio.size());
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    double acc = 0.0;
    for (int i = -half; i <= half; ++i) acc += ratio[static_cast<std::size_t>(reflect_index(t + i, n))];
    out[static_cast<std::size_t>(t)] = acc / k;
  }
  return out;
}

EnergyRatioSeries make_series(std::vector<double> raw, int k) {
  EnergyRatioSeries s;
  s.smoothed = smooth_ratio(raw, k);
  s.raw = std::move(raw);
  s.kernel_size = k;
  s.mean = std::accumulate(s.smoothed.begin(), s.smoothed.end(), 0.0) /
           static_cast<double>(s.smoothed.size());
  return s;
}

std::vector<int> detect_transition_points(const EnergyRatioSeries& series) {
  const auto& r = series.smoothed;
  require(r.size() >= 2, "detect_transition_points: need at least 2 frames");
  auto sign = [&](std::size_t t) { return r[t] - series.mean < 0.0 ? -1 : 1; };
  std::vector<int> points;
  for (std::size_t t = 1; t < r.size(); ++t) {
    if (sign(t) != sign(t - 1)) points.push_back(static_cast<int>(t));
  }
  return points;
}

TransitionRegionSet build_regions(const std::vector<int>& points, int w, int total_frames) {
  require(w >= 1, "build_regions: window must be >= 1");
  require(total_frames >= 1, "build_regions: total_frames must be >= 1");
  require(std::is_sorted(points.begin(), points.end()), "build_regions: points must be sorted");
  TransitionRegionSet set;
  set.window = w;
  set.total_frames = total_frames;
  for (int p : points) {
    require(p >= 0 && p < total_frames, "build_regions: point out of range");
    const Region r{std::max(0, p - w / 2), std::min(total_frames, p + (w + 1) / 2)};
    if (!set.regions.empty() && r.start <= set.regions.back().end) {
      set.regions.back().end = std::max(set.regions.back().end, r.end);
    } else {
      set.regions.push_back(r);
    }
  }
  return set;
}

dsp::MelSpectrogram blur_regions(const dsp::MelSpectrogram& mel, const TransitionRegionSet& regions,
                                 const dsp::GaussianKernel& kernel) {
  if (regions.total_frames != mel.frames()) {
    throw std::invalid_argument("blur_regions: region set covers " +
                                std::to_string(regions.total_frames) + " frames, spectrogram has " +
                                std::to_string(mel.frames()));
  }
  // Regions are disjoint, so blurring them one after another never reads a
  // column another region has already modified.
  dsp::MelSpectrogram out = mel;
  for (const auto& r : regions.regions) out = dsp::gaussian_blur_2d(out, kernel, {r.start, r.end});
  return out;
}

WeightMap weight_map(const TransitionRegionSet& regions, int n_rows, double lambda_in) {
  require(lambda_in >= 1.0, "weight_map: lambda must be >= 1");
  require(n_rows >= 1, "weight_map: need at least one row");
  WeightMap w;
  w.lambda_in = lambda_in;
  w.data = Matrix::Ones(n_rows, regions.total_frames);
  for (const auto& r : regions.regions) {
    w.data.middleCols(r.start, r.end - r.start).setConstant(lambda_in);
  }
  return w;
}

Analysis analyze(const dsp::MelSpectrogram& mel, const AnalysisParams& params) {
  require(mel.frames() >= 2, "analyze: need at least 2 frames");
  require(params.k >= 1 && params.k % 2 == 1, "analyze: k must be odd");
  const auto energies = band_energies(mel);
  const int k = std::min(params.k, 2 * mel.frames() - 1);
  Analysis a;
  a.series = make_series(energy_ratio(energies.low, energies.high, params.eps), k);
  a.points = detect_transition_points(a.series);
  a.regions = build_regions(a.points, params.w, mel.frames());
  return a;
}

nlohmann::json region_report(const Analysis& analysis, int hop, const AnalysisParams& params) {
  nlohmann::json regions = nlohmann::json::array();
  for (const auto& r : analysis.regions.regions) regions.push_back({r.start, r.end});
  return {
      {"total_frames", analysis.regions.total_frames},
      {"hop", hop},
      {"points", analysis.points},
      {"regions", regions},
      {"params",
       {{"k", analysis.series.kernel_size},
        {"w", params.w},
        {"eps", params.eps},
        {"lambda", params.lambda}}},
  };
}

TransitionRegionSet regions_from_report(const nlohmann::json& report) {
  try {
    TransitionRegionSet set;
    set.total_frames = report.at("total_frames").get<int>();
    set.window = report.at("params").at("w").get<int>();
    for (const auto& r : report.at("regions")) {
      const Region reg{r.at(0).get<int>(), r.at(1).get<int>()};
      if (!(0 <= reg.start && reg.start < reg.end && reg.end <= set.total_frames) ||
          (!set.regions.empty() && reg.start <= set.regions.back().end)) {
        throw InputError("region report: regions must be sorted, disjoint and in range");
      }
      set.regions.push_back(reg);
    }
    return set;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("region report: ") + e.what());
  }
}

}  // namespace refdiff::transition
