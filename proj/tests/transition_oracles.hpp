#pragma once

// Brute-force reimplementations of each analysis sub-step, written as plain
// loops straight from the definitions. Shared by unit and acceptance tests.

#include <algorithm>
#include <vector>

#include "refdiff/core.hpp"

namespace refdiff::oracle {

inline void band_energies(const Matrix& m, std::vector<double>& low, std::vector<double>& high) {
  const int F = static_cast<int>(m.rows());
  const int T = static_cast<int>(m.cols());
  low.assign(static_cast<std::size_t>(T), 0.0);
  high.assign(static_cast<std::size_t>(T), 0.0);
  for (int t = 0; t < T; ++t) {
    for (int f = 1; f <= F; ++f) {
      if (f <= F / 2) {
        low[static_cast<std::size_t>(t)] += m(f - 1, t);
      } else {
        high[static_cast<std::size_t>(t)] += m(f - 1, t);
      }
    }
  }
}

inline std::vector<double> ratio(const std::vector<double>& low, const std::vector<double>& high, double eps) {
  std::vector<double> r(low.size());
  for (std::size_t t = 0; t < low.size(); ++t) r[t] = high[t] / (low[t] + eps);
  return r;
}

// Explicitly padded sequence, then a plain window sum.
inline std::vector<double> smooth(const std::vector<double>& r, int k) {
  const int n = static_cast<int>(r.size());
  const int half = (k - 1) / 2;
  std::vector<double> padded;
  for (int i = -half; i < n + half; ++i) {
    int j = i;
    while (j < 0 || j >= n) {
      if (n == 1) {
        j = 0;
        break;
      }
      if (j < 0) j = -j;
      if (j >= n) j = 2 * (n - 1) - j;
    }
    padded.push_back(r[static_cast<std::size_t>(j)]);
  }
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    double acc = 0.0;
    for (int i = 0; i < k; ++i) acc += padded[static_cast<std::size_t>(t + i)];
    out[static_cast<std::size_t>(t)] = acc / k;
  }
  return out;
}

inline std::vector<int> sign_scan(const std::vector<double>& smoothed) {
  double mean = 0.0;
  for (double v : smoothed) mean += v;
  mean /= static_cast<double>(smoothed.size());
  std::vector<int> points;
  for (std::size_t t = 1; t < smoothed.size(); ++t) {
    const bool prev = smoothed[t - 1] - mean >= 0.0;
    const bool cur = smoothed[t] - mean >= 0.0;
    if (prev != cur) points.push_back(static_cast<int>(t));
  }
  return points;
}

// Marks every covered frame, then reads maximal runs back out.
inline std::vector<std::pair<int, int>> merged_windows(const std::vector<int>& points, int w, int T) {
  std::vector<bool> covered(static_cast<std::size_t>(T), false);
  for (int p : points) {
    const int s = std::max(0, p - w / 2);
    const int e = std::min(T, p + (w + 1) / 2);
    for (int t = s; t < e; ++t) covered[static_cast<std::size_t>(t)] = true;
  }
  std::vector<std::pair<int, int>> out;
  for (int t = 0; t < T;) {
    if (!covered[static_cast<std::size_t>(t)]) {
      ++t;
      continue;
    }
    int e = t;
    while (e < T && covered[static_cast<std::size_t>(e)]) ++e;
    out.emplace_back(t, e);
    t = e;
  }
  return out;
}

}  // namespace refdiff::oracle
