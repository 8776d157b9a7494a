#include "refdiff/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>

namespace refdiff::synthgen {

namespace {

using Rng = std::mt19937_64;

std::vector<double> mel_centers(const SynthConfig& c) {
  return dsp::mel_filterbank(c.sample_rate, c.frame / 2 + 1, c.n_mels, c.fmin, c.fmax).center_freqs;
}

int nearest_bin(const std::vector<double>& centers, double hz) {
  const double target = dsp::hz_to_mel(hz);
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const double d = std::abs(dsp::hz_to_mel(centers[i]) - target);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

// Per frame: up to two (note index, gain) pairs.
struct FrameMix {
  int note_a = 0;
  double gain_a = 1.0;
  int note_b = -1;
  double gain_b = 0.0;
};

std::vector<FrameMix> frame_mix(const ScoreSpec& score) {
  const int total = score.total_frames();
  std::vector<FrameMix> mix(static_cast<std::size_t>(total));
  int start = 0;
  for (std::size_t n = 0; n < score.notes.size(); ++n) {
    for (int t = start; t < start + score.notes[n].frames; ++t) {
      mix[static_cast<std::size_t>(t)].note_a = static_cast<int>(n);
    }
    start += score.notes[n].frames;
  }
  const auto bounds = score.boundaries();
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    const int b = bounds[i];
    for (int j = b - 1; j <= b + 1; ++j) {
      const double incoming = (j - b + 2) / 4.0;  // 0.25, 0.5, 0.75
      auto& m = mix[static_cast<std::size_t>(j)];
      m.note_a = static_cast<int>(i);
      m.gain_a = 1.0 - incoming;
      m.note_b = static_cast<int>(i + 1);
      m.gain_b = incoming;
    }
  }
  return mix;
}

std::vector<double> boundary_proximity(const ScoreSpec& score) {
  std::vector<double> m(static_cast<std::size_t>(score.total_frames()), 0.0);
  for (int b : score.boundaries()) {
    for (int t = std::max(0, b - kSmearRadius); t <= std::min(score.total_frames() - 1, b + kSmearRadius);
         ++t) {
      const double w = 1.0 - std::abs(t - b) / static_cast<double>(kSmearRadius + 1);
      m[static_cast<std::size_t>(t)] = std::max(m[static_cast<std::size_t>(t)], w);
    }
  }
  return m;
}

}  // namespace

int ScoreSpec::total_frames() const {
  int n = 0;
  for (const auto& note : notes) n += note.frames;
  return n;
}

std::vector<int> ScoreSpec::boundaries() const {
  std::vector<int> b;
  int pos = 0;
  for (std::size_t i = 0; i + 1 < notes.size(); ++i) {
    pos += notes[i].frames;
    b.push_back(pos);
  }
  return b;
}

void validate_score(const ScoreSpec& score) {
  require(!score.notes.empty(), "score: no notes");
  for (const auto& n : score.notes) {
    require(n.pitch_hz >= 80.0 && n.pitch_hz <= 1000.0, "score: pitch outside [80, 1000] Hz");
    require(n.frames >= 4, "score: note shorter than 4 frames");
  }
  require(score.config.n_mels >= 2, "score: n_mels must be >= 2");
}

double midi_to_hz(int midi) { return 440.0 * std::pow(2.0, (midi - 69) / 12.0); }

dsp::MelSpectrogram render_mel(const ScoreSpec& score, std::uint64_t seed) {
  validate_score(score);
  const auto& cfg = score.config;
  const auto centers = mel_centers(cfg);
  const int F = cfg.n_mels;
  const int T = score.total_frames();

  std::vector<std::array<int, kHarmonics>> bins(score.notes.size());
  for (std::size_t n = 0; n < score.notes.size(); ++n) {
    for (int h = 1; h <= kHarmonics; ++h) {
      const double f = h * score.notes[n].pitch_hz;
      bins[n][static_cast<std::size_t>(h - 1)] =
          f <= dsp::mel_to_hz(dsp::hz_to_mel(cfg.fmax <= 0 ? cfg.sample_rate / 2.0 : cfg.fmax))
              ? nearest_bin(centers, f)
              : -1;
    }
  }

  Rng rng(seed);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  const auto mix = frame_mix(score);

  dsp::MelSpectrogram mel;
  mel.hop = cfg.hop;
  mel.is_log = false;
  mel.data.resize(F, T);
  for (int t = 0; t < T; ++t) {
    for (int f = 0; f < F; ++f) {
      const double tilt = 1.0 - 0.8 * f / static_cast<double>(F - 1);
      mel.data(f, t) = 0.01 * tilt * (1.0 + 0.2 * jitter(rng));
    }
    const auto& m = mix[static_cast<std::size_t>(t)];
    auto deposit = [&](int note, double gain) {
      for (int h = 1; h <= kHarmonics; ++h) {
        const double amp = gain / h * (1.0 + 0.05 * jitter(rng));
        const int bin = bins[static_cast<std::size_t>(note)][static_cast<std::size_t>(h - 1)];
        if (bin >= 0) mel.data(bin, t) += amp;
      }
    };
    deposit(m.note_a, m.gain_a);
    if (m.note_b >= 0) deposit(m.note_b, m.gain_b);
  }
  return mel;
}

dsp::MelSpectrogram degrade_reference(const dsp::MelSpectrogram& gt, const ScoreSpec& score,
                                      double strength, std::uint64_t seed) {
  require(strength >= 0.0 && strength <= 1.0, "degrade_reference: strength must be in [0, 1]");
  require(!gt.is_log, "degrade_reference: expects a linear spectrogram");
  require(gt.frames() == score.total_frames(), "degrade_reference: frame count differs from score");
  const int F = gt.n_mels();
  const int T = gt.frames();
  const auto prox = boundary_proximity(score);

  dsp::MelSpectrogram out = gt;
  for (int t = 0; t < T; ++t) {
    const double m = strength * prox[static_cast<std::size_t>(t)];
    if (m <= 0.0) continue;
    Vector avg = Vector::Zero(F);
    for (int j = -kSmearRadius; j <= kSmearRadius; ++j) {
      avg += gt.data.col(std::clamp(t + j, 0, T - 1));
    }
    avg /= 2 * kSmearRadius + 1;
    Vector col = (1.0 - m) * gt.data.col(t) + m * avg;
    const double flat = col.mean();
    col = (1.0 - 0.3 * m) * col + Vector::Constant(F, 0.3 * m * flat);
    out.data.col(t) = col;
  }

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = 0; t < T; ++t) {
    const double m = strength * prox[static_cast<std::size_t>(t)];
    for (int f = 0; f < F; ++f) {
      const double glitch = normal(rng);
      const double floor_noise = normal(rng);
      out.data(f, t) *= std::exp(0.8 * m * glitch) * std::max(0.0, 1.0 + 0.005 * floor_noise);
    }
  }
  return out;
}

transition::TransitionRegionSet true_transition_regions(const ScoreSpec& score, int w) {
  validate_score(score);
  return transition::build_regions(score.boundaries(), w, score.total_frames());
}

F0Contour score_f0(const ScoreSpec& score) {
  validate_score(score);
  const auto mix = frame_mix(score);
  F0Contour c;
  c.hz.resize(mix.size());
  c.voiced.assign(mix.size(), true);
  for (std::size_t t = 0; t < mix.size(); ++t) {
    const auto& m = mix[t];
    const double a = std::log(score.notes[static_cast<std::size_t>(m.note_a)].pitch_hz);
    const double b =
        m.note_b >= 0 ? std::log(score.notes[static_cast<std::size_t>(m.note_b)].pitch_hz) : a;
    c.hz[t] = std::exp(m.gain_a * a + (1.0 - m.gain_a) * b);
  }
  return c;
}

std::vector<double> normalize_f0(const std::vector<double>& f0, const std::vector<bool>& voiced) {
  require(f0.size() == voiced.size(), "normalize_f0: length mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < f0.size(); ++i) {
    if (voiced[i]) {
      sum += f0[i];
      ++n;
    }
  }
  if (n < 2) throw std::invalid_argument("normalize_f0: need at least 2 voiced frames");
  const double mean = sum / static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < f0.size(); ++i) {
    if (voiced[i]) var += (f0[i] - mean) * (f0[i] - mean);
  }
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
    throw std::invalid_argument("normalize_f0: voiced F0 has zero variance");
  }
  std::vector<double> out(f0.size(), 0.0);
  for (std::size_t i = 0; i < f0.size(); ++i) {
    if (voiced[i]) out[i] = (f0[i] - mean) / sd;
  }
  return out;
}

Matrix condition_matrix(const ScoreSpec& score) {
  const auto f0 = score_f0(score);
  const auto norm = normalize_f0(f0.hz, f0.voiced);
  Matrix c(2, static_cast<Eigen::Index>(norm.size()));
  for (std::size_t t = 0; t < norm.size(); ++t) {
    c(0, static_cast<Eigen::Index>(t)) = norm[t];
    c(1, static_cast<Eigen::Index>(t)) = f0.voiced[t] ? 1.0 : 0.0;
  }
  return c;
}

dsp::MelSpectrogram normalize(const dsp::MelSpectrogram& linear, const NormStats& stats) {
  require(stats.log_max > stats.log_min, "normalize: empty log range");
  dsp::MelSpectrogram out = dsp::log_compress(linear, stats.floor);
  const double scale = 2.0 / (stats.log_max - stats.log_min);
  out.data = ((out.data.array() - stats.log_min) * scale - 1.0).matrix();
  return out;
}

dsp::MelSpectrogram denormalize(const dsp::MelSpectrogram& normalized, const NormStats& stats) {
  require(normalized.is_log, "denormalize: expects a normalised log spectrogram");
  dsp::MelSpectrogram out = normalized;
  const double half_range = (stats.log_max - stats.log_min) / 2.0;
  out.data = ((normalized.data.array() + 1.0) * half_range + stats.log_min).exp().matrix();
  out.is_log = false;
  return out;
}

nlohmann::json stats_to_json(const NormStats& s) {
  return {{"log_min", s.log_min}, {"log_max", s.log_max}, {"floor", s.floor}};
}

NormStats stats_from_json(const nlohmann::json& j) {
  return {j.at("log_min").get<double>(), j.at("log_max").get<double>(), j.at("floor").get<double>()};
}

ScoreSpec random_score(const DatasetConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  ScoreSpec score;
  score.config = cfg.synth;
  const int n = uniform_int(cfg.min_notes, cfg.max_notes);
  bool high = uniform_int(0, 1) == 1;
  for (int i = 0; i < n; ++i) {
    const int midi = high ? uniform_int(cfg.high_midi_min, cfg.high_midi_max)
                          : uniform_int(cfg.low_midi_min, cfg.low_midi_max);
    score.notes.push_back({midi_to_hz(midi), uniform_int(cfg.min_frames, cfg.max_frames)});
    high = !high;
  }
  return score;
}

SynthSample make_sample(const ScoreSpec& score, std::uint64_t seed, const NormStats& stats,
                        const DatasetConfig& cfg) {
  SynthSample s;
  s.score = score;
  s.seed = seed;
  const auto gt = render_mel(score, seed);
  const auto ref = degrade_reference(gt, score, cfg.degrade_strength, splitmix64(seed));
  s.gt_mel = normalize(gt, stats);
  s.ref_mel = normalize(ref, stats);
  s.cond = condition_matrix(score);
  s.true_regions = true_transition_regions(score, cfg.region_window);
  return s;
}

Dataset make_dataset(int n, std::uint64_t seed, const DatasetConfig& cfg,
                     std::optional<NormStats> stats) {
  require(n >= 1, "make_dataset: n must be >= 1");
  std::vector<ScoreSpec> scores;
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < n; ++i) {
    seeds.push_back(derive_seed(seed, static_cast<std::uint64_t>(i)));
    scores.push_back(random_score(cfg, seeds.back()));
  }

  Dataset ds;
  ds.config = cfg;
  if (stats) {
    ds.stats = *stats;
  } else {
    ds.stats.log_min = std::numeric_limits<double>::infinity();
    ds.stats.log_max = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      const auto gt = dsp::log_compress(render_mel(scores[static_cast<std::size_t>(i)],
                                                   seeds[static_cast<std::size_t>(i)]),
                                        ds.stats.floor);
      ds.stats.log_min = std::min(ds.stats.log_min, gt.data.minCoeff());
      ds.stats.log_max = std::max(ds.stats.log_max, gt.data.maxCoeff());
    }
  }
  for (int i = 0; i < n; ++i) {
    ds.samples.push_back(make_sample(scores[static_cast<std::size_t>(i)],
                                     seeds[static_cast<std::size_t>(i)], ds.stats, cfg));
  }
  return ds;
}

nlohmann::json score_to_json(const ScoreSpec& s) {
  nlohmann::json notes = nlohmann::json::array();
  for (const auto& n : s.notes) notes.push_back({n.pitch_hz, n.frames});
  return {{"notes", notes},
          {"sample_rate", s.config.sample_rate},
          {"hop", s.config.hop},
          {"frame", s.config.frame},
          {"n_mels", s.config.n_mels},
          {"fmin", s.config.fmin},
          {"fmax", s.config.fmax}};
}

ScoreSpec score_from_json(const nlohmann::json& j) {
  ScoreSpec s;
  for (const auto& n : j.at("notes")) s.notes.push_back({n.at(0).get<double>(), n.at(1).get<int>()});
  s.config.sample_rate = j.value("sample_rate", s.config.sample_rate);
  s.config.hop = j.value("hop", s.config.hop);
  s.config.frame = j.value("frame", s.config.frame);
  s.config.n_mels = j.value("n_mels", s.config.n_mels);
  s.config.fmin = j.value("fmin", s.config.fmin);
  s.config.fmax = j.value("fmax", s.config.fmax);
  validate_score(s);
  return s;
}

}  // namespace refdiff::synthgen
