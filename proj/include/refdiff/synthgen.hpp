#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "refdiff/dsp.hpp"
#include "refdiff/transition.hpp"

// Synthetic ground truth: harmonic mel-spectrograms rendered from note
// sequences, references degraded around note boundaries, and the oracle
// transition regions that go with them.
namespace refdiff::synthgen {

struct Note {
  double pitch_hz = 0.0;
  int frames = 0;
};

struct SynthConfig {
  int sample_rate = 44100;
  int hop = 128;
  int frame = 512;
  int n_mels = 80;
  double fmin = 0.0;
  // Keeps the band split near 1.3 kHz so that the upper harmonics of
  // high notes land in the upper half of the mel bins.
  double fmax = 5000.0;
};

struct ScoreSpec {
  std::vector<Note> notes;
  SynthConfig config;

  [[nodiscard]] int total_frames() const;
  // Cumulative note boundaries, excluding 0 and T.
  [[nodiscard]] std::vector<int> boundaries() const;
};

void validate_score(const ScoreSpec& score);

inline constexpr int kHarmonics = 5;
inline constexpr int kCrossfadeFrames = 3;
inline constexpr int kSmearRadius = 4;

// Linear-domain rendering: per note, harmonics 1..5 with 1/h amplitude at
// their nearest mel bins, a tilted low-level background, seeded jitter, and
// 3-frame linear cross-fades at note boundaries.
dsp::MelSpectrogram render_mel(const ScoreSpec& score, std::uint64_t seed);

// Emulates an acoustic model's transition defects: within ±4 frames of each
// boundary the spectrogram is temporally smeared, spectrally flattened and
// perturbed by log-normal glitches, all scaled by `strength`; everywhere a
// 0.5% multiplicative noise floor is added.
dsp::MelSpectrogram degrade_reference(const dsp::MelSpectrogram& gt, const ScoreSpec& score,
                                      double strength, std::uint64_t seed);

transition::TransitionRegionSet true_transition_regions(const ScoreSpec& score, int w);

struct F0Contour {
  std::vector<double> hz;
  std::vector<bool> voiced;
};

F0Contour score_f0(const ScoreSpec& score);

// Zero mean, unit variance over voiced frames; unvoiced frames become 0.
std::vector<double> normalize_f0(const std::vector<double>& f0, const std::vector<bool>& voiced);

// D = 2 rows: normalised F0, voicing flag.
Matrix condition_matrix(const ScoreSpec& score);

struct NormStats {
  double log_min = 0.0;
  double log_max = 0.0;
  double floor = 1e-5;
};

// log-compress then map [log_min, log_max] onto [-1, 1].
dsp::MelSpectrogram normalize(const dsp::MelSpectrogram& linear, const NormStats& stats);
// Inverse of normalize back to linear energies (floor-clipped values stay at the floor).
dsp::MelSpectrogram denormalize(const dsp::MelSpectrogram& normalized, const NormStats& stats);

nlohmann::json stats_to_json(const NormStats& s);
NormStats stats_from_json(const nlohmann::json& j);

struct SynthSample {
  ScoreSpec score;
  std::uint64_t seed = 0;
  dsp::MelSpectrogram gt_mel;   // normalised log domain
  dsp::MelSpectrogram ref_mel;  // normalised log domain, degraded
  Matrix cond;                  // 2 x T
  transition::TransitionRegionSet true_regions;

  [[nodiscard]] int frames() const { return gt_mel.frames(); }
};

struct DatasetConfig {
  SynthConfig synth;
  int min_notes = 3;
  int max_notes = 8;
  int min_frames = 8;
  int max_frames = 40;
  // Notes alternate between these MIDI registers so that every boundary is
  // a pitch jump across the band split.
  int low_midi_min = 45;
  int low_midi_max = 57;
  int high_midi_min = 66;
  int high_midi_max = 78;
  double degrade_strength = 1.0;
  int region_window = 8;
};

struct Dataset {
  std::vector<SynthSample> samples;
  NormStats stats;
  DatasetConfig config;
};

ScoreSpec random_score(const DatasetConfig& cfg, std::uint64_t seed);

SynthSample make_sample(const ScoreSpec& score, std::uint64_t seed, const NormStats& stats,
                        const DatasetConfig& cfg);

// Samples are deterministic per (seed, index). Without `stats` the
// normalisation range is taken from the ground-truth spectrograms.
Dataset make_dataset(int n, std::uint64_t seed, const DatasetConfig& cfg = {},
                     std::optional<NormStats> stats = std::nullopt);

nlohmann::json score_to_json(const ScoreSpec& s);
ScoreSpec score_from_json(const nlohmann::json& j);

double midi_to_hz(int midi);

}  // namespace refdiff::synthgen
