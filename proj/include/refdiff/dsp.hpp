#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "refdiff/core.hpp"

namespace refdiff::dsp {

struct AudioBuffer {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 0;
};

struct MelSpectrogram {
  Matrix data;  // n_mels x frames
  int hop = 128;
  bool is_log = false;

  [[nodiscard]] int n_mels() const { return static_cast<int>(data.rows()); }
  [[nodiscard]] int frames() const { return static_cast<int>(data.cols()); }
};

struct MelFilterbank {
  Matrix weights;  // n_mels x n_bins
  std::vector<double> center_freqs;
};

struct GaussianKernel {
  std::vector<double> taps;
  double sigma = 1.0;

  [[nodiscard]] int radius() const { return static_cast<int>(taps.size() / 2); }
};

enum class Window { hann, rectangular };

struct MelConfig {
  int frame = 512;
  int hop = 128;
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 0.0;  // 0 means Nyquist
  Window window = Window::hann;
};

// ---- WAV ----------------------------------------------------------------

enum class WavErrorKind { unreadable, unsupported_encoding, empty_audio };

class WavError : public InputError {
 public:
  WavError(WavErrorKind kind, const std::string& what) : InputError(what), kind_(kind) {}
  [[nodiscard]] WavErrorKind kind() const { return kind_; }

 private:
  WavErrorKind kind_;
};

enum class WavEncoding { pcm16, float32 };

// PCM16 or IEEE float32; multichannel input keeps only the first channel.
AudioBuffer load_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioBuffer& audio,
               WavEncoding encoding = WavEncoding::pcm16);

// ---- spectral analysis ----------------------------------------------------

std::vector<double> make_window(Window kind, int length);

// Centre-padded (reflect) STFT. Frame t covers samples [t*hop - frame/2,
// t*hop + frame/2); there are 1 + ceil(len / hop) frames.
Matrix stft_magnitude(const AudioBuffer& audio, int frame = 512, int hop = 128,
                      Window window = Window::hann);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

MelFilterbank mel_filterbank(int sample_rate, int n_fft_bins, int n_mels = 80, double fmin = 0.0,
                             double fmax = 0.0);

MelSpectrogram mel_spectrogram(const AudioBuffer& audio, const MelConfig& cfg = {});

MelSpectrogram log_compress(const MelSpectrogram& mel, double floor = 1e-5);

// ---- Gaussian filtering -----------------------------------------------------

GaussianKernel gaussian_kernel(int size = 5, double sigma = 1.0);

struct FrameRange {
  int start = 0;
  int end = 0;  // exclusive
};

// Separable blur (time then frequency) restricted to columns [start, end).
// Reflection at the matrix edges and at the range borders, so no sample
// outside the range is read.
MelSpectrogram gaussian_blur_2d(const MelSpectrogram& mel, const GaussianKernel& kernel,
                                FrameRange range);

}  // namespace refdiff::dsp
