#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include "refdiff/dsp.hpp"

namespace refdiff::dsp {

namespace {

// FFTW planning is not thread-safe; execution on a private plan is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    in_ = fftw_alloc_real(static_cast<std::size_t>(n));
    out_ = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  void execute() { fftw_execute(plan_); }
  [[nodiscard]] double magnitude(int k) const { return std::hypot(out_[k][0], out_[k][1]); }

 private:
  int n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

}  // namespace

std::vector<double> make_window(Window kind, int length) {
  require(length >= 1, "window length must be >= 1");
  std::vector<double> w(static_cast<std::size_t>(length), 1.0);
  if (kind == Window::hann) {
    // periodic Hann
    for (int n = 0; n < length; ++n) {
      w[static_cast<std::size_t>(n)] =
          0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / static_cast<double>(length));
    }
  }
  return w;
}

Matrix stft_magnitude(const AudioBuffer& audio, int frame, int hop, Window window) {
  require(hop >= 1 && frame >= hop, "stft_magnitude: need frame >= hop >= 1");
  if (audio.samples.empty()) throw std::invalid_argument("stft_magnitude: empty audio");

  const auto len = static_cast<std::ptrdiff_t>(audio.samples.size());
  const auto n_frames = 1 + (len + hop - 1) / hop;
  const int n_bins = frame / 2 + 1;
  const auto win = make_window(window, frame);

  Matrix mag(n_bins, n_frames);
  RealFft fft(frame);
  for (std::ptrdiff_t t = 0; t < n_frames; ++t) {
    const std::ptrdiff_t start = t * hop - frame / 2;
    double* buf = fft.input();
    for (int n = 0; n < frame; ++n) {
      const auto idx = reflect_index(start + n, len);
      buf[n] = audio.samples[static_cast<std::size_t>(idx)] * win[static_cast<std::size_t>(n)];
    }
    fft.execute();
    for (int k = 0; k < n_bins; ++k) mag(k, t) = fft.magnitude(k);
  }
  return mag;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank mel_filterbank(int sample_rate, int n_fft_bins, int n_mels, double fmin,
                             double fmax) {
  require(sample_rate > 0, "mel_filterbank: sample_rate must be positive");
  require(n_fft_bins >= 2, "mel_filterbank: need at least 2 FFT bins");
  require(n_mels >= 2, "mel_filterbank: n_mels must be >= 2");
  const double nyquist = sample_rate / 2.0;
  if (fmax <= 0.0) fmax = nyquist;
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= nyquist)) {
    throw std::invalid_argument("mel_filterbank: need 0 <= fmin < fmax <= sample_rate/2");
  }

  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[static_cast<std::size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / static_cast<double>(n_mels + 1));
  }

  MelFilterbank fb;
  fb.weights = Matrix::Zero(n_mels, n_fft_bins);
  fb.center_freqs.assign(edges.begin() + 1, edges.end() - 1);
  const double bin_hz = nyquist / (n_fft_bins - 1);

  for (int m = 0; m < n_mels; ++m) {
    const double left = edges[static_cast<std::size_t>(m)];
    const double center = edges[static_cast<std::size_t>(m + 1)];
    const double right = edges[static_cast<std::size_t>(m + 2)];
    bool any = false;
    for (int k = 0; k < n_fft_bins; ++k) {
      const double f = k * bin_hz;
      const double w = std::max(0.0, std::min((f - left) / (center - left),
                                              (right - f) / (right - center)));
      fb.weights(m, k) = w;
      any = any || w > 0.0;
    }
    // Low filters can be narrower than the bin spacing and fall between bins.
    if (!any) {
      const auto k = static_cast<int>(std::lround(center / bin_hz));
      fb.weights(m, std::clamp(k, 0, n_fft_bins - 1)) = 1.0;
    }
  }
  return fb;
}

MelSpectrogram mel_spectrogram(const AudioBuffer& audio, const MelConfig& cfg) {
  require(audio.sample_rate > 0, "mel_spectrogram: sample_rate must be positive");
  const Matrix mag = stft_magnitude(audio, cfg.frame, cfg.hop, cfg.window);
  const MelFilterbank fb = mel_filterbank(audio.sample_rate, static_cast<int>(mag.rows()),
                                          cfg.n_mels, cfg.fmin, cfg.fmax);
  MelSpectrogram mel;
  mel.data.noalias() = fb.weights * mag;
  mel.hop = cfg.hop;
  mel.is_log = false;
  return mel;
}

MelSpectrogram log_compress(const MelSpectrogram& mel, double floor) {
  if (mel.is_log) throw std::invalid_argument("log_compress: spectrogram is already log-compressed");
  require(floor > 0.0, "log_compress: floor must be positive");
  MelSpectrogram out = mel;
  out.data = mel.data.cwiseMax(floor).array().log().matrix();
  out.is_log = true;
  return out;
}

GaussianKernel gaussian_kernel(int size, double sigma) {
  require(size >= 1 && size % 2 == 1, "gaussian_kernel: size must be odd and positive");
  require(sigma > 0.0, "gaussian_kernel: sigma must be positive");
  GaussianKernel k;
  k.sigma = sigma;
  k.taps.resize(static_cast<std::size_t>(size));
  const int c = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - c;
    k.taps[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k.taps[static_cast<std::size_t>(i)];
  }
  for (double& t : k.taps) t /= sum;
  return k;
}

MelSpectrogram gaussian_blur_2d(const MelSpectrogram& mel, const GaussianKernel& kernel,
                                FrameRange range) {
  const int n_frames = mel.frames();
  if (!(0 <= range.start && range.start < range.end && range.end <= n_frames)) {
    throw std::invalid_argument("gaussian_blur_2d: frame range [" + std::to_string(range.start) +
                                ", " + std::to_string(range.end) + ") invalid for " +
                                std::to_string(n_frames) + " frames");
  }
  require(!kernel.taps.empty() && kernel.taps.size() % 2 == 1,
          "gaussian_blur_2d: kernel must have odd length");

  const int rows = mel.n_mels();
  const int width = range.end - range.start;
  const int r = kernel.radius();

  // time axis, reflecting inside the range
  Matrix tmp(rows, width);
  for (int f = 0; f < rows; ++f) {
    for (int t = 0; t < width; ++t) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) {
        const auto src = range.start + reflect_index(t + i, width);
        acc += kernel.taps[static_cast<std::size_t>(i + r)] * mel.data(f, src);
      }
      tmp(f, t) = acc;
    }
  }

  MelSpectrogram out = mel;
  for (int t = 0; t < width; ++t) {
    for (int f = 0; f < rows; ++f) {
      double acc = 0.0;
      for (int j = -r; j <= r; ++j) {
        acc += kernel.taps[static_cast<std::size_t>(j + r)] * tmp(reflect_index(f + j, rows), t);
      }
      out.data(f, range.start + t) = acc;
    }
  }
  return out;
}

}  // namespace refdiff::dsp
