#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "refdiff/core.hpp"
#include "refdiff/transition.hpp"

namespace refdiff::diffusion {

// Steps are 1-based throughout: betas[t - 1] is beta_t.
struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  double beta_min = 0.0;
  double beta_max = 0.0;

  [[nodiscard]] int steps() const { return static_cast<int>(betas.size()); }
  [[nodiscard]] double beta(int t) const { return betas[static_cast<std::size_t>(t - 1)]; }
  [[nodiscard]] double alpha(int t) const { return alphas[static_cast<std::size_t>(t - 1)]; }
  [[nodiscard]] double alpha_bar(int t) const { return alpha_bars[static_cast<std::size_t>(t - 1)]; }
};

struct ScheduleConfig {
  int steps = 100;
  double beta_min = 1e-4;
  double beta_max = 0.06;
};

// Linear beta_t from beta_min to beta_max.
NoiseSchedule make_schedule(int steps, double beta_min, double beta_max);
NoiseSchedule make_schedule(const ScheduleConfig& cfg);
NoiseSchedule schedule_from_betas(std::vector<double> betas);

nlohmann::json schedule_to_json(const NoiseSchedule& s);
NoiseSchedule schedule_from_json(const nlohmann::json& j);

// The per-frame condition and the (already blurred) reference spectrogram,
// both in the normalised domain.
struct ConditionBundle {
  Matrix cond;     // D x T
  Matrix ref_mel;  // F x T
};

using Rng = std::mt19937_64;

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps
Matrix q_sample(const Matrix& x0, int t, const Matrix& noise, const NoiseSchedule& s);

// x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps
Matrix q_step(const Matrix& x_prev, int t, const Matrix& noise, const NoiseSchedule& s);

// mu = (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t)
Matrix reverse_mean(const Matrix& x_t, int t, const Matrix& eps_hat, const NoiseSchedule& s);

// x_{t-1} = mu + sqrt(beta_t) z; z is ignored at t = 1.
Matrix p_step(const Matrix& x_t, int t, const Matrix& eps_hat, const Matrix& z,
              const NoiseSchedule& s);

// Visited steps for a reduced-step sampler, ascending, always containing 1 and T.
std::vector<int> strided_steps(int total, int count);

// Schedule over the visited steps whose cumulative products match the full
// schedule at those steps: beta'_i = 1 - abar(tau_i) / abar(tau_{i-1}).
NoiseSchedule respace(const NoiseSchedule& full, const std::vector<int>& visited);

// Re-derives eps from x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)
// clipped to [-limit, limit]. Entries whose x0_hat is already inside are
// returned unchanged, so p_step sees the plain formula there.
Matrix clip_eps(const Matrix& x_t, int t, const Matrix& eps_hat, const NoiseSchedule& s, double limit = 1.0);

// reuse: p_step at each visited t with the full schedule's beta_t.
// respace: p_step over respace(full, visited).
enum class StrideRule { reuse, respace };

struct SamplerOptions {
  StrideRule stride = StrideRule::reuse;
  bool clip_denoised = false;
  double clip_limit = 1.0;
};

std::string to_string(StrideRule r);
StrideRule stride_rule_from_string(const std::string& name);
nlohmann::json sampler_to_json(const SamplerOptions& o);

// eps predictor: (x_t, t in the full schedule, bundle) -> eps_hat.
using Predictor = std::function<Matrix(const Matrix&, int, const ConditionBundle&)>;

// Ancestral sampling from x_T ~ N(0, I). Draw order from a single
// mt19937_64(seed): x_T row-major, then one z matrix per visited step from
// the last down to the second; the first step uses no noise.
Matrix sample(const Predictor& predictor, const ConditionBundle& bundle, const NoiseSchedule& s,
              int steps, std::uint64_t seed, Eigen::Index rows, Eigen::Index cols,
              const SamplerOptions& opts = {});

struct LossResult {
  double loss = 0.0;
  Matrix grad;  // d loss / d eps_hat
};

// sum w (eps - eps_hat)^2 / sum w
LossResult weighted_eps_loss(const Matrix& eps_true, const Matrix& eps_hat,
                             const transition::WeightMap& weights);

}  // namespace refdiff::diffusion
