#include "refdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace refdiff::diffusion {

namespace {

void check_step(const NoiseSchedule& s, int t, const char* ctx) {
  if (t < 1 || t > s.steps()) {
    throw std::invalid_argument(std::string(ctx) + ": step " + std::to_string(t) +
                                " outside [1, " + std::to_string(s.steps()) + "]");
  }
}

void fill_products(NoiseSchedule& s) {
  s.alphas.resize(s.betas.size());
  s.alpha_bars.resize(s.betas.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < s.betas.size(); ++i) {
    s.alphas[i] = 1.0 - s.betas[i];
    prod *= s.alphas[i];
    s.alpha_bars[i] = prod;
  }
}

}  // namespace

NoiseSchedule make_schedule(int steps, double beta_min, double beta_max) {
  require(steps >= 1, "make_schedule: need at least one step");
  if (!(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0)) {
    throw std::invalid_argument("make_schedule: need 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  s.betas.resize(static_cast<std::size_t>(steps));
  for (int t = 1; t <= steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
    s.betas[static_cast<std::size_t>(t - 1)] = beta_min + frac * (beta_max - beta_min);
  }
  fill_products(s);
  return s;
}

NoiseSchedule make_schedule(const ScheduleConfig& cfg) {
  return make_schedule(cfg.steps, cfg.beta_min, cfg.beta_max);
}

NoiseSchedule schedule_from_betas(std::vector<double> betas) {
  require(!betas.empty(), "schedule_from_betas: empty");
  for (double b : betas) require(b > 0.0 && b < 1.0, "schedule_from_betas: beta outside (0, 1)");
  NoiseSchedule s;
  s.beta_min = *std::min_element(betas.begin(), betas.end());
  s.beta_max = *std::max_element(betas.begin(), betas.end());
  s.betas = std::move(betas);
  fill_products(s);
  return s;
}

nlohmann::json schedule_to_json(const NoiseSchedule& s) {
  return {{"T", s.steps()}, {"beta_min", s.beta_min}, {"beta_max", s.beta_max}, {"kind", "linear"}};
}

NoiseSchedule schedule_from_json(const nlohmann::json& j) {
  if (j.value("kind", std::string("linear")) != "linear") {
    throw InputError("schedule: only kind \"linear\" is supported");
  }
  return make_schedule(j.at("T").get<int>(), j.at("beta_min").get<double>(),
                       j.at("beta_max").get<double>());
}

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix q_sample(const Matrix& x0, int t, const Matrix& noise, const NoiseSchedule& s) {
  require_same_shape(x0, noise, "q_sample");
  check_step(s, t, "q_sample");
  const double ab = s.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * noise;
}

Matrix q_step(const Matrix& x_prev, int t, const Matrix& noise, const NoiseSchedule& s) {
  require_same_shape(x_prev, noise, "q_step");
  check_step(s, t, "q_step");
  const double b = s.beta(t);
  return std::sqrt(1.0 - b) * x_prev + std::sqrt(b) * noise;
}

Matrix reverse_mean(const Matrix& x_t, int t, const Matrix& eps_hat, const NoiseSchedule& s) {
  require_same_shape(x_t, eps_hat, "reverse_mean");
  check_step(s, t, "reverse_mean");
  const double coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
  return (x_t - coef * eps_hat) / std::sqrt(s.alpha(t));
}

Matrix p_step(const Matrix& x_t, int t, const Matrix& eps_hat, const Matrix& z,
              const NoiseSchedule& s) {
  Matrix mu = reverse_mean(x_t, t, eps_hat, s);
  if (t == 1) return mu;
  require_same_shape(x_t, z, "p_step");
  mu += std::sqrt(s.beta(t)) * z;
  return mu;
}

std::vector<int> strided_steps(int total, int count) {
  require(count >= 1 && count <= total, "strided_steps: need 1 <= count <= total");
  if (count == 1) return {total};
  std::vector<int> steps(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    steps[static_cast<std::size_t>(i)] =
        1 + static_cast<int>(std::floor(static_cast<double>(i) * (total - 1) / (count - 1) + 0.5));
  }
  return steps;
}

NoiseSchedule respace(const NoiseSchedule& full, const std::vector<int>& visited) {
  require(!visited.empty(), "respace: no steps");
  NoiseSchedule s;
  s.betas.resize(visited.size());
  s.alphas.resize(visited.size());
  s.alpha_bars.resize(visited.size());
  int prev = 0;
  for (std::size_t i = 0; i < visited.size(); ++i) {
    const int tau = visited[i];
    check_step(full, tau, "respace");
    require(tau > prev, "respace: steps must be strictly increasing");
    // Consecutive steps keep the original beta bit-for-bit.
    const double beta = tau == prev + 1 ? full.beta(tau)
                                        : 1.0 - full.alpha_bar(tau) / (prev == 0 ? 1.0 : full.alpha_bar(prev));
    s.betas[i] = beta;
    s.alphas[i] = 1.0 - beta;
    s.alpha_bars[i] = full.alpha_bar(tau);
    prev = tau;
  }
  s.beta_min = *std::min_element(s.betas.begin(), s.betas.end());
  s.beta_max = *std::max_element(s.betas.begin(), s.betas.end());
  return s;
}

Matrix clip_eps(const Matrix& x_t, int t, const Matrix& eps_hat, const NoiseSchedule& s, double limit) {
  check_step(s, t, "clip_eps");
  require_same_shape(x_t, eps_hat, "clip_eps");
  require(limit > 0.0, "clip_eps: limit must be positive");
  const double ab = s.alpha_bar(t);
  const double sa = std::sqrt(ab);
  const double sn = std::sqrt(1.0 - ab);
  Matrix out = eps_hat;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double x0 = (x_t.data()[i] - sn * eps_hat.data()[i]) / sa;
    if (x0 > limit || x0 < -limit) out.data()[i] = (x_t.data()[i] - sa * std::clamp(x0, -limit, limit)) / sn;
  }
  return out;
}

std::string to_string(StrideRule r) { return r == StrideRule::reuse ? "reuse" : "respace"; }

StrideRule stride_rule_from_string(const std::string& name) {
  if (name == "reuse") return StrideRule::reuse;
  if (name == "respace") return StrideRule::respace;
  throw std::invalid_argument("unknown stride rule '" + name + "' (reuse|respace)");
}

nlohmann::json sampler_to_json(const SamplerOptions& o) {
  return {{"stride", to_string(o.stride)}, {"clip_denoised", o.clip_denoised}, {"clip_limit", o.clip_limit}};
}

Matrix sample(const Predictor& predictor, const ConditionBundle& bundle, const NoiseSchedule& s,
              int steps, std::uint64_t seed, Eigen::Index rows, Eigen::Index cols,
              const SamplerOptions& opts) {
  if (steps < 1 || steps > s.steps()) {
    throw std::invalid_argument("sample: steps must be in [1, " + std::to_string(s.steps()) + "]");
  }
  const auto visited = strided_steps(s.steps(), steps);
  const bool respaced = opts.stride == StrideRule::respace && steps != s.steps();
  const NoiseSchedule sub = respaced ? respace(s, visited) : NoiseSchedule{};
  const NoiseSchedule& active = respaced ? sub : s;

  Rng rng(seed);
  Matrix x = standard_normal(rows, cols, rng);
  const Matrix no_noise = Matrix::Zero(rows, cols);
  for (int i = steps; i >= 1; --i) {
    const int t = visited[static_cast<std::size_t>(i - 1)];
    const int k = respaced ? i : t;
    Matrix eps_hat = predictor(x, t, bundle);
    if (opts.clip_denoised) eps_hat = clip_eps(x, k, eps_hat, active, opts.clip_limit);
    // with a single step k is T, so the final draw is a zero matrix rather than skipped
    const Matrix z = i > 1 ? standard_normal(rows, cols, rng) : no_noise;
    x = p_step(x, k, eps_hat, z, active);
    if (!x.allFinite()) throw NumericalError("sample: non-finite state at step " + std::to_string(i));
  }
  return x;
}

LossResult weighted_eps_loss(const Matrix& eps_true, const Matrix& eps_hat,
                             const transition::WeightMap& weights) {
  require_same_shape(eps_true, eps_hat, "weighted_eps_loss");
  require_same_shape(eps_true, weights.data, "weighted_eps_loss weights");
  if (!(weights.data.array() > 0.0).all()) {
    throw std::invalid_argument("weighted_eps_loss: weights must be positive");
  }
  const double total = weights.data.sum();
  const Matrix diff = eps_true - eps_hat;
  LossResult r;
  r.loss = (weights.data.array() * diff.array().square()).sum() / total;
  r.grad = (-2.0 / total) * (weights.data.array() * diff.array()).matrix();
  return r;
}

}  // namespace refdiff::diffusion
