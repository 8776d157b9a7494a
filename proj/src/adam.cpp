#include "refdiff/adam.hpp"

#include <cmath>
#include <vector>

namespace refdiff::optim {

namespace {

template <typename P>
auto collect(P& p) {
  using Ptr = std::conditional_t<std::is_const_v<P>, const Matrix*, Matrix*>;
  std::vector<Ptr> out;
  denoiser::for_each_param(p, [&](const std::string&, auto& m) { out.push_back(&m); });
  return out;
}

}  // namespace

AdamState adam_init(const denoiser::DenoiserParams& params) {
  return {denoiser::zeros_like(params), denoiser::zeros_like(params), 0};
}

void adam_step(denoiser::DenoiserParams& params, const denoiser::DenoiserParams& grads,
               AdamState& state, const AdamConfig& cfg) {
  auto p = collect(params);
  const auto g = collect(grads);
  auto m = collect(state.m);
  auto v = collect(state.v);
  require(p.size() == g.size() && p.size() == m.size() && p.size() == v.size(),
          "adam_step: parameter structure mismatch");
  for (std::size_t i = 0; i < p.size(); ++i) {
    require_same_shape(*p[i], *g[i], "adam_step gradient");
    require_same_shape(*p[i], *m[i], "adam_step first moment");
    require_same_shape(*p[i], *v[i], "adam_step second moment");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto ma = m[i]->array();
    auto va = v[i]->array();
    const auto ga = g[i]->array();
    ma = cfg.beta1 * ma + (1.0 - cfg.beta1) * ga;
    va = cfg.beta2 * va + (1.0 - cfg.beta2) * ga.square();
    p[i]->array() -= cfg.lr * (ma / c1) / ((va / c2).sqrt() + cfg.eps);
  }
}

double adam_scalar_step(double param, double grad, ScalarAdam& s, const AdamConfig& cfg) {
  ++s.step;
  s.m = cfg.beta1 * s.m + (1.0 - cfg.beta1) * grad;
  s.v = cfg.beta2 * s.v + (1.0 - cfg.beta2) * grad * grad;
  const double mhat = s.m / (1.0 - std::pow(cfg.beta1, static_cast<double>(s.step)));
  const double vhat = s.v / (1.0 - std::pow(cfg.beta2, static_cast<double>(s.step)));
  return param - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
}

}  // namespace refdiff::optim
