#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "refdiff/core.hpp"
#include "refdiff/transition.hpp"

// A small epsilon predictor with a mirrored reference branch.
//
// Both branches are stacks of residual blocks over H channels:
//
//   y  = h + c (+ s, denoising branch only)
//   u  = conv3(y)                          kernel 3 along time, H -> 2H
//   g  = tanh(u[:H]) * sigmoid(u[H:])
//   g' = g + Z_i r_i + z_i                 denoising branch only
//   h  = h + R_i g' + r_b
//
// r_i is the gated output g of block i of the reference branch, and Z_i, z_i
// form the zero-initialised linear map for that block. c is the projected
// per-frame condition (shared by both branches) and s the step embedding
// passed through a one-layer tanh MLP.
namespace refdiff::denoiser {

struct DenoiserConfig {
  int n_mels = 80;    // F
  int cond_dim = 2;   // D
  int hidden = 64;    // H
  int layers = 4;     // L
  int step_dim = 32;  // E, even
  // Test mode: tanh and sigmoid replaced by the identity.
  bool linear_activations = false;

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

nlohmann::json config_to_json(const DenoiserConfig& c);
DenoiserConfig config_from_json(const nlohmann::json& j);

struct Block {
  Matrix conv_w0;  // 2H x H, applied to frame t-1
  Matrix conv_w1;  // frame t
  Matrix conv_w2;  // frame t+1
  Matrix conv_b;   // 2H x 1
  Matrix res_w;    // H x H
  Matrix res_b;    // H x 1
};

struct Branch {
  Matrix in_w;  // H x F
  Matrix in_b;  // H x 1
  std::vector<Block> blocks;
};

struct ZeroLinear {
  Matrix w;  // H x H
  Matrix b;  // H x 1
};

struct DenoiserParams {
  DenoiserConfig config;
  Matrix step_w;  // H x E
  Matrix step_b;
  Matrix cond_w;  // H x D
  Matrix cond_b;
  Branch denoise;
  Branch reference;
  std::vector<ZeroLinear> zero_linears;
  Matrix out_w;  // F x H
  Matrix out_b;  // F x 1
};

namespace detail {
template <typename Params, typename Fn>
void visit_params(Params& p, Fn&& fn) {
  fn("step_w", p.step_w);
  fn("step_b", p.step_b);
  fn("cond_w", p.cond_w);
  fn("cond_b", p.cond_b);
  auto branch = [&](const std::string& prefix, auto& br) {
    fn(prefix + ".in_w", br.in_w);
    fn(prefix + ".in_b", br.in_b);
    for (std::size_t i = 0; i < br.blocks.size(); ++i) {
      const std::string b = prefix + ".block" + std::to_string(i);
      fn(b + ".conv_w0", br.blocks[i].conv_w0);
      fn(b + ".conv_w1", br.blocks[i].conv_w1);
      fn(b + ".conv_w2", br.blocks[i].conv_w2);
      fn(b + ".conv_b", br.blocks[i].conv_b);
      fn(b + ".res_w", br.blocks[i].res_w);
      fn(b + ".res_b", br.blocks[i].res_b);
    }
  };
  branch("denoise", p.denoise);
  branch("reference", p.reference);
  for (std::size_t i = 0; i < p.zero_linears.size(); ++i) {
    fn("zero_linear" + std::to_string(i) + ".w", p.zero_linears[i].w);
    fn("zero_linear" + std::to_string(i) + ".b", p.zero_linears[i].b);
  }
  fn("out_w", p.out_w);
  fn("out_b", p.out_b);
}
}  // namespace detail

// Visits every parameter block in declaration order (the checkpoint order).
template <typename Fn>
void for_each_param(DenoiserParams& p, Fn&& fn) {
  detail::visit_params(p, fn);
}
template <typename Fn>
void for_each_param(const DenoiserParams& p, Fn&& fn) {
  detail::visit_params(p, fn);
}

// Reference branch starts as an exact copy of the denoising branch; zero
// linears start at exactly zero.
DenoiserParams init_params(const DenoiserConfig& config, std::uint64_t seed);
DenoiserParams zeros_like(const DenoiserParams& p);
std::size_t parameter_count(const DenoiserParams& p);

// Interleaved [sin(t w_0), cos(t w_0), sin(t w_1), ...], w_i = 10000^(-2i/E).
Vector step_embedding(double t, int dim);

struct BlockCache {
  Matrix y;    // conv input
  Matrix act_a;  // tanh half
  Matrix act_b;  // sigmoid half
  Matrix gated;  // g' (g for the reference branch)
};

struct BranchCache {
  Matrix input;
  std::vector<BlockCache> blocks;
};

struct ReferenceOutput {
  std::vector<Matrix> hidden;  // L tensors, H x T
  BranchCache cache;
  Matrix cond;
  Matrix cond_h;
};

struct ForwardTrace {
  DenoiserConfig config;
  int step = 0;
  Vector embedding;
  Vector step_h;
  Matrix cond;
  Matrix cond_h;
  BranchCache branch;
  std::vector<Matrix> ref_hidden;
  Matrix final_h;
};

struct ForwardResult {
  Matrix eps_hat;
  ForwardTrace trace;
};

ReferenceOutput reference_forward(const DenoiserParams& p, const Matrix& ref_mel, const Matrix& cond);

// ref_hidden: reference_forward(...).hidden, or all-zero tensors when the
// reference is disabled.
ForwardResult denoiser_forward(const DenoiserParams& p, const Matrix& x_t, int t, const Matrix& cond,
                               const std::vector<Matrix>& ref_hidden);

std::vector<Matrix> zero_hidden(const DenoiserParams& p, Eigen::Index frames);

// Gradients of a scalar loss given d loss / d eps_hat. When `ref` is given,
// the gradient flowing through the zero linears is propagated into the
// reference branch; otherwise reference-branch gradients stay zero.
DenoiserParams backward(const DenoiserParams& p, const ForwardTrace& trace, const Matrix& loss_grad,
                        const ReferenceOutput* ref = nullptr);

struct GradCheckInputs {
  Matrix x_t;
  int t = 1;
  Matrix cond;
  Matrix ref_mel;
  Matrix eps_true;
  transition::WeightMap weights;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

// Central differences over every parameter of the full pipeline
// (reference branch -> denoiser -> weighted loss). Relative error is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
GradCheckResult grad_check(const DenoiserParams& p, const GradCheckInputs& in, double h = 1e-5);

}  // namespace refdiff::denoiser
