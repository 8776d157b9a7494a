#include <gtest/gtest.h>

#include <cmath>

#include "refdiff/checkpoint.hpp"
#include "refdiff/denoiser.hpp"
#include "test_util.hpp"

using namespace refdiff;
using namespace refdiff::denoiser;
using refdiff::testing::random_matrix;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.n_mels = 2;
  c.cond_dim = 1;
  c.hidden = 2;
  c.layers = 1;
  c.step_dim = 2;
  return c;
}

// Every parameter drawn at random, zero linears included, so that no term
// of the computation is trivially zero.
DenoiserParams randomized(const DenoiserConfig& c, std::uint64_t seed) {
  auto p = init_params(c, seed);
  std::uint64_t k = seed * 1000;
  for_each_param(p, [&](const std::string&, Matrix& m) { m = random_matrix(m.rows(), m.cols(), ++k, -0.8, 0.8); });
  return p;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar-loop evaluation of one branch, written independently of the
// library's matrix code. `inject` holds Z r + z per block (empty: none).
std::vector<std::vector<double>> branch_by_hand(const Branch& br, const std::vector<std::vector<double>>& input,
                                                const std::vector<std::vector<double>>& cond_h,
                                                const std::vector<double>* step_h,
                                                const std::vector<std::vector<std::vector<double>>>* inject,
                                                std::vector<std::vector<std::vector<double>>>* gated_out) {
  const int H = static_cast<int>(br.in_w.rows());
  const int F = static_cast<int>(br.in_w.cols());
  const int T = static_cast<int>(input[0].size());
  std::vector<std::vector<double>> h(H, std::vector<double>(T));
  for (int i = 0; i < H; ++i) {
    for (int t = 0; t < T; ++t) {
      double acc = br.in_b(i, 0);
      for (int f = 0; f < F; ++f) acc += br.in_w(i, f) * input[f][t];
      h[i][t] = acc;
    }
  }
  for (std::size_t l = 0; l < br.blocks.size(); ++l) {
    const Block& b = br.blocks[l];
    std::vector<std::vector<double>> y(H, std::vector<double>(T));
    for (int i = 0; i < H; ++i) {
      for (int t = 0; t < T; ++t) y[i][t] = h[i][t] + cond_h[i][t] + (step_h ? (*step_h)[i] : 0.0);
    }
    std::vector<std::vector<double>> g(H, std::vector<double>(T));
    for (int t = 0; t < T; ++t) {
      std::vector<double> u(2 * H);
      for (int o = 0; o < 2 * H; ++o) {
        double acc = b.conv_b(o, 0);
        for (int i = 0; i < H; ++i) {
          if (t > 0) acc += b.conv_w0(o, i) * y[i][t - 1];
          acc += b.conv_w1(o, i) * y[i][t];
          if (t + 1 < T) acc += b.conv_w2(o, i) * y[i][t + 1];
        }
        u[o] = acc;
      }
      for (int i = 0; i < H; ++i) {
        g[i][t] = std::tanh(u[i]) * sigmoid(u[H + i]);
        if (inject) g[i][t] += (*inject)[l][i][t];
      }
    }
    if (gated_out) gated_out->push_back(g);
    for (int i = 0; i < H; ++i) {
      for (int t = 0; t < T; ++t) {
        double acc = b.res_b(i, 0);
        for (int j = 0; j < H; ++j) acc += b.res_w(i, j) * g[j][t];
        h[i][t] += acc;
      }
    }
  }
  return h;
}

std::vector<std::vector<double>> rows_of(const Matrix& m) {
  std::vector<std::vector<double>> out(m.rows(), std::vector<double>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  }
  return out;
}

}  // namespace

TEST(StepEmbedding, Formula) {
  const Vector e = step_embedding(7.0, 8);
  ASSERT_EQ(e.size(), 8);
  for (int i = 0; i < 4; ++i) {
    const double w = std::pow(10000.0, -2.0 * i / 8.0);
    EXPECT_DOUBLE_EQ(e(2 * i), std::sin(7.0 * w));
    EXPECT_DOUBLE_EQ(e(2 * i + 1), std::cos(7.0 * w));
  }
  EXPECT_TRUE(step_embedding(7.0, 8) == e);
  EXPECT_LE(e.cwiseAbs().maxCoeff(), 1.0);
  const Vector zero = step_embedding(0.0, 6);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(zero(2 * i), 0.0);
    EXPECT_EQ(zero(2 * i + 1), 1.0);
  }
  EXPECT_THROW(step_embedding(1.0, 5), std::invalid_argument);
}

TEST(Init, MirroredBranchesAndZeroLinears) {
  const auto p = init_params({}, 3);
  EXPECT_EQ(p.denoise.blocks.size(), 4u);
  ASSERT_EQ(p.zero_linears.size(), 4u);
  for (const auto& z : p.zero_linears) {
    EXPECT_EQ(z.w.rows(), 64);
    EXPECT_EQ(z.w.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(z.b.cwiseAbs().maxCoeff(), 0.0);
  }
  EXPECT_TRUE(p.reference.in_w == p.denoise.in_w);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(p.reference.blocks[i].conv_w1 == p.denoise.blocks[i].conv_w1);
    EXPECT_TRUE(p.reference.blocks[i].res_w == p.denoise.blocks[i].res_w);
  }
  const auto q = init_params({}, 3);
  EXPECT_TRUE(params_identical(p, q));
  EXPECT_FALSE(params_identical(p, init_params({}, 4)));
  EXPECT_THROW(init_params(DenoiserConfig{.step_dim = 3}, 0), std::invalid_argument);
}

TEST(Forward, ShapesAndZeroInjectionIdentity) {
  const DenoiserConfig c{.n_mels = 6, .cond_dim = 2, .hidden = 5, .layers = 3, .step_dim = 4};
  const auto p = init_params(c, 11);
  const Matrix x = random_matrix(6, 9, 1);
  const Matrix cond = random_matrix(2, 9, 2);
  const auto ref = reference_forward(p, random_matrix(6, 9, 3), cond);
  ASSERT_EQ(ref.hidden.size(), 3u);
  for (const auto& h : ref.hidden) {
    EXPECT_EQ(h.rows(), 5);
    EXPECT_EQ(h.cols(), 9);
  }
  const auto a = denoiser_forward(p, x, 17, cond, ref.hidden);
  const auto b = denoiser_forward(p, x, 17, cond, zero_hidden(p, 9));
  std::vector<Matrix> wild;
  for (int i = 0; i < 3; ++i) wild.push_back(random_matrix(5, 9, 100 + i, -1e6, 1e6));
  const auto d = denoiser_forward(p, x, 17, cond, wild);
  EXPECT_EQ(a.eps_hat.rows(), 6);
  EXPECT_EQ(a.eps_hat.cols(), 9);
  EXPECT_TRUE(a.eps_hat == b.eps_hat);
  EXPECT_TRUE(d.eps_hat == b.eps_hat);
  EXPECT_TRUE(denoiser_forward(p, x, 17, cond, ref.hidden).eps_hat == a.eps_hat);
  EXPECT_TRUE(reference_forward(p, random_matrix(6, 9, 3), cond).hidden[2] == ref.hidden[2]);
}

TEST(Forward, RejectsShapeMismatch) {
  const DenoiserConfig c{.n_mels = 3, .cond_dim = 2, .hidden = 4, .layers = 2, .step_dim = 4};
  const auto p = init_params(c, 1);
  const Matrix x = random_matrix(3, 5, 1);
  const Matrix cond = random_matrix(2, 5, 2);
  EXPECT_THROW(denoiser_forward(p, random_matrix(4, 5, 1), 1, cond, zero_hidden(p, 5)), std::invalid_argument);
  EXPECT_THROW(denoiser_forward(p, x, 1, random_matrix(2, 4, 1), zero_hidden(p, 5)), std::invalid_argument);
  EXPECT_THROW(denoiser_forward(p, x, 1, cond, zero_hidden(p, 4)), std::invalid_argument);
  auto short_hidden = zero_hidden(p, 5);
  short_hidden.pop_back();
  EXPECT_THROW(denoiser_forward(p, x, 1, cond, short_hidden), std::invalid_argument);
  EXPECT_THROW(reference_forward(p, random_matrix(3, 4, 1), cond), std::invalid_argument);
}

TEST(Forward, TinyNetMatchesHandUnroll) {
  const auto c = tiny_config();
  const auto p = randomized(c, 5);
  const Matrix x = random_matrix(2, 3, 1);
  const Matrix cond = random_matrix(1, 3, 2);
  const Matrix ref_mel = random_matrix(2, 3, 3);
  const int t = 9;

  std::vector<std::vector<double>> cond_h(2, std::vector<double>(3));
  for (int i = 0; i < 2; ++i) {
    for (int f = 0; f < 3; ++f) cond_h[i][f] = p.cond_w(i, 0) * cond(0, f) + p.cond_b(i, 0);
  }
  const double e0 = std::sin(t * 1.0);
  const double e1 = std::cos(t * 1.0);
  std::vector<double> step_h(2);
  for (int i = 0; i < 2; ++i) step_h[i] = std::tanh(p.step_w(i, 0) * e0 + p.step_w(i, 1) * e1 + p.step_b(i, 0));

  std::vector<std::vector<std::vector<double>>> ref_gated;
  branch_by_hand(p.reference, rows_of(ref_mel), cond_h, nullptr, nullptr, &ref_gated);
  const auto ref = reference_forward(p, ref_mel, cond);
  for (int i = 0; i < 2; ++i) {
    for (int f = 0; f < 3; ++f) EXPECT_NEAR(ref.hidden[0](i, f), ref_gated[0][i][f], 1e-14);
  }

  std::vector<std::vector<std::vector<double>>> inject(1, std::vector<std::vector<double>>(2, std::vector<double>(3)));
  for (int i = 0; i < 2; ++i) {
    for (int f = 0; f < 3; ++f) {
      inject[0][i][f] = p.zero_linears[0].b(i, 0);
      for (int j = 0; j < 2; ++j) inject[0][i][f] += p.zero_linears[0].w(i, j) * ref_gated[0][j][f];
    }
  }
  const auto h = branch_by_hand(p.denoise, rows_of(x), cond_h, &step_h, &inject, nullptr);
  const auto out = denoiser_forward(p, x, t, cond, ref.hidden).eps_hat;
  for (int f = 0; f < 2; ++f) {
    for (int s = 0; s < 3; ++s) {
      double expected = p.out_b(f, 0);
      for (int i = 0; i < 2; ++i) expected += p.out_w(f, i) * h[i][s];
      EXPECT_NEAR(out(f, s), expected, 1e-13);
    }
  }
}

TEST(Forward, ReferenceLayerOneWithIdentityWeights) {
  // Identity input projection, identity conv centre tap, no conditioning:
  // block-1 gated output is tanh(x) * sigmoid(x) per entry.
  DenoiserConfig c = tiny_config();
  auto p = zeros_like(init_params(c, 0));
  p.reference.in_w = Matrix::Identity(2, 2);
  p.reference.blocks[0].conv_w1 = Matrix::Zero(4, 2);
  p.reference.blocks[0].conv_w1.topRows(2) = Matrix::Identity(2, 2);
  p.reference.blocks[0].conv_w1.bottomRows(2) = Matrix::Identity(2, 2);
  const Matrix ref_mel{{0.5, -1.0, 2.0}, {0.0, 0.25, -0.75}};
  const auto out = reference_forward(p, ref_mel, Matrix::Zero(1, 3));
  for (int i = 0; i < 2; ++i) {
    for (int t = 0; t < 3; ++t) {
      const double v = ref_mel(i, t);
      EXPECT_NEAR(out.hidden[0](i, t), std::tanh(v) * sigmoid(v), 1e-15);
    }
  }
}

TEST(Backward, ZeroLossGradGivesZeroGrads) {
  const DenoiserConfig c{.n_mels = 3, .cond_dim = 2, .hidden = 4, .layers = 2, .step_dim = 4};
  const auto p = randomized(c, 2);
  const Matrix cond = random_matrix(2, 5, 2);
  const auto ref = reference_forward(p, random_matrix(3, 5, 4), cond);
  const auto fwd = denoiser_forward(p, random_matrix(3, 5, 1), 4, cond, ref.hidden);
  const auto g = backward(p, fwd.trace, Matrix::Zero(3, 5), &ref);
  for_each_param(g, [](const std::string& name, const Matrix& m) { EXPECT_EQ(m.cwiseAbs().maxCoeff(), 0.0) << name; });
}

TEST(Backward, ZeroLinearGradientNonzeroAtInitAndMatchesFiniteDifference) {
  const DenoiserConfig c{.n_mels = 3, .cond_dim = 2, .hidden = 4, .layers = 2, .step_dim = 4};
  auto p = init_params(c, 8);
  const Matrix x = random_matrix(3, 6, 1);
  const Matrix cond = random_matrix(2, 6, 2);
  const Matrix ref_mel = random_matrix(3, 6, 3);
  const Matrix target = random_matrix(3, 6, 4);
  auto loss_of = [&](const DenoiserParams& q) {
    const auto r = reference_forward(q, ref_mel, cond);
    return 0.5 * (denoiser_forward(q, x, 12, cond, r.hidden).eps_hat - target).squaredNorm();
  };
  const auto ref = reference_forward(p, ref_mel, cond);
  const auto fwd = denoiser_forward(p, x, 12, cond, ref.hidden);
  const auto g = backward(p, fwd.trace, fwd.eps_hat - target, &ref);
  EXPECT_GT(g.zero_linears[0].w.cwiseAbs().maxCoeff(), 0.0);
  const double h = 1e-6;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      auto up = p;
      auto dn = p;
      up.zero_linears[1].w(i, j) += h;
      dn.zero_linears[1].w(i, j) -= h;
      const double fd = (loss_of(up) - loss_of(dn)) / (2 * h);
      EXPECT_NEAR(g.zero_linears[1].w(i, j), fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
  // At init the reference branch receives no gradient: Z = 0 blocks it.
  EXPECT_EQ(g.reference.in_w.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, RejectsMismatchedTrace) {
  const DenoiserConfig c{.n_mels = 3, .cond_dim = 2, .hidden = 4, .layers = 2, .step_dim = 4};
  const auto p = init_params(c, 1);
  const auto fwd = denoiser_forward(p, random_matrix(3, 5, 1), 4, random_matrix(2, 5, 2), zero_hidden(p, 5));
  auto other = c;
  other.hidden = 3;
  EXPECT_THROW(backward(init_params(other, 1), fwd.trace, Matrix::Zero(3, 5)), std::invalid_argument);
  EXPECT_THROW(backward(p, fwd.trace, Matrix::Zero(3, 4)), std::invalid_argument);
  const auto ref = reference_forward(p, random_matrix(3, 6, 1), random_matrix(2, 6, 2));
  EXPECT_THROW(backward(p, fwd.trace, Matrix::Zero(3, 5), &ref), std::invalid_argument);
}

namespace {

GradCheckInputs tiny_inputs(const DenoiserConfig& c, int T) {
  GradCheckInputs in;
  in.x_t = random_matrix(c.n_mels, T, 1);
  in.t = 23;
  in.cond = random_matrix(c.cond_dim, T, 2);
  in.ref_mel = random_matrix(c.n_mels, T, 3);
  in.eps_true = random_matrix(c.n_mels, T, 4);
  in.weights.data = Matrix::Ones(c.n_mels, T);
  in.weights.data.middleCols(1, 2).setConstant(2.0);
  in.weights.lambda_in = 2.0;
  return in;
}

DenoiserConfig grad_config() {
  return {.n_mels = 3, .cond_dim = 2, .hidden = 3, .layers = 2, .step_dim = 4};
}

}  // namespace

TEST(GradCheck, TinyNetPasses) {
  const auto c = grad_config();
  const auto p = randomized(c, 0);
  ASSERT_LE(parameter_count(p), 500u);
  const auto r = grad_check(p, tiny_inputs(c, 5));
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst_param;
  EXPECT_EQ(r.checked, parameter_count(p));
  EXPECT_EQ(grad_check(p, tiny_inputs(c, 5)).max_rel_error, r.max_rel_error);
}

TEST(GradCheck, LinearModeIsNearExact) {
  auto c = grad_config();
  c.linear_activations = true;
  const auto p = randomized(c, 1);
  const auto r = grad_check(p, tiny_inputs(c, 5));
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_param;
}

TEST(Checkpoint, RoundTripBitExact) {
  refdiff::testing::TempDir dir("ck");
  Checkpoint ck;
  ck.params = randomized(grad_config(), 4);
  ck.schedule = {50, 2e-4, 0.04};
  ck.stats = {-11.5, 0.25, 1e-5};
  ck.training = {{"note", "x"}};
  write_checkpoint(dir / "a.rdck", ck);
  const auto back = read_checkpoint(dir / "a.rdck");
  EXPECT_TRUE(params_identical(back.params, ck.params));
  EXPECT_EQ(back.schedule.steps, 50);
  EXPECT_EQ(back.schedule.beta_max, 0.04);
  EXPECT_EQ(back.stats.log_min, -11.5);
  EXPECT_EQ(back.training, ck.training);
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));
}

TEST(Checkpoint, RejectsCorruption) {
  Checkpoint ck;
  ck.params = init_params(grad_config(), 1);
  const auto bytes = encode_checkpoint(ck);
  EXPECT_THROW(decode_checkpoint("XDCK" + bytes.substr(4)), InputError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 8)), InputError);
  EXPECT_THROW(decode_checkpoint(bytes + "extra"), InputError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, 20)), InputError);
}
