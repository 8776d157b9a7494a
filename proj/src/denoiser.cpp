#include "refdiff/denoiser.hpp"

#include <cmath>
#include <random>

#include "refdiff/diffusion.hpp"

namespace refdiff::denoiser {

namespace {

using Rng = std::mt19937_64;

Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix broadcast_cols(const Matrix& column, Eigen::Index cols) {
  return column.col(0).replicate(1, cols);
}

Matrix row_sums(const Matrix& m) { return m.rowwise().sum(); }

// u = W0 y[t-1] + W1 y[t] + W2 y[t+1] + b, zero padded.
Matrix conv3(const Block& b, const Matrix& y) {
  const Eigen::Index T = y.cols();
  Matrix u = broadcast_cols(b.conv_b, T);
  u.noalias() += b.conv_w1 * y;
  if (T > 1) {
    u.rightCols(T - 1).noalias() += b.conv_w0 * y.leftCols(T - 1);
    u.leftCols(T - 1).noalias() += b.conv_w2 * y.rightCols(T - 1);
  }
  return u;
}

struct Activations {
  bool linear = false;

  [[nodiscard]] Matrix tanh(const Matrix& x) const {
    return linear ? x : Matrix(x.array().tanh().matrix());
  }
  [[nodiscard]] Matrix sigmoid(const Matrix& x) const {
    return linear ? x : Matrix((1.0 / (1.0 + (-x.array()).exp())).matrix());
  }
  // derivatives expressed through the activation outputs
  [[nodiscard]] Matrix dtanh(const Matrix& out) const {
    return linear ? Matrix::Ones(out.rows(), out.cols()) : Matrix((1.0 - out.array().square()).matrix());
  }
  [[nodiscard]] Matrix dsigmoid(const Matrix& out) const {
    return linear ? Matrix::Ones(out.rows(), out.cols())
                  : Matrix((out.array() * (1.0 - out.array())).matrix());
  }
};

// Runs one branch. With `step_h` / `zl` / `ref_hidden` absent this is the
// reference branch, which exposes each block's gated output.
Matrix run_branch(const Branch& br, const Activations& act, const Matrix& input, const Matrix& cond_h,
                  const Vector* step_h, const std::vector<ZeroLinear>* zl,
                  const std::vector<Matrix>* ref_hidden, BranchCache& cache) {
  const Eigen::Index T = input.cols();
  const Eigen::Index H = br.in_w.rows();
  cache.input = input;
  cache.blocks.resize(br.blocks.size());

  Matrix h = br.in_w * input + broadcast_cols(br.in_b, T);
  for (std::size_t i = 0; i < br.blocks.size(); ++i) {
    const Block& blk = br.blocks[i];
    BlockCache& bc = cache.blocks[i];
    bc.y = h + cond_h;
    if (step_h != nullptr) bc.y.colwise() += *step_h;
    const Matrix u = conv3(blk, bc.y);
    bc.act_a = act.tanh(u.topRows(H));
    bc.act_b = act.sigmoid(u.bottomRows(H));
    bc.gated = bc.act_a.cwiseProduct(bc.act_b);
    if (zl != nullptr) {
      const ZeroLinear& z = (*zl)[i];
      bc.gated.noalias() += z.w * (*ref_hidden)[i];
      bc.gated += broadcast_cols(z.b, T);
    }
    h.noalias() += blk.res_w * bc.gated;
    h += broadcast_cols(blk.res_b, T);
  }
  return h;
}

// Reverse pass through one branch. `dh` is the gradient w.r.t. the branch's
// final hidden state; `extra_dgated[i]` (optional) is added to the gradient
// of block i's gated output. Fills `dzl` / `dref` for the denoising branch.
void backprop_branch(const Branch& br, const Activations& act, const BranchCache& cache, Matrix dh,
                     const std::vector<Matrix>* extra_dgated, const std::vector<ZeroLinear>* zl,
                     const std::vector<Matrix>* ref_hidden, Branch& grad, Matrix& dcond_h,
                     Vector* dstep_h, std::vector<ZeroLinear>* dzl, std::vector<Matrix>* dref) {
  const Eigen::Index T = cache.input.cols();
  const Eigen::Index H = br.in_w.rows();
  for (std::size_t ii = br.blocks.size(); ii-- > 0;) {
    const Block& blk = br.blocks[ii];
    const BlockCache& bc = cache.blocks[ii];
    Block& gb = grad.blocks[ii];

    gb.res_w.noalias() += dh * bc.gated.transpose();
    gb.res_b += row_sums(dh);
    Matrix dg = blk.res_w.transpose() * dh;
    if (extra_dgated != nullptr) dg += (*extra_dgated)[ii];

    if (zl != nullptr) {
      ZeroLinear& gz = (*dzl)[ii];
      gz.w.noalias() += dg * (*ref_hidden)[ii].transpose();
      gz.b += row_sums(dg);
      (*dref)[ii].noalias() = (*zl)[ii].w.transpose() * dg;
    }

    Matrix du(2 * H, T);
    du.topRows(H) = dg.cwiseProduct(bc.act_b).cwiseProduct(act.dtanh(bc.act_a));
    du.bottomRows(H) = dg.cwiseProduct(bc.act_a).cwiseProduct(act.dsigmoid(bc.act_b));

    gb.conv_b += row_sums(du);
    gb.conv_w1.noalias() += du * bc.y.transpose();
    Matrix dy = blk.conv_w1.transpose() * du;
    if (T > 1) {
      gb.conv_w0.noalias() += du.rightCols(T - 1) * bc.y.leftCols(T - 1).transpose();
      gb.conv_w2.noalias() += du.leftCols(T - 1) * bc.y.rightCols(T - 1).transpose();
      dy.leftCols(T - 1).noalias() += blk.conv_w0.transpose() * du.rightCols(T - 1);
      dy.rightCols(T - 1).noalias() += blk.conv_w2.transpose() * du.leftCols(T - 1);
    }

    dh += dy;
    dcond_h += dy;
    if (dstep_h != nullptr) *dstep_h += dy.rowwise().sum();
  }
  grad.in_w.noalias() += dh * cache.input.transpose();
  grad.in_b += row_sums(dh);
}

void check_hidden(const DenoiserParams& p, const std::vector<Matrix>& hidden, Eigen::Index T) {
  if (hidden.size() != p.denoise.blocks.size()) {
    throw std::invalid_argument("denoiser_forward: expected " +
                                std::to_string(p.denoise.blocks.size()) + " reference tensors, got " +
                                std::to_string(hidden.size()));
  }
  for (const auto& h : hidden) {
    if (h.rows() != p.config.hidden || h.cols() != T) {
      throw std::invalid_argument("denoiser_forward: reference hidden state has wrong shape");
    }
  }
}

void check_input(const DenoiserParams& p, const Matrix& x, const Matrix& cond, const char* ctx) {
  if (x.rows() != p.config.n_mels || x.cols() < 1) {
    throw std::invalid_argument(std::string(ctx) + ": input must have " +
                                std::to_string(p.config.n_mels) + " rows");
  }
  if (cond.rows() != p.config.cond_dim || cond.cols() != x.cols()) {
    throw std::invalid_argument(std::string(ctx) + ": condition must be " +
                                std::to_string(p.config.cond_dim) + " x " + std::to_string(x.cols()));
  }
}

Matrix project_cond(const DenoiserParams& p, const Matrix& cond) {
  return p.cond_w * cond + broadcast_cols(p.cond_b, cond.cols());
}

}  // namespace

nlohmann::json config_to_json(const DenoiserConfig& c) {
  return {{"n_mels", c.n_mels},   {"cond_dim", c.cond_dim}, {"hidden", c.hidden},
          {"layers", c.layers},   {"step_dim", c.step_dim}, {"kernel", 3},
          {"linear_activations", c.linear_activations}};
}

DenoiserConfig config_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.n_mels = j.at("n_mels").get<int>();
  c.cond_dim = j.at("cond_dim").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.layers = j.at("layers").get<int>();
  c.step_dim = j.at("step_dim").get<int>();
  c.linear_activations = j.value("linear_activations", false);
  if (j.value("kernel", 3) != 3) throw InputError("denoiser config: only kernel 3 is supported");
  return c;
}

DenoiserParams init_params(const DenoiserConfig& c, std::uint64_t seed) {
  require(c.n_mels >= 1 && c.cond_dim >= 1 && c.hidden >= 1 && c.layers >= 1,
          "init_params: dimensions must be positive");
  require(c.step_dim >= 2 && c.step_dim % 2 == 0, "init_params: step_dim must be even");
  const int H = c.hidden;
  Rng rng(seed);

  DenoiserParams p;
  p.config = c;
  p.step_w = uniform_init(H, c.step_dim, c.step_dim, rng);
  p.step_b = Matrix::Zero(H, 1);
  p.cond_w = uniform_init(H, c.cond_dim, c.cond_dim, rng);
  p.cond_b = Matrix::Zero(H, 1);
  p.denoise.in_w = uniform_init(H, c.n_mels, c.n_mels, rng);
  p.denoise.in_b = Matrix::Zero(H, 1);
  for (int i = 0; i < c.layers; ++i) {
    Block b;
    b.conv_w0 = uniform_init(2 * H, H, 3 * H, rng);
    b.conv_w1 = uniform_init(2 * H, H, 3 * H, rng);
    b.conv_w2 = uniform_init(2 * H, H, 3 * H, rng);
    b.conv_b = Matrix::Zero(2 * H, 1);
    b.res_w = uniform_init(H, H, H, rng);
    b.res_b = Matrix::Zero(H, 1);
    p.denoise.blocks.push_back(std::move(b));
    p.zero_linears.push_back({Matrix::Zero(H, H), Matrix::Zero(H, 1)});
  }
  p.reference = p.denoise;
  p.out_w = uniform_init(c.n_mels, H, H, rng);
  p.out_b = Matrix::Zero(c.n_mels, 1);
  return p;
}

DenoiserParams zeros_like(const DenoiserParams& p) {
  DenoiserParams z = p;
  for_each_param(z, [](const std::string&, Matrix& m) { m.setZero(); });
  return z;
}

std::size_t parameter_count(const DenoiserParams& p) {
  std::size_t n = 0;
  for_each_param(p, [&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

Vector step_embedding(double t, int dim) {
  require(dim >= 2 && dim % 2 == 0, "step_embedding: dimension must be even");
  Vector e(dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / dim);
    e(2 * i) = std::sin(t * freq);
    e(2 * i + 1) = std::cos(t * freq);
  }
  return e;
}

std::vector<Matrix> zero_hidden(const DenoiserParams& p, Eigen::Index frames) {
  return std::vector<Matrix>(p.denoise.blocks.size(), Matrix::Zero(p.config.hidden, frames));
}

ReferenceOutput reference_forward(const DenoiserParams& p, const Matrix& ref_mel, const Matrix& cond) {
  check_input(p, ref_mel, cond, "reference_forward");
  ReferenceOutput out;
  out.cond = cond;
  out.cond_h = project_cond(p, cond);
  const Activations act{p.config.linear_activations};
  run_branch(p.reference, act, ref_mel, out.cond_h, nullptr, nullptr, nullptr, out.cache);
  out.hidden.reserve(out.cache.blocks.size());
  for (const auto& bc : out.cache.blocks) out.hidden.push_back(bc.gated);
  return out;
}

ForwardResult denoiser_forward(const DenoiserParams& p, const Matrix& x_t, int t, const Matrix& cond,
                               const std::vector<Matrix>& ref_hidden) {
  check_input(p, x_t, cond, "denoiser_forward");
  check_hidden(p, ref_hidden, x_t.cols());
  const Activations act{p.config.linear_activations};

  ForwardResult r;
  ForwardTrace& tr = r.trace;
  tr.config = p.config;
  tr.step = t;
  tr.embedding = step_embedding(t, p.config.step_dim);
  tr.step_h = act.tanh(p.step_w * tr.embedding + p.step_b).col(0);
  tr.cond = cond;
  tr.cond_h = project_cond(p, cond);
  tr.ref_hidden = ref_hidden;
  tr.final_h = run_branch(p.denoise, act, x_t, tr.cond_h, &tr.step_h, &p.zero_linears,
                          &tr.ref_hidden, tr.branch);
  r.eps_hat = p.out_w * tr.final_h + broadcast_cols(p.out_b, x_t.cols());
  return r;
}

DenoiserParams backward(const DenoiserParams& p, const ForwardTrace& trace, const Matrix& loss_grad,
                        const ReferenceOutput* ref) {
  if (!(trace.config == p.config) || trace.branch.blocks.size() != p.denoise.blocks.size()) {
    throw std::invalid_argument("backward: trace does not belong to these parameters");
  }
  const Eigen::Index T = trace.final_h.cols();
  if (loss_grad.rows() != p.config.n_mels || loss_grad.cols() != T) {
    throw std::invalid_argument("backward: loss gradient shape does not match the trace");
  }
  if (ref != nullptr && (ref->cache.blocks.size() != p.reference.blocks.size() ||
                         ref->cache.input.cols() != T)) {
    throw std::invalid_argument("backward: reference trace does not match");
  }
  const Activations act{p.config.linear_activations};
  DenoiserParams g = zeros_like(p);

  g.out_w.noalias() = loss_grad * trace.final_h.transpose();
  g.out_b = row_sums(loss_grad);
  const Matrix dh = p.out_w.transpose() * loss_grad;

  Matrix dcond_h = Matrix::Zero(p.config.hidden, T);
  Vector dstep_h = Vector::Zero(p.config.hidden);
  std::vector<Matrix> dref(p.denoise.blocks.size());
  backprop_branch(p.denoise, act, trace.branch, dh, nullptr, &p.zero_linears, &trace.ref_hidden,
                  g.denoise, dcond_h, &dstep_h, &g.zero_linears, &dref);

  if (ref != nullptr) {
    Matrix dcond_ref = Matrix::Zero(p.config.hidden, T);
    backprop_branch(p.reference, act, ref->cache, Matrix::Zero(p.config.hidden, T), &dref, nullptr,
                    nullptr, g.reference, dcond_ref, nullptr, nullptr, nullptr);
    g.cond_w.noalias() += dcond_ref * ref->cond.transpose();
    g.cond_b += row_sums(dcond_ref);
  }

  g.cond_w.noalias() += dcond_h * trace.cond.transpose();
  g.cond_b += row_sums(dcond_h);

  const Vector dpre = dstep_h.cwiseProduct(act.dtanh(trace.step_h).col(0));
  g.step_w.noalias() += dpre * trace.embedding.transpose();
  g.step_b.col(0) += dpre;
  return g;
}

GradCheckResult grad_check(const DenoiserParams& p, const GradCheckInputs& in, double h) {
  require(h > 0.0, "grad_check: step must be positive");
  auto loss_of = [&](const DenoiserParams& q) {
    const auto ref = reference_forward(q, in.ref_mel, in.cond);
    const auto fwd = denoiser_forward(q, in.x_t, in.t, in.cond, ref.hidden);
    return diffusion::weighted_eps_loss(in.eps_true, fwd.eps_hat, in.weights).loss;
  };

  const auto ref = reference_forward(p, in.ref_mel, in.cond);
  const auto fwd = denoiser_forward(p, in.x_t, in.t, in.cond, ref.hidden);
  const auto loss = diffusion::weighted_eps_loss(in.eps_true, fwd.eps_hat, in.weights);
  const DenoiserParams analytic = backward(p, fwd.trace, loss.grad, &ref);

  // Collect analytic gradients in visitation order.
  std::vector<const Matrix*> grads;
  for_each_param(analytic, [&](const std::string&, const Matrix& m) { grads.push_back(&m); });

  GradCheckResult result;
  DenoiserParams probe = p;
  std::size_t block = 0;
  for_each_param(probe, [&](const std::string& name, Matrix& m) {
    const Matrix& ga = *grads[block++];
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double saved = m.data()[i];
      m.data()[i] = saved + h;
      const double up = loss_of(probe);
      m.data()[i] = saved - h;
      const double down = loss_of(probe);
      m.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = ga.data()[i];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = name + "[" + std::to_string(i) + "]";
      }
    }
  });
  return result;
}

}  // namespace refdiff::denoiser
