#include "refdiff/trainer.hpp"

#include <cmath>
#include <random>
#include <set>

namespace refdiff::trainer {

namespace {

std::vector<Matrix*> blocks_of(denoiser::DenoiserParams& p) {
  std::vector<Matrix*> out;
  denoiser::for_each_param(p, [&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<const Matrix*> blocks_of(const denoiser::DenoiserParams& p) {
  std::vector<const Matrix*> out;
  denoiser::for_each_param(p, [&](const std::string&, const Matrix& m) { out.push_back(&m); });
  return out;
}

void accumulate(denoiser::DenoiserParams& acc, const denoiser::DenoiserParams& g) {
  auto a = blocks_of(acc);
  const auto b = blocks_of(g);
  for (std::size_t i = 0; i < a.size(); ++i) *a[i] += *b[i];
}

void scale(denoiser::DenoiserParams& p, double s) {
  for (Matrix* m : blocks_of(p)) *m *= s;
}

bool all_finite(const denoiser::DenoiserParams& p) {
  for (const Matrix* m : blocks_of(p)) {
    if (!m->allFinite()) return false;
  }
  return true;
}

std::vector<Matrix> reference_hidden(const denoiser::DenoiserParams& p, const PreparedSample& s,
                                     bool enabled) {
  if (!enabled) return denoiser::zero_hidden(p, s.x0.cols());
  return denoiser::reference_forward(p, s.reference, s.cond).hidden;
}

void check_dataset(const TrainConfig& cfg, const synthgen::Dataset& ds) {
  require(!ds.samples.empty(), "train: empty dataset");
  for (const auto& s : ds.samples) {
    require(s.gt_mel.n_mels() == cfg.model.n_mels, "dataset n_mels differs from model n_mels");
    require(s.cond.rows() == cfg.model.cond_dim, "dataset condition rows differ from model cond_dim");
  }
}

}  // namespace

nlohmann::json config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"total_steps", c.total_steps},
          {"lambda_in", c.lambda_in},
          {"blur", c.blur},
          {"weighting", c.weighting},
          {"reference", c.reference},
          {"freeze_reference", c.freeze_reference},
          {"seed", c.seed},
          {"schedule",
           {{"T", c.schedule.steps}, {"beta_min", c.schedule.beta_min}, {"beta_max", c.schedule.beta_max},
            {"kind", "linear"}}},
          {"model", denoiser::config_to_json(c.model)},
          {"analysis",
           {{"k", c.analysis.k},
            {"w", c.analysis.w},
            {"eps", c.analysis.eps},
            {"blur_size", c.analysis.blur_size},
            {"blur_sigma", c.analysis.blur_sigma}}},
          {"log_every", c.log_every}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("train config: expected a JSON object");
  static const std::set<std::string> known = {
      "learning_rate", "batch_size", "total_steps", "lambda_in", "blur",     "weighting", "reference",
      "freeze_reference", "seed",  "schedule",    "model",     "analysis", "log_every"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw InputError("train config: unknown key \"" + key + "\"");
  }
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.lambda_in = j.value("lambda_in", c.lambda_in);
    c.blur = j.value("blur", c.blur);
    c.weighting = j.value("weighting", c.weighting);
    c.reference = j.value("reference", c.reference);
    c.freeze_reference = j.value("freeze_reference", c.freeze_reference);
    c.seed = j.value("seed", c.seed);
    c.log_every = j.value("log_every", c.log_every);
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      if (s.value("kind", std::string("linear")) != "linear") {
        throw InputError("train config: only the linear schedule is supported");
      }
      c.schedule.steps = s.value("T", c.schedule.steps);
      c.schedule.beta_min = s.value("beta_min", c.schedule.beta_min);
      c.schedule.beta_max = s.value("beta_max", c.schedule.beta_max);
    }
    if (j.contains("model")) {
      auto m = denoiser::config_to_json(c.model);
      m.update(j.at("model"));
      c.model = denoiser::config_from_json(m);
    }
    if (j.contains("analysis")) {
      const auto& a = j.at("analysis");
      c.analysis.k = a.value("k", c.analysis.k);
      c.analysis.w = a.value("w", c.analysis.w);
      c.analysis.eps = a.value("eps", c.analysis.eps);
      c.analysis.blur_size = a.value("blur_size", c.analysis.blur_size);
      c.analysis.blur_sigma = a.value("blur_sigma", c.analysis.blur_sigma);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("train config: ") + e.what());
  }
  c.analysis.lambda = c.lambda_in;
  return c;
}

void validate(const TrainConfig& c) {
  require(c.learning_rate > 0.0 && std::isfinite(c.learning_rate), "learning_rate must be positive");
  require(c.batch_size >= 1, "batch_size must be >= 1");
  require(c.total_steps >= 0, "total_steps must be >= 0");
  require(c.lambda_in >= 1.0, "lambda_in must be >= 1");
  require(c.log_every >= 0, "log_every must be >= 0");
  require(c.analysis.k >= 1 && c.analysis.k % 2 == 1, "analysis.k must be odd and positive");
  require(c.analysis.w >= 1, "analysis.w must be >= 1");
  require(c.analysis.blur_size >= 1 && c.analysis.blur_size % 2 == 1, "analysis.blur_size must be odd");
  require(c.analysis.blur_sigma > 0.0, "analysis.blur_sigma must be positive");
  diffusion::make_schedule(c.schedule);
}

PreparedSample prepare(const synthgen::SynthSample& sample, const synthgen::NormStats& stats,
                       const TrainConfig& cfg) {
  PreparedSample p;
  p.x0 = sample.gt_mel.data;
  p.cond = sample.cond;
  p.true_regions = sample.true_regions;
  p.detected = transition::analyze(synthgen::denormalize(sample.ref_mel, stats), cfg.analysis).regions;
  const auto kernel = dsp::gaussian_kernel(cfg.analysis.blur_size, cfg.analysis.blur_sigma);
  p.reference = cfg.blur ? transition::blur_regions(sample.ref_mel, p.detected, kernel).data
                         : sample.ref_mel.data;
  p.weights = transition::weight_map(p.detected, sample.gt_mel.n_mels(), cfg.weighting ? cfg.lambda_in : 1.0);
  return p;
}

denoiser::Checkpoint initial_checkpoint(const TrainConfig& cfg, const synthgen::NormStats& stats) {
  validate(cfg);
  denoiser::Checkpoint ck;
  ck.params = denoiser::init_params(cfg.model, derive_seed(cfg.seed, 0));
  ck.schedule = cfg.schedule;
  ck.stats = stats;
  ck.training = config_to_json(cfg);
  return ck;
}

TrainResult train(const TrainConfig& cfg, const synthgen::Dataset& dataset, const ProgressFn& progress) {
  validate(cfg);
  check_dataset(cfg, dataset);
  TrainResult result;
  result.checkpoint = initial_checkpoint(cfg, dataset.stats);
  auto& params = result.checkpoint.params;

  std::vector<PreparedSample> data;
  data.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) data.push_back(prepare(s, dataset.stats, cfg));

  const auto schedule = diffusion::make_schedule(cfg.schedule);
  diffusion::Rng rng(derive_seed(cfg.seed, 1));
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_int_distribution<int> pick_t(1, schedule.steps());
  auto adam = optim::adam_init(params);
  const optim::AdamConfig adam_cfg{cfg.learning_rate};
  const bool train_reference = cfg.reference && !cfg.freeze_reference;

  for (int step = 1; step <= cfg.total_steps; ++step) {
    auto grads = denoiser::zeros_like(params);
    double loss_sum = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& s = data[pick(rng)];
      const int t = pick_t(rng);
      const Matrix eps = diffusion::standard_normal(s.x0.rows(), s.x0.cols(), rng);
      const Matrix x_t = diffusion::q_sample(s.x0, t, eps, schedule);
      denoiser::ReferenceOutput ref;
      if (cfg.reference) ref = denoiser::reference_forward(params, s.reference, s.cond);
      const auto& hidden = cfg.reference ? ref.hidden : denoiser::zero_hidden(params, s.x0.cols());
      const auto fwd = denoiser::denoiser_forward(params, x_t, t, s.cond, hidden);
      const auto loss = diffusion::weighted_eps_loss(eps, fwd.eps_hat, s.weights);
      if (!std::isfinite(loss.loss)) {
        throw NumericalError("train: non-finite loss at step " + std::to_string(step));
      }
      loss_sum += loss.loss;
      accumulate(grads, denoiser::backward(params, fwd.trace, loss.grad, train_reference ? &ref : nullptr));
    }
    scale(grads, 1.0 / cfg.batch_size);
    if (!all_finite(grads)) throw NumericalError("train: non-finite gradient at step " + std::to_string(step));
    optim::adam_step(params, grads, adam, adam_cfg);
    if (!all_finite(params)) throw NumericalError("train: parameters diverged at step " + std::to_string(step));
    const double mean_loss = loss_sum / cfg.batch_size;
    result.loss_curve.push_back(mean_loss);
    if (progress && cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.total_steps)) {
      progress(step, mean_loss);
    }
  }
  return result;
}

void MetricsAccumulator::add(const Matrix& prediction, const Matrix& truth,
                             const transition::TransitionRegionSet& regions) {
  require_same_shape(prediction, truth, "metrics");
  require(regions.total_frames == truth.cols(), "metrics: region set frame count differs");
  for (Eigen::Index c = 0; c < truth.cols(); ++c) {
    const double sse = (prediction.col(c) - truth.col(c)).squaredNorm();
    if (regions.contains(static_cast<int>(c))) {
      region_sse_ += sse;
      region_count_ += static_cast<std::size_t>(truth.rows());
    } else {
      nonregion_sse_ += sse;
      nonregion_count_ += static_cast<std::size_t>(truth.rows());
    }
  }
}

Metrics MetricsAccumulator::result() const {
  Metrics m;
  m.region_count = region_count_;
  m.nonregion_count = nonregion_count_;
  m.total_count = region_count_ + nonregion_count_;
  m.region_mse = region_count_ ? region_sse_ / static_cast<double>(region_count_) : 0.0;
  m.nonregion_mse = nonregion_count_ ? nonregion_sse_ / static_cast<double>(nonregion_count_) : 0.0;
  m.global_mse = m.total_count ? (region_sse_ + nonregion_sse_) / static_cast<double>(m.total_count) : 0.0;
  return m;
}

nlohmann::json metrics_to_json(const Metrics& m) {
  return {{"global_mse", m.global_mse},     {"region_mse", m.region_mse},
          {"nonregion_mse", m.nonregion_mse}, {"region_count", m.region_count},
          {"nonregion_count", m.nonregion_count}, {"total_count", m.total_count},
          {"loss_curve", m.loss_curve}};
}

TrainConfig config_of(const denoiser::Checkpoint& ck) {
  auto cfg = config_from_json(ck.training);
  require(cfg.model == ck.params.config, "checkpoint training record disagrees with its architecture");
  return cfg;
}

Matrix sample_one(const denoiser::Checkpoint& ck, const synthgen::SynthSample& sample,
                  const synthgen::NormStats& stats, int steps, std::uint64_t seed,
                  const diffusion::SamplerOptions& sampler) {
  const auto cfg = config_of(ck);
  require(sample.gt_mel.n_mels() == ck.params.config.n_mels, "sample: n_mels differs from checkpoint");
  require(sample.cond.rows() == ck.params.config.cond_dim, "sample: condition rows differ from checkpoint");
  const auto prep = prepare(sample, stats, cfg);
  const auto hidden = reference_hidden(ck.params, prep, cfg.reference);
  const auto schedule = diffusion::make_schedule(ck.schedule);
  const diffusion::Predictor predictor = [&](const Matrix& x, int t, const diffusion::ConditionBundle& b) {
    return denoiser::denoiser_forward(ck.params, x, t, b.cond, hidden).eps_hat;
  };
  return diffusion::sample(predictor, {prep.cond, prep.reference}, schedule, steps, seed, prep.x0.rows(),
                           prep.x0.cols(), sampler);
}

Metrics evaluate(const denoiser::Checkpoint& ck, const synthgen::Dataset& dataset, int steps,
                 std::uint64_t seed, const diffusion::SamplerOptions& sampler) {
  require(steps >= 1 && steps <= ck.schedule.steps,
          "evaluate: steps must be in [1, " + std::to_string(ck.schedule.steps) + "]");
  MetricsAccumulator acc;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    acc.add(sample_one(ck, s, dataset.stats, steps, derive_seed(seed, i), sampler), s.gt_mel.data, s.true_regions);
  }
  return acc.result();
}

std::vector<Variant> default_variants() {
  return {{"full", true, true, true},
          {"no_weighting", true, false, true},
          {"no_blur", false, true, true},
          {"no_blur_no_weighting", false, false, true},
          {"no_reference", false, true, false}};
}

AblationResult ablation_suite(const TrainConfig& base, const synthgen::Dataset& train_set,
                              const synthgen::Dataset& eval_set, const AblationOptions& opts,
                              const AblationProgressFn& progress) {
  require(!opts.variants.empty(), "ablation: no variants");
  require(!opts.steps.empty(), "ablation: no step counts");
  for (int s : opts.steps) {
    require(s >= 1 && s <= base.schedule.steps, "ablation: step count outside [1, T]");
  }
  AblationResult r;
  r.base = base;
  r.sampler = opts.sampler;
  for (const auto& v : opts.variants) {
    auto cfg = base;
    cfg.blur = v.blur;
    cfg.weighting = v.weighting;
    cfg.reference = v.reference;
    ProgressFn cb;
    if (progress) cb = [&](int step, double loss) { progress(v.name, step, loss); };
    auto trained = train(cfg, train_set, cb);
    VariantResult vr;
    vr.variant = v;
    vr.loss_curve = trained.loss_curve;
    for (int s : opts.steps) vr.by_steps.emplace_back(s, evaluate(trained.checkpoint, eval_set, s, opts.eval_seed, opts.sampler));
    r.variants.push_back(std::move(vr));
  }
  return r;
}

nlohmann::json ablation_to_json(const AblationResult& r) {
  nlohmann::json variants = nlohmann::json::array();
  for (const auto& v : r.variants) {
    nlohmann::json evals = nlohmann::json::array();
    for (const auto& [steps, m] : v.by_steps) {
      auto mj = metrics_to_json(m);
      mj.erase("loss_curve");
      mj["steps"] = steps;
      evals.push_back(mj);
    }
    variants.push_back({{"name", v.variant.name},
                        {"blur", v.variant.blur},
                        {"weighting", v.variant.weighting},
                        {"reference", v.variant.reference},
                        {"final_loss", v.loss_curve.empty() ? 0.0 : v.loss_curve.back()},
                        {"evaluations", evals}});
  }
  return {{"base_config", config_to_json(r.base)},
          {"sampler", diffusion::sampler_to_json(r.sampler)},
          {"variants", variants}};
}

}  // namespace refdiff::trainer
