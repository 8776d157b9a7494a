#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "refdiff/adam.hpp"
#include "refdiff/checkpoint.hpp"
#include "refdiff/denoiser.hpp"
#include "refdiff/diffusion.hpp"
#include "refdiff/synthgen.hpp"
#include "refdiff/transition.hpp"

namespace refdiff::trainer {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 8;
  int total_steps = 2000;
  double lambda_in = 2.0;
  bool blur = true;
  bool weighting = true;
  bool reference = true;
  // Keep the reference branch at its initial weights.
  bool freeze_reference = false;
  std::uint64_t seed = 0;
  diffusion::ScheduleConfig schedule;
  denoiser::DenoiserConfig model;
  transition::AnalysisParams analysis;
  // Cadence of progress callbacks (0 = never).
  int log_every = 100;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Missing keys keep their defaults; unknown keys are rejected.
nlohmann::json config_to_json(const TrainConfig& c);
TrainConfig config_from_json(const nlohmann::json& j);
void validate(const TrainConfig& c);

// Per-sample tensors as seen by the training loop.
struct PreparedSample {
  Matrix x0;         // F x T, normalised ground truth
  Matrix reference;  // F x T, normalised reference (blurred inside detected regions when enabled)
  Matrix cond;       // D x T
  transition::WeightMap weights;
  transition::TransitionRegionSet detected;
  transition::TransitionRegionSet true_regions;
};

// Regions are detected on the reference in the linear domain. With
// weighting off the weight map is all ones.
PreparedSample prepare(const synthgen::SynthSample& sample, const synthgen::NormStats& stats,
                       const TrainConfig& cfg);

struct TrainResult {
  denoiser::Checkpoint checkpoint;
  std::vector<double> loss_curve;  // mean batch loss per step
};

using ProgressFn = std::function<void(int step, double loss)>;

// Throws NumericalError as soon as a batch loss is non-finite.
TrainResult train(const TrainConfig& cfg, const synthgen::Dataset& dataset, const ProgressFn& progress = {});

// Untrained model wrapped as a checkpoint, for baselines.
denoiser::Checkpoint initial_checkpoint(const TrainConfig& cfg, const synthgen::NormStats& stats);

struct Metrics {
  double global_mse = 0.0;
  double region_mse = 0.0;     // 0 when no entry lies in a region
  double nonregion_mse = 0.0;  // 0 when every entry lies in a region
  std::size_t region_count = 0;
  std::size_t nonregion_count = 0;
  std::size_t total_count = 0;
  std::vector<double> loss_curve;
};

// Pools squared errors over all entries; columns inside `regions` count as
// region entries.
class MetricsAccumulator {
 public:
  void add(const Matrix& prediction, const Matrix& truth, const transition::TransitionRegionSet& regions);
  [[nodiscard]] Metrics result() const;

 private:
  double region_sse_ = 0.0;
  double nonregion_sse_ = 0.0;
  std::size_t region_count_ = 0;
  std::size_t nonregion_count_ = 0;
};

nlohmann::json metrics_to_json(const Metrics& m);

// Evaluation clips x0_hat to the data range [-1, 1]. With H < F the model
// cannot reproduce every noise direction, and unclipped chains drift far
// outside the range.
inline diffusion::SamplerOptions eval_sampler() { return {diffusion::StrideRule::reuse, true, 1.0}; }

// Ancestral sampling for one sample, reference prepared as during training.
Matrix sample_one(const denoiser::Checkpoint& ck, const synthgen::SynthSample& sample,
                  const synthgen::NormStats& stats, int steps, std::uint64_t seed,
                  const diffusion::SamplerOptions& sampler = eval_sampler());

// Sample i uses derive_seed(seed, i), so variants are compared on paired noise.
Metrics evaluate(const denoiser::Checkpoint& ck, const synthgen::Dataset& dataset, int steps,
                 std::uint64_t seed = 0, const diffusion::SamplerOptions& sampler = eval_sampler());

TrainConfig config_of(const denoiser::Checkpoint& ck);

struct Variant {
  std::string name;
  bool blur = true;
  bool weighting = true;
  bool reference = true;
};

std::vector<Variant> default_variants();

struct AblationOptions {
  std::vector<Variant> variants = default_variants();
  std::vector<int> steps = {24, 54, 100};
  std::uint64_t eval_seed = 0;
  diffusion::SamplerOptions sampler = eval_sampler();
};

struct VariantResult {
  Variant variant;
  std::vector<std::pair<int, Metrics>> by_steps;
  std::vector<double> loss_curve;
};

struct AblationResult {
  TrainConfig base;
  diffusion::SamplerOptions sampler;
  std::vector<VariantResult> variants;
};

using AblationProgressFn = std::function<void(const std::string& variant, int step, double loss)>;

AblationResult ablation_suite(const TrainConfig& base, const synthgen::Dataset& train_set,
                              const synthgen::Dataset& eval_set, const AblationOptions& opts = {},
                              const AblationProgressFn& progress = {});

nlohmann::json ablation_to_json(const AblationResult& r);

}  // namespace refdiff::trainer
