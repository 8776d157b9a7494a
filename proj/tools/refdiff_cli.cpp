#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "refdiff/checkpoint.hpp"
#include "refdiff/dataset_io.hpp"
#include "refdiff/dsp.hpp"
#include "refdiff/mels_format.hpp"
#include "refdiff/synthgen.hpp"
#include "refdiff/trainer.hpp"
#include "refdiff/transition.hpp"

namespace fs = std::filesystem;
using namespace refdiff;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kInputError = 2, kParamError = 3, kNumericalError = 4 };

fs::path default_out_dir() {
  const char* env = std::getenv("REFDIFF_OUT_DIR");
  return env && *env ? fs::path(env) : fs::path(".");
}

void emit(const json& doc, bool as_json, const std::string& summary) {
  if (as_json) {
    std::cout << doc.dump(2) << "\n";
  } else {
    std::cout << summary << "\n";
  }
}

bool is_mels_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot open " + p.string());
  char magic[4] = {};
  in.read(magic, 4);
  return in.gcount() == 4 && std::string(magic, 4) == "MELS";
}

void refuse_overwrite(const fs::path& out, const fs::path& in) {
  if (fs::exists(out) && fs::exists(in) && fs::equivalent(out, in)) {
    throw std::invalid_argument("output path " + out.string() + " would overwrite input " + in.string());
  }
}

json read_json_file(const fs::path& p) {
  try {
    return json::parse(io::read_file(p));
  } catch (const json::parse_error& e) {
    throw InputError(p.string() + ": " + e.what());
  }
}

std::string metrics_summary(const trainer::Metrics& m) {
  std::ostringstream s;
  s << "global MSE " << m.global_mse << ", region MSE " << m.region_mse << ", non-region MSE "
    << m.nonregion_mse << " (" << m.total_count << " entries)";
  return s.str();
}

struct AnalysisFlags {
  transition::AnalysisParams params;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--k", params.k, "Ratio smoothing width (odd)")->capture_default_str();
    cmd->add_option("--w", params.w, "Transition window size in frames")->capture_default_str();
    cmd->add_option("--eps", params.eps, "Ratio guard")->capture_default_str();
    cmd->add_option("--lambda", params.lambda, "Loss weight inside regions")->capture_default_str();
  }
};

// --- analyze ---------------------------------------------------------------

struct AnalyzeOpts {
  fs::path input;
  std::optional<fs::path> out;
  AnalysisFlags analysis;
  bool json = false;
};

int run_analyze(const AnalyzeOpts& o) {
  dsp::MelSpectrogram mel;
  if (is_mels_file(o.input)) {
    mel = io::read_mels(o.input);
    if (mel.is_log) throw InputError("analyze needs linear mel energies; " + o.input.string() + " is log-compressed");
  } else {
    mel = dsp::mel_spectrogram(dsp::load_wav(o.input));
  }
  const auto& p = o.analysis.params;
  require(p.k >= 1 && p.k % 2 == 1, "--k must be a positive odd number");
  require(p.w >= 1, "--w must be >= 1");
  require(p.eps > 0.0, "--eps must be positive");
  require(p.lambda >= 1.0, "--lambda must be >= 1");
  const auto a = transition::analyze(mel, p);
  const auto report = transition::region_report(a, mel.hop, p);
  if (o.out) io::write_file(*o.out, report.dump(2) + "\n");
  std::ostringstream s;
  s << a.points.size() << " transition points, " << a.regions.regions.size() << " regions covering "
    << a.regions.covered_frames() << "/" << mel.frames() << " frames";
  emit(report, o.json, s.str());
  return kOk;
}

// --- blur ------------------------------------------------------------------

struct BlurOpts {
  fs::path input;
  fs::path out;
  std::optional<fs::path> regions;
  AnalysisFlags analysis;
  int size = 5;
  double sigma = 1.0;
  bool json = false;
};

int run_blur(const BlurOpts& o) {
  refuse_overwrite(o.out, o.input);
  const auto mel = io::read_mels(o.input);
  const auto kernel = dsp::gaussian_kernel(o.size, o.sigma);
  transition::TransitionRegionSet regions;
  if (o.regions) {
    regions = transition::regions_from_report(read_json_file(*o.regions));
  } else {
    if (mel.is_log) {
      throw InputError("automatic detection needs linear mel energies; pass --regions for log input");
    }
    regions = transition::analyze(mel, o.analysis.params).regions;
  }
  if (regions.total_frames != mel.frames()) {
    throw InputError("region report covers " + std::to_string(regions.total_frames) + " frames, input has " +
                     std::to_string(mel.frames()));
  }
  io::write_mels(o.out, transition::blur_regions(mel, regions, kernel));
  json regions_json = json::array();
  for (const auto& r : regions.regions) regions_json.push_back({r.start, r.end});
  const json doc = {{"input", o.input.string()},
                    {"output", o.out.string()},
                    {"regions", regions_json},
                    {"kernel", {{"size", o.size}, {"sigma", o.sigma}}}};
  emit(doc, o.json, "blurred " + std::to_string(regions.regions.size()) + " regions into " + o.out.string());
  return kOk;
}

// --- gendata ---------------------------------------------------------------

struct GendataOpts {
  int n = 64;
  std::uint64_t seed = 0;
  std::optional<fs::path> out;
  std::optional<fs::path> stats_from;
  double strength = 1.0;
  bool json = false;
};

int run_gendata(const GendataOpts& o) {
  require(o.n >= 1, "--n must be >= 1");
  require(o.strength >= 0.0 && o.strength <= 1.0, "--strength must be in [0, 1]");
  synthgen::DatasetConfig cfg;
  cfg.degrade_strength = o.strength;
  std::optional<synthgen::NormStats> stats;
  if (o.stats_from) stats = io::read_dataset(*o.stats_from).stats;
  const auto ds = synthgen::make_dataset(o.n, o.seed, cfg, stats);
  const fs::path dir = o.out.value_or(default_out_dir() / "data");
  const auto manifest = io::write_dataset(ds, dir);
  const json doc = {{"manifest", manifest.string()},
                    {"samples", o.n},
                    {"seed", o.seed},
                    {"degrade_strength", o.strength},
                    {"norm_stats", synthgen::stats_to_json(ds.stats)}};
  emit(doc, o.json, "wrote " + std::to_string(o.n) + " samples, manifest " + manifest.string());
  return kOk;
}

// --- train -----------------------------------------------------------------

struct TrainOpts {
  std::optional<fs::path> config;
  std::optional<fs::path> manifest;
  std::optional<fs::path> out;
  bool json = false;
  bool quiet = false;
};

// The config file may name the manifest and output directory next to the
// training hyperparameters; command-line flags take precedence.
struct TrainJob {
  trainer::TrainConfig config;
  fs::path manifest;
  fs::path out;
};

TrainJob load_train_job(const std::optional<fs::path>& config, const std::optional<fs::path>& manifest,
                        const std::optional<fs::path>& out) {
  json j = config ? read_json_file(*config) : json::object();
  if (!j.is_object()) throw InputError("train config must be a JSON object");
  TrainJob job;
  const auto base = config ? config->parent_path() : fs::path();
  std::optional<fs::path> cfg_manifest;
  std::optional<fs::path> cfg_out;
  if (j.contains("manifest")) cfg_manifest = base / j.at("manifest").get<std::string>();
  if (j.contains("out")) cfg_out = base / j.at("out").get<std::string>();
  j.erase("manifest");
  j.erase("out");
  job.config = trainer::config_from_json(j);
  if (manifest) {
    job.manifest = *manifest;
  } else if (cfg_manifest) {
    job.manifest = *cfg_manifest;
  } else {
    throw std::invalid_argument("no dataset: pass --manifest or set \"manifest\" in the config");
  }
  job.out = out ? *out : cfg_out.value_or(default_out_dir() / "run");
  trainer::validate(job.config);
  return job;
}

int run_train(const TrainOpts& o) {
  const auto job = load_train_job(o.config, o.manifest, o.out);
  const auto ds = io::read_dataset(job.manifest);
  trainer::ProgressFn progress;
  if (!o.quiet) {
    progress = [](int step, double loss) { std::cerr << "step " << step << " loss " << loss << "\n"; };
  }
  const auto result = trainer::train(job.config, ds, progress);
  fs::create_directories(job.out);
  const auto ck_path = job.out / "checkpoint.rdck";
  const auto curve_path = job.out / "loss_curve.json";
  denoiser::write_checkpoint(ck_path, result.checkpoint);
  const json curve = {{"steps", job.config.total_steps},
                      {"final_loss", result.loss_curve.empty() ? 0.0 : result.loss_curve.back()},
                      {"loss_curve", result.loss_curve}};
  io::write_file(curve_path, curve.dump() + "\n");
  const json doc = {{"checkpoint", ck_path.string()},
                    {"loss_curve", curve_path.string()},
                    {"final_loss", curve.at("final_loss")},
                    {"config", trainer::config_to_json(job.config)}};
  std::ostringstream s;
  s << "trained " << job.config.total_steps << " steps, final loss " << curve.at("final_loss").get<double>()
    << ", checkpoint " << ck_path.string();
  emit(doc, o.json, s.str());
  return kOk;
}

// --- sample ----------------------------------------------------------------

struct SamplerFlags {
  std::string stride = "reuse";
  bool no_clip = false;

  [[nodiscard]] diffusion::SamplerOptions options() const {
    auto o = trainer::eval_sampler();
    o.stride = diffusion::stride_rule_from_string(stride);
    o.clip_denoised = !no_clip;
    return o;
  }
};

void add_sampler_flags(CLI::App* cmd, SamplerFlags& f) {
  cmd->add_option("--stride", f.stride, "Reduced-step rule")
      ->check(CLI::IsMember({"reuse", "respace"}))
      ->capture_default_str();
  cmd->add_flag("--no-clip", f.no_clip, "Do not clip the x0 estimate to [-1, 1]");
}

struct SampleOpts {
  fs::path checkpoint;
  fs::path manifest;
  int index = 0;
  int steps = 100;
  std::uint64_t seed = 0;
  fs::path out;
  bool json = false;
  SamplerFlags sampler;
};

int run_sample(const SampleOpts& o) {
  refuse_overwrite(o.out, o.manifest);
  const auto ck = denoiser::read_checkpoint(o.checkpoint);
  require(o.steps >= 1 && o.steps <= ck.schedule.steps,
          "--steps must be in [1, " + std::to_string(ck.schedule.steps) + "]");
  const auto ds = io::read_dataset(o.manifest);
  require(o.index >= 0 && o.index < static_cast<int>(ds.samples.size()),
          "--index outside [0, " + std::to_string(ds.samples.size()) + ")");
  const auto& s = ds.samples[static_cast<std::size_t>(o.index)];
  dsp::MelSpectrogram mel;
  mel.data = trainer::sample_one(ck, s, ds.stats, o.steps, o.seed, o.sampler.options());
  mel.hop = s.gt_mel.hop;
  mel.is_log = true;
  io::write_mels(o.out, mel);
  trainer::MetricsAccumulator acc;
  acc.add(mel.data, s.gt_mel.data, s.true_regions);
  const auto m = acc.result();
  json doc = {{"output", o.out.string()}, {"index", o.index}, {"steps", o.steps}, {"seed", o.seed}};
  doc["sampler"] = diffusion::sampler_to_json(o.sampler.options());
  doc["metrics"] = trainer::metrics_to_json(m);
  doc["metrics"].erase("loss_curve");
  emit(doc, o.json, "wrote " + o.out.string() + "; " + metrics_summary(m));
  return kOk;
}

// --- eval ------------------------------------------------------------------

struct EvalOpts {
  fs::path checkpoint;
  fs::path manifest;
  int steps = 100;
  std::uint64_t seed = 0;
  std::optional<fs::path> out;
  bool json = false;
  SamplerFlags sampler;
};

int run_eval(const EvalOpts& o) {
  const auto ck = denoiser::read_checkpoint(o.checkpoint);
  require(o.steps >= 1 && o.steps <= ck.schedule.steps,
          "--steps must be in [1, " + std::to_string(ck.schedule.steps) + "]");
  const auto ds = io::read_dataset(o.manifest);
  const auto m = trainer::evaluate(ck, ds, o.steps, o.seed, o.sampler.options());
  json doc = trainer::metrics_to_json(m);
  doc.erase("loss_curve");
  doc["steps"] = o.steps;
  doc["seed"] = o.seed;
  doc["sampler"] = diffusion::sampler_to_json(o.sampler.options());
  doc["samples"] = ds.samples.size();
  if (o.out) io::write_file(*o.out, doc.dump(2) + "\n");
  emit(doc, o.json, metrics_summary(m));
  return kOk;
}

// --- ablate ----------------------------------------------------------------

struct AblateOpts {
  std::optional<fs::path> config;
  std::optional<fs::path> manifest;
  fs::path eval_manifest;
  std::vector<int> steps = {24, 54, 100};
  std::vector<std::string> variants;
  std::uint64_t eval_seed = 0;
  std::optional<fs::path> out;
  bool json = false;
  bool quiet = false;
  SamplerFlags sampler;
};

int run_ablate(const AblateOpts& o) {
  const auto job = load_train_job(o.config, o.manifest, std::nullopt);
  const auto train_set = io::read_dataset(job.manifest);
  const auto eval_set = io::read_dataset(o.eval_manifest);
  trainer::AblationOptions opts;
  opts.steps = o.steps;
  opts.eval_seed = o.eval_seed;
  opts.sampler = o.sampler.options();
  if (!o.variants.empty()) {
    opts.variants.clear();
    for (const auto& name : o.variants) {
      bool found = false;
      for (const auto& v : trainer::default_variants()) {
        if (v.name == name) {
          opts.variants.push_back(v);
          found = true;
        }
      }
      require(found, "unknown variant \"" + name + "\"");
    }
  }
  trainer::AblationProgressFn progress;
  if (!o.quiet) {
    progress = [](const std::string& v, int step, double loss) {
      std::cerr << v << " step " << step << " loss " << loss << "\n";
    };
  }
  const auto doc = trainer::ablation_to_json(trainer::ablation_suite(job.config, train_set, eval_set, opts, progress));
  if (o.out) io::write_file(*o.out, doc.dump(2) + "\n");
  std::ostringstream s;
  for (const auto& v : doc.at("variants")) {
    for (const auto& e : v.at("evaluations")) {
      s << v.at("name").get<std::string>() << " @" << e.at("steps").get<int>() << ": global "
        << e.at("global_mse").get<double>() << ", region " << e.at("region_mse").get<double>() << "\n";
    }
  }
  emit(doc, o.json, s.str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reference-guided diffusion toolkit for mel-spectrograms"};
  app.require_subcommand(1);

  AnalyzeOpts analyze;
  auto* c_analyze = app.add_subcommand("analyze", "Detect pitch-transition regions in a WAV or linear MELS file");
  c_analyze->add_option("input", analyze.input, "WAV or MELS file")->required();
  c_analyze->add_option("--out", analyze.out, "Also write the report to this file");
  c_analyze->add_flag("--json", analyze.json, "Print the region report as JSON");
  analyze.analysis.add_to(c_analyze);

  BlurOpts blur;
  auto* c_blur = app.add_subcommand("blur", "Gaussian-blur transition regions of a MELS file");
  c_blur->add_option("input", blur.input, "Input MELS file")->required();
  c_blur->add_option("--out", blur.out, "Output MELS file")->required();
  c_blur->add_option("--regions", blur.regions, "Region report JSON (default: detect on the input)");
  c_blur->add_option("--size", blur.size, "Kernel size (odd)")->capture_default_str();
  c_blur->add_option("--sigma", blur.sigma, "Kernel standard deviation")->capture_default_str();
  c_blur->add_flag("--json", blur.json);
  blur.analysis.add_to(c_blur);

  GendataOpts gendata;
  auto* c_gen = app.add_subcommand("gendata", "Generate a synthetic dataset (manifest + MELS files)");
  c_gen->add_option("--n", gendata.n, "Number of samples")->capture_default_str();
  c_gen->add_option("--seed", gendata.seed, "Dataset seed")->capture_default_str();
  c_gen->add_option("--out", gendata.out, "Output directory (default: $REFDIFF_OUT_DIR/data)");
  c_gen->add_option("--stats-from", gendata.stats_from, "Reuse normalisation statistics of this manifest");
  c_gen->add_option("--strength", gendata.strength, "Reference degradation strength")->capture_default_str();
  c_gen->add_flag("--json", gendata.json);

  TrainOpts train;
  auto* c_train = app.add_subcommand("train", "Train a denoiser");
  c_train->add_option("--config", train.config, "Training config JSON");
  c_train->add_option("--manifest", train.manifest, "Training manifest");
  c_train->add_option("--out", train.out, "Output directory (default: $REFDIFF_OUT_DIR/run)");
  c_train->add_flag("--json", train.json);
  c_train->add_flag("--quiet", train.quiet, "No progress on stderr");

  SampleOpts sample;
  auto* c_sample = app.add_subcommand("sample", "Sample one spectrogram for a manifest entry");
  c_sample->add_option("--checkpoint", sample.checkpoint)->required();
  c_sample->add_option("--manifest", sample.manifest)->required();
  c_sample->add_option("--index", sample.index)->capture_default_str();
  c_sample->add_option("--steps", sample.steps, "Denoising steps")->capture_default_str();
  c_sample->add_option("--seed", sample.seed)->capture_default_str();
  c_sample->add_option("--out", sample.out, "Output MELS file")->required();
  add_sampler_flags(c_sample, sample.sampler);
  c_sample->add_flag("--json", sample.json);

  EvalOpts eval;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  c_eval->add_option("--checkpoint", eval.checkpoint)->required();
  c_eval->add_option("--manifest", eval.manifest)->required();
  c_eval->add_option("--steps", eval.steps)->capture_default_str();
  c_eval->add_option("--seed", eval.seed)->capture_default_str();
  c_eval->add_option("--out", eval.out, "Also write metrics JSON to this file");
  add_sampler_flags(c_eval, eval.sampler);
  c_eval->add_flag("--json", eval.json);

  AblateOpts ablate;
  auto* c_ablate = app.add_subcommand("ablate", "Train and evaluate the ablation variants");
  c_ablate->add_option("--config", ablate.config, "Base training config JSON");
  c_ablate->add_option("--manifest", ablate.manifest, "Training manifest");
  c_ablate->add_option("--eval-manifest", ablate.eval_manifest, "Evaluation manifest")->required();
  c_ablate->add_option("--steps", ablate.steps, "Denoising step counts")->delimiter(',')->capture_default_str();
  c_ablate->add_option("--variants", ablate.variants,
                       "Subset of full,no_weighting,no_blur,no_blur_no_weighting,no_reference")
      ->delimiter(',');
  c_ablate->add_option("--eval-seed", ablate.eval_seed)->capture_default_str();
  c_ablate->add_option("--out", ablate.out, "Also write the table to this file");
  add_sampler_flags(c_ablate, ablate.sampler);
  c_ablate->add_flag("--json", ablate.json);
  c_ablate->add_flag("--quiet", ablate.quiet);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kParamError;
  }

  try {
    if (*c_analyze) return run_analyze(analyze);
    if (*c_blur) return run_blur(blur);
    if (*c_gen) return run_gendata(gendata);
    if (*c_train) return run_train(train);
    if (*c_sample) return run_sample(sample);
    if (*c_eval) return run_eval(eval);
    if (*c_ablate) return run_ablate(ablate);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const json::exception& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumericalError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "parameter error: " << e.what() << "\n";
    return kParamError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}
