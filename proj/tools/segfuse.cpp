// segfuse: fuse multi-model, multi-scale instance segmentation predictions.
//
// Exit codes: 0 success, 1 usage error, 2 data or contract error.

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "segfuse/errors.hpp"
#include "segfuse/pipeline.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

const std::map<std::string, segfuse::NormalizationMode> kNormalization = {
    {"fraction", segfuse::NormalizationMode::Fraction},
    {"minmax", segfuse::NormalizationMode::MinMax}};
const std::map<std::string, segfuse::GroupingChoice> kGrouping = {
    {"vertical", segfuse::GroupingChoice::Vertical},
    {"horizontal", segfuse::GroupingChoice::Horizontal},
    {"both", segfuse::GroupingChoice::Both}};
const std::map<std::string, segfuse::WeightingMode> kWeighting = {
    {"ap", segfuse::WeightingMode::Ap}, {"uniform", segfuse::WeightingMode::Uniform}};

void add_common(CLI::App* cmd, segfuse::PipelineConfig& cfg) {
  cmd->add_option("--iou-threshold", cfg.iou_threshold, "Mask IoU for a true positive")
      ->capture_default_str();
  cmd->add_option("--normalization", cfg.normalization, "AP normalization: fraction | minmax")
      ->transform(CLI::CheckedTransformer(kNormalization, CLI::ignore_case).description("{fraction,minmax}"))
      ->default_str("fraction");
  cmd->add_option("--weighting", cfg.weighting, "Model weights: ap | uniform")
      ->transform(CLI::CheckedTransformer(kWeighting, CLI::ignore_case).description("{ap,uniform}"))
      ->default_str("ap");
  cmd->add_option("--binarize-threshold", cfg.binarize_threshold, "Soft-mask cut")
      ->capture_default_str();
  cmd->add_option("--output-dir", cfg.output_dir, "Directory for outputs")->capture_default_str();
}

void add_pipeline_options(CLI::App* cmd, segfuse::PipelineConfig& cfg) {
  cmd->add_option("--grouping", cfg.grouping, "Weight grouping: vertical | horizontal | both")
      ->transform(CLI::CheckedTransformer(kGrouping, CLI::ignore_case).description("{vertical,horizontal,both}"))
      ->default_str("both");
  cmd->add_option("--attention-factor", cfg.attention_factor, "Temperature f of the local gate")
      ->capture_default_str();
  cmd->add_option("--alpha-fallback", cfg.alpha_fallback,
                  "Scale gate used when the manifest carries no alpha maps")
      ->capture_default_str();
  cmd->add_option("--bbox-expansion", cfg.bbox_expansion, "Crop box growth factor")
      ->capture_default_str();
  cmd->add_option("--scales", cfg.scales, "Subset of manifest scales to run (ascending)");
  cmd->add_option("--outside-beta", cfg.outside_beta, "Local gate outside object regions")
      ->capture_default_str();
  cmd->add_option("--force-beta", cfg.force_beta, "Use this local gate everywhere");
  cmd->add_option("--jobs", cfg.jobs, "Worker threads (does not change outputs)")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segfuse: ensemble and multi-scale fusion of instance segmentation predictions"};
  app.require_subcommand(1);

  segfuse::PipelineConfig cfg;
  std::string manifest;
  std::optional<std::string> calibration;

  auto* fuse = app.add_subcommand("fuse", "AP-weighted fusion of instance masks across models");
  fuse->add_option("manifest", manifest, "Prediction manifest")->required();
  fuse->add_option("--calibration", calibration, "Manifest with ground truth used to derive weights");
  add_common(fuse, cfg);
  std::string fuse_grouping = "vertical";
  fuse->add_option("--grouping", fuse_grouping, "vertical | horizontal")
      ->check(CLI::IsMember({"vertical", "horizontal"}))
      ->capture_default_str();
  std::optional<double> fuse_scale;
  fuse->add_option("--scale", fuse_scale, "Scale whose instances are fused (default: largest)");

  auto* pipeline = app.add_subcommand("pipeline", "Ensemble, local attention and scale fusion");
  pipeline->add_option("manifest", manifest, "Prediction manifest")->required();
  pipeline->add_option("--calibration", calibration,
                       "Manifest with ground truth used to derive weights");
  add_common(pipeline, cfg);
  add_pipeline_options(pipeline, cfg);

  std::string gt_manifest;
  auto* evaluate = app.add_subcommand("evaluate", "Mask AP per (model, component) and (model, object)");
  evaluate->add_option("predictions", manifest, "Prediction manifest")->required();
  evaluate->add_option("ground_truth", gt_manifest, "Manifest carrying ground truth")->required();
  add_common(evaluate, cfg);

  segfuse::SynthConfig synth;
  std::optional<int> exact_model = 0;
  bool no_exact = false;
  auto* synth_cmd = app.add_subcommand("synth", "Write a deterministic synthetic fixture");
  synth_cmd->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  synth_cmd->add_option("--height", synth.height)->capture_default_str();
  synth_cmd->add_option("--width", synth.width)->capture_default_str();
  synth_cmd->add_option("--objects", synth.objects)->capture_default_str();
  synth_cmd->add_option("--models", synth.models)->capture_default_str();
  synth_cmd->add_option("--scales", synth.scales, "Ascending inference scales");
  synth_cmd->add_option("--perturbation", synth.perturbation,
                        "Max shift/dilation in pixels for perturbed models")
      ->capture_default_str();
  synth_cmd->add_option("--exact-model", exact_model, "Index of the unperturbed model");
  synth_cmd->add_flag("--no-exact-model", no_exact, "Perturb every model");
  synth_cmd->add_option("--logit-noise", synth.logit_noise)->capture_default_str();
  synth_cmd->add_option("--bbox-expansion", synth.bbox_expansion)->capture_default_str();
  synth_cmd->add_flag("--with-alpha", synth.with_alpha, "Also write per-scale alpha maps");
  synth_cmd->add_option("--output-dir", cfg.output_dir, "Directory for the fixture")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    cfg.validate();
  } catch (const segfuse::ArgumentError& e) {
    std::cerr << "segfuse: " << e.what() << "\n";
    return kExitUsage;
  }

  const auto calib_path = calibration ? std::optional<std::filesystem::path>(*calibration)
                                      : std::nullopt;
  try {
    if (fuse->parsed()) {
      const auto mode = fuse_grouping == "vertical" ? segfuse::GroupingMode::Vertical
                                                    : segfuse::GroupingMode::Horizontal;
      segfuse::cmd_fuse(manifest, calib_path, mode, fuse_scale, cfg);
    } else if (pipeline->parsed()) {
      segfuse::cmd_pipeline(manifest, calib_path, cfg);
    } else if (evaluate->parsed()) {
      segfuse::cmd_evaluate(manifest, gt_manifest, cfg);
    } else if (synth_cmd->parsed()) {
      synth.exact_model = no_exact ? std::nullopt : exact_model;
      segfuse::cmd_synth(synth, cfg.output_dir);
    }
  } catch (const segfuse::ArgumentError& e) {
    std::cerr << "segfuse: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "segfuse: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
