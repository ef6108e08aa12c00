#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "json.hpp"
#include "segfuse/attention.hpp"
#include "segfuse/bundle.hpp"
#include "segfuse/fusion.hpp"
#include "segfuse/metrics.hpp"
#include "segfuse/synth.hpp"

namespace segfuse {

enum class GroupingChoice { Vertical, Horizontal, Both };
enum class WeightingMode { Ap, Uniform };

struct PipelineConfig {
  double iou_threshold = 0.6;
  NormalizationMode normalization = NormalizationMode::Fraction;
  GroupingChoice grouping = GroupingChoice::Both;
  double attention_factor = 1.0;
  double binarize_threshold = 0.5;
  double alpha_fallback = 0.5;
  double bbox_expansion = 1.2;
  /// Scales to run; empty means every scale in the manifest.
  std::vector<double> scales;
  WeightingMode weighting = WeightingMode::Ap;
  /// Local gate outside every object region.
  double outside_beta = kNeutralAttention;
  /// Replaces the computed local gate everywhere when set.
  std::optional<double> force_beta;
  /// Worker threads for per-scale work; never changes the output.
  int jobs = 1;
  std::filesystem::path output_dir = "out";

  /// Throws ArgumentError on an out-of-range field.
  void validate() const;
  /// Every field that can influence outputs (so not jobs or output_dir).
  nlohmann::json to_json() const;
};

/// Fusion weights for one scale.
struct WeightSet {
  double scale = 1.0;
  std::map<Component, FusionWeights> per_component;
  std::map<ObjectId, FusionWeights> per_object;
  /// Background channel and scale-level gates: normalized mean AP over components.
  FusionWeights overall;
  /// Per-object table of the mean AP over objects, used for global maps when
  /// only horizontal weights are requested.
  FusionWeights overall_objects;

  /// Weights for logit channel c (0 = background).
  std::vector<FusionWeights> channel_weights(int channels) const;
  nlohmann::json to_json() const;
};

/// Derives the weights of `models` at `scale`. AP weighting needs a
/// calibration bundle carrying ground truth; without one a DataError is
/// raised rather than falling back to uniform weights.
WeightSet compute_weight_set(std::span<const ModelId> models, const PredictionBundle* calibration,
                             double scale, const PipelineConfig& cfg);

struct FuseResult {
  double scale = 1.0;
  GroupingMode mode = GroupingMode::Vertical;
  std::vector<MaskInstance> fused;
  std::vector<FusionWeights> weights;
};

/// group -> weights -> weighted mask average -> binarize, for the instances
/// predicted at `scale`. Fused instances carry model id "ensemble".
FuseResult fuse_instances(const PredictionBundle& preds, const PredictionBundle* calibration,
                          double scale, GroupingMode mode, const PipelineConfig& cfg);

struct ScaleOutput {
  double scale = 1.0;
  LogitMap global;   // ensemble of the models' global logits
  AttentionMap beta; // local gate
  LogitMap fused;    // global-local fusion
  AttentionMap alpha;
  WeightSet weights;
};

struct PipelineResult {
  std::vector<ScaleOutput> scales;
  LogitMap final_logits;  // at image resolution
  LabelGrid labels;
  std::vector<MaskInstance> instances;  // per object and component, from labels
  std::optional<ApTable> vertical_ap;
  std::optional<ApTable> horizontal_ap;
  nlohmann::json report;
};

/// Per scale: ensemble logits, difference-based local gate, global-local
/// fusion; then the coarse-to-fine scale fold, argmax and (when ground truth
/// is present) AP against it.
PipelineResult run_pipeline(const PredictionBundle& bundle, const PredictionBundle* calibration,
                            const PipelineConfig& cfg);

/// Instances read off a label grid: for each object region, component c is
/// every pixel whose label is >= c (the components are nested).
std::vector<MaskInstance> instances_from_labels(const LabelGrid& labels, const LogitMap& logits,
                                                const std::vector<std::pair<ObjectId, BBox>>& regions,
                                                const ModelId& model);

nlohmann::json ap_table_json(const ApTable& table);

// Command entry points; each writes into cfg.output_dir.
void cmd_fuse(const std::filesystem::path& manifest,
              const std::optional<std::filesystem::path>& calibration, GroupingMode mode,
              std::optional<double> scale, const PipelineConfig& cfg);
void cmd_pipeline(const std::filesystem::path& manifest,
                  const std::optional<std::filesystem::path>& calibration, const PipelineConfig& cfg);
void cmd_evaluate(const std::filesystem::path& predictions, const std::filesystem::path& ground_truth,
                  const PipelineConfig& cfg);
void cmd_synth(const SynthConfig& synth, const std::filesystem::path& output_dir);

}  // namespace segfuse
