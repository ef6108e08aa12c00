#pragma once

#include <map>
#include <span>
#include <utility>
#include <vector>

#include "segfuse/bundle.hpp"
#include "segfuse/metrics.hpp"

namespace segfuse {

/// Normalized per-model coefficients of one group, ascending by model id.
struct FusionWeights {
  GroupKey key;
  std::vector<std::pair<ModelId, double>> weights;

  double weight_of(const ModelId& model) const;
};

/// Instances that share a group key, sorted by score descending (ties by
/// ascending model id, then instance id).
struct MaskGroup {
  GroupKey key;
  std::vector<MaskInstance> members;
};

/// Soft mask in [0, 1] on an H x W grid.
struct SoftMask {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Vertical: one group per component (always four). Horizontal: one group per
/// object id; throws DataError when an instance has no object id.
std::vector<MaskGroup> group_predictions(std::span<const MaskInstance> instances, GroupingMode mode);

/// w_i = n_i / sum_j n_j over the normalized APs of every model in the table
/// (ascending model id). All-zero normalized APs fall back to uniform 1/N.
FusionWeights compute_weights(const ApTable& table, const GroupKey& key, NormalizationMode mode);

/// Weights from an explicit AP list (models ascending); used for replays.
FusionWeights compute_weights(std::span<const std::pair<ModelId, double>> aps, const GroupKey& key,
                              NormalizationMode mode);

/// Equal weights over `models`.
FusionWeights uniform_weights(std::span<const ModelId> models, const GroupKey& key);

/// Weighted per-pixel combination sum_i w_i * S_i, summed in ascending model
/// order and clamped to [min_i S_i, max_i S_i]. Every mask must come from a
/// model carried by `weights`; a weighted model with no mask contributes an
/// all-zero mask.
SoftMask fuse_soft(const std::map<ModelId, SoftMask>& masks, const FusionWeights& weights);

/// Weighted fusion of one correspondence set: at most one member per model,
/// all on a common grid. Throws DataError on a duplicate or unweighted model.
SoftMask fuse_masks(std::span<const MaskInstance> members, const FusionWeights& weights);

/// Same weighting machinery over dense logit maps, channel-wise.
LogitMap fuse_logits(const std::map<ModelId, LogitMap>& maps, const FusionWeights& weights);

/// Channel c is fused with `per_channel[c]`.
LogitMap fuse_logits(const std::map<ModelId, LogitMap>& maps,
                     std::span<const FusionWeights> per_channel);

/// Convex combination of gate maps.
AttentionMap fuse_attention(const std::map<ModelId, AttentionMap>& maps,
                            const FusionWeights& weights);

/// Bit set iff soft value >= threshold.
BinaryMask binarize(const SoftMask& soft, double threshold);

SoftMask to_soft(const BinaryMask& m);

/// One fused output instance per correspondence set in `group`: per object id
/// within a vertical group, per component within a horizontal group. The
/// fused score is the weighted sum of member scores. Empty fused masks are
/// dropped.
std::vector<MaskInstance> fuse_group(const MaskGroup& group, const FusionWeights& weights,
                                     double binarize_threshold, const ModelId& output_model);

}  // namespace segfuse
