#pragma once

#include <span>
#include <vector>

#include "segfuse/mask.hpp"
#include "segfuse/tensor.hpp"

namespace segfuse {

struct AttentionConfig {
  /// Temperature on the negative differences; must be positive.
  double factor = 1.0;
};

/// Gate value written outside every object region.
inline constexpr double kNeutralAttention = 0.5;

/// |G - L| entrywise. Rows are feature positions, columns feature dimensions.
Matrix difference_matrix(const Matrix& global_feat, const Matrix& local_feat);

/// Row-wise softmax of -factor * D.
Matrix local_attention(const Matrix& d, const AttentionConfig& cfg);

/// Divides each row by its sum. Throws DegenerateAttentionError on an
/// all-zero row and ArgumentError on a negative entry.
Matrix row_normalize(const Matrix& a);

/// Views a logit map as a (H*W) x C feature matrix, one row per pixel.
Matrix logits_as_features(const LogitMap& m);

/// Per-row maximum as a single-column matrix; reduces a position x class
/// attention matrix to one gate per position.
Matrix row_peak(const Matrix& a);

/// Attention for one region: `values` holds grid_h * grid_w entries in
/// row-major order, sampled on a grid that is resized onto `region`.
struct RegionAttention {
  Matrix values;
  int grid_h = 0;
  int grid_w = 0;
  BBox region;
};

/// Builds a canvas-sized gate map: `neutral` everywhere, then each region's
/// values reshaped, bilinear-resized to the region extent and pasted (later
/// regions overwrite earlier ones where they overlap).
AttentionMap attention_to_map(std::span<const RegionAttention> regions, int canvas_h, int canvas_w,
                              double neutral = kNeutralAttention);

/// Full difference-based gate for one region: features from the global crop
/// and the local logits (resampled to the crop grid), D -> softmax -> row
/// normalization -> per-position peak, shaped as the crop.
AttentionMap region_gate(const LogitMap& global_crop, const LogitMap& local_logits,
                         const AttentionConfig& cfg);

/// Local logits placed in the global frame.
struct PlacedLogits {
  LogitMap logits;
  BBox box;
};

/// out = global (*) beta + (sum_p paste(local_p)) (*) (1 - beta), with locals
/// summed in the given order onto a zero canvas and the gate applied in
/// blend() form.
LogitMap fuse_global_local(const LogitMap& global_logits, std::span<const PlacedLogits> locals,
                           const AttentionMap& beta);

}  // namespace segfuse
