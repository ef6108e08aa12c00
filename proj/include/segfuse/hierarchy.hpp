#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "segfuse/tensor.hpp"

namespace segfuse {

/// Fused logits of one scale together with the gate that decides how much of
/// them survives into the next finer scale.
struct ScaleEntry {
  double scale = 1.0;
  LogitMap logits;
  AttentionMap alpha;
};

/// Scales ordered coarse to fine.
class ScaleChain {
 public:
  /// Throws ArgumentError when empty or not strictly increasing, ShapeError
  /// when an alpha map does not match its logits.
  explicit ScaleChain(std::vector<ScaleEntry> entries);

  const std::vector<ScaleEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<ScaleEntry> entries_;
};

/// U(lower.logits) (*) U(lower.alpha) + higher (*) (1 - U(lower.alpha)), where
/// U resizes onto the higher grid.
LogitMap fuse_adjacent_scales(const ScaleEntry& lower, const LogitMap& higher_logits);

/// Called once per adjacent-scale fusion with the index of the finer entry.
using ChainObserver = std::function<void(std::size_t finer_index)>;

/// Left fold from the coarsest scale upward; a one-entry chain returns its
/// logits unchanged.
LogitMap run_inference_chain(const ScaleChain& chain, const ChainObserver& observer = {});

}  // namespace segfuse
