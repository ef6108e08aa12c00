#include "segfuse/hierarchy.hpp"

#include <cmath>
#include <string>

#include "segfuse/errors.hpp"

namespace segfuse {

ScaleChain::ScaleChain(std::vector<ScaleEntry> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw ArgumentError("scale chain is empty");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const ScaleEntry& e = entries_[i];
    if (!(e.scale > 0.0) || !std::isfinite(e.scale)) {
      throw ArgumentError("scale " + std::to_string(e.scale) + " is not positive");
    }
    if (i > 0 && !(e.scale > entries_[i - 1].scale)) {
      throw ArgumentError("scales must be strictly increasing");
    }
    if (e.alpha.height() != e.logits.height() || e.alpha.width() != e.logits.width()) {
      throw ShapeError("alpha map of scale " + std::to_string(e.scale) +
                       " does not match its logits");
    }
    if (e.logits.channels() != entries_.front().logits.channels()) {
      throw ShapeError("channel count differs across scales");
    }
  }
}

LogitMap fuse_adjacent_scales(const ScaleEntry& lower, const LogitMap& higher_logits) {
  if (lower.logits.channels() != higher_logits.channels()) {
    throw ShapeError("fuse_adjacent_scales: channel counts " +
                     std::to_string(lower.logits.channels()) + " vs " +
                     std::to_string(higher_logits.channels()));
  }
  if (lower.alpha.height() != lower.logits.height() || lower.alpha.width() != lower.logits.width()) {
    throw ShapeError("fuse_adjacent_scales: alpha does not match lower logits");
  }
  const int h = higher_logits.height();
  const int w = higher_logits.width();
  const LogitMap up = bilinear_resize(lower.logits, h, w);
  const AttentionMap gate = bilinear_resize(lower.alpha, h, w);
  LogitMap out(h, w, higher_logits.channels());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double a = gate.at(y, x);
      for (int c = 0; c < out.channels(); ++c) {
        out.at(y, x, c) = blend(up.at(y, x, c), higher_logits.at(y, x, c), a);
      }
    }
  }
  return out;
}

LogitMap run_inference_chain(const ScaleChain& chain, const ChainObserver& observer) {
  const auto& entries = chain.entries();
  LogitMap acc = entries.front().logits;
  for (std::size_t i = 1; i < entries.size(); ++i) {
    const ScaleEntry lower{entries[i - 1].scale, std::move(acc), entries[i - 1].alpha};
    acc = fuse_adjacent_scales(lower, entries[i].logits);
    if (observer) observer(i);
  }
  return acc;
}

}  // namespace segfuse
