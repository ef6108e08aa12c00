#include "segfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "segfuse/errors.hpp"

namespace segfuse {

std::string GroupKey::label() const {
  if (*this == all_components()) return "all-components";
  if (*this == all_objects()) return "all-objects";
  if (mode == GroupingMode::Vertical) {
    return std::string(component_name(static_cast<Component>(value)));
  }
  return "object:" + std::to_string(value);
}

MatchResult match_predictions(std::span<const MaskInstance> preds,
                              std::span<const MaskInstance> gts, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw ArgumentError("iou threshold must lie in (0, 1]");
  }
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (preds[a].score != preds[b].score) return preds[a].score > preds[b].score;
    return preds[a].id < preds[b].id;
  });

  std::vector<BinaryMask> gt_masks;
  gt_masks.reserve(gts.size());
  for (const auto& g : gts) gt_masks.push_back(rle_decode(g.mask));
  std::vector<bool> consumed(gts.size(), false);

  MatchResult result;
  result.num_ground_truth = gts.size();
  for (std::size_t idx : order) {
    const MaskInstance& p = preds[idx];
    const BinaryMask pm = rle_decode(p.mask);
    double best = -1.0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (consumed[g] || gts[g].component != p.component) continue;
      const double v = iou(pm, gt_masks[g]);
      if (v > best) {
        best = v;
        best_gt = g;
      }
    }
    const bool tp = best_gt < gts.size() && best >= iou_threshold;
    if (tp) consumed[best_gt] = true;
    result.entries.push_back({p.id, p.score, tp});
  }
  return result;
}

double average_precision(const MatchResult& m) {
  if (m.num_ground_truth == 0) return m.entries.empty() ? 1.0 : 0.0;
  const std::size_t n = m.entries.size();
  std::vector<double> precision(n);
  std::vector<double> recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (m.entries[i].true_positive) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(m.num_ground_truth);
  }
  // Suffix maximum gives the interpolated precision envelope.
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return std::clamp(ap, 0.0, 1.0);
}

double ApTable::at(const ModelId& model, const GroupKey& key) const {
  const auto it = cells.find({model, key});
  if (it == cells.end()) {
    throw DataError("no AP entry for model '" + model + "', group " + key.label());
  }
  return it->second;
}

std::vector<GroupKey> ApTable::keys() const {
  std::set<GroupKey> seen;
  for (const auto& [k, v] : cells) seen.insert(k.second);
  return {seen.begin(), seen.end()};
}

std::vector<ModelId> ApTable::models() const {
  std::set<ModelId> seen;
  for (const auto& [k, v] : cells) seen.insert(k.first);
  return {seen.begin(), seen.end()};
}

namespace {

ObjectId require_object(const MaskInstance& inst, const char* what) {
  if (!inst.object_id) {
    throw DataError(std::string(what) + " " + std::to_string(inst.id) +
                    " has no object_id; horizontal grouping needs one");
  }
  return *inst.object_id;
}

}  // namespace

ApTable group_ap(std::span<const MaskInstance> preds, std::span<const MaskInstance> gts,
                 std::span<const ModelId> models, GroupingMode mode, double iou_threshold) {
  ApTable table;
  if (mode == GroupingMode::Vertical) {
    for (const ModelId& model : models) {
      for (Component c : kComponents) {
        std::vector<MaskInstance> p;
        std::vector<MaskInstance> g;
        for (const auto& inst : preds) {
          if (inst.model_id == model && inst.component == c) p.push_back(inst);
        }
        for (const auto& inst : gts) {
          if (inst.component == c) g.push_back(inst);
        }
        table.cells[{model, GroupKey::component(c)}] =
            average_precision(match_predictions(p, g, iou_threshold));
      }
    }
    return table;
  }

  std::set<ObjectId> objects;
  for (const auto& inst : gts) objects.insert(require_object(inst, "ground truth"));
  for (const auto& inst : preds) {
    if (std::find(models.begin(), models.end(), inst.model_id) != models.end()) {
      objects.insert(require_object(inst, "prediction"));
    }
  }
  for (const ModelId& model : models) {
    for (ObjectId obj : objects) {
      std::vector<MaskInstance> p;
      std::vector<MaskInstance> g;
      for (const auto& inst : preds) {
        if (inst.model_id == model && inst.object_id == obj) p.push_back(inst);
      }
      for (const auto& inst : gts) {
        if (inst.object_id == obj) g.push_back(inst);
      }
      table.cells[{model, GroupKey::object(obj)}] =
          average_precision(match_predictions(p, g, iou_threshold));
    }
  }
  return table;
}

ApTable group_ap(const PredictionBundle& bundle, std::span<const MaskInstance> gts, double scale,
                 GroupingMode mode, double iou_threshold) {
  std::vector<MaskInstance> at_scale;
  for (const auto& inst : bundle.instances) {
    if (inst.scale == scale) at_scale.push_back(inst);
  }
  return group_ap(at_scale, gts, bundle.models, mode, iou_threshold);
}

std::vector<double> normalize_ap(std::span<const double> aps, NormalizationMode mode) {
  if (aps.empty()) throw ArgumentError("normalize_ap: empty AP list");
  for (double a : aps) {
    if (!(a >= 0.0 && a <= 1.0)) {
      throw ArgumentError("normalize_ap: AP " + std::to_string(a) +
                          " outside [0, 1] (percent values must be converted first)");
    }
  }
  std::vector<double> out(aps.begin(), aps.end());
  if (mode == NormalizationMode::Fraction) return out;

  const auto [lo, hi] = std::minmax_element(aps.begin(), aps.end());
  if (*lo == *hi) {
    std::fill(out.begin(), out.end(), 1.0);
    return out;
  }
  const double range = *hi - *lo;
  for (double& v : out) v = (v - *lo) / range + kMinMaxFloor;
  return out;
}

double ap_from_percent(double percent) {
  if (!(percent >= 0.0 && percent <= 100.0)) {
    throw ArgumentError("AP percent " + std::to_string(percent) + " outside [0, 100]");
  }
  return percent / 100.0;
}

}  // namespace segfuse
