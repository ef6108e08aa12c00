#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "segfuse/bundle.hpp"
#include "segfuse/mask.hpp"

namespace segfuse {

enum class GroupingMode { Vertical, Horizontal };

/// Vertical groups are keyed by component label, horizontal groups by object id.
struct GroupKey {
  GroupingMode mode = GroupingMode::Vertical;
  std::int64_t value = 0;

  static GroupKey component(Component c) {
    return {GroupingMode::Vertical, static_cast<std::int64_t>(c)};
  }
  static GroupKey object(ObjectId id) { return {GroupingMode::Horizontal, id}; }
  /// Pooled keys for weights averaged over every component / every object.
  static GroupKey all_components() { return {GroupingMode::Vertical, 0}; }
  static GroupKey all_objects() { return {GroupingMode::Horizontal, INT64_MIN}; }

  std::string label() const;
  auto operator<=>(const GroupKey&) const = default;
};

struct MatchEntry {
  std::int64_t prediction_id = 0;
  double score = 0.0;
  bool true_positive = false;
  friend bool operator==(const MatchEntry&, const MatchEntry&) = default;
};

/// Predictions in descending score order (ties by ascending id) with their
/// TP/FP outcome, plus the number of ground truths they competed for.
struct MatchResult {
  std::vector<MatchEntry> entries;
  std::size_t num_ground_truth = 0;
};

/// Greedy matching in descending score order. A prediction is a TP when its
/// best-IoU unmatched ground truth of the same component reaches the
/// threshold; that ground truth is then consumed.
MatchResult match_predictions(std::span<const MaskInstance> preds,
                              std::span<const MaskInstance> gts, double iou_threshold);

/// All-point interpolated AP over the cumulative PR sequence. With no ground
/// truth: 1 when there are also no predictions, 0 otherwise.
double average_precision(const MatchResult& m);

/// AP per (model, group key).
struct ApTable {
  std::map<std::pair<ModelId, GroupKey>, double> cells;

  double at(const ModelId& model, const GroupKey& key) const;
  bool contains(const ModelId& model, const GroupKey& key) const {
    return cells.contains({model, key});
  }
  std::vector<GroupKey> keys() const;
  std::vector<ModelId> models() const;
};

/// Vertical: one AP per (model, component) over all objects. Horizontal: one
/// AP per (model, object id) over all components, keyed by the union of
/// object ids present in predictions and ground truth. `models` fixes the row
/// set so that a model without predictions still gets cells.
ApTable group_ap(std::span<const MaskInstance> preds, std::span<const MaskInstance> gts,
                 std::span<const ModelId> models, GroupingMode mode, double iou_threshold);

/// Bundle overload restricted to the instances predicted at `scale`.
ApTable group_ap(const PredictionBundle& bundle, std::span<const MaskInstance> gts, double scale,
                 GroupingMode mode, double iou_threshold);

enum class NormalizationMode { Fraction, MinMax };

inline constexpr double kMinMaxFloor = 1e-6;

/// Fraction: identity on APs already in [0, 1]. MinMax: (ap - min) / (max - min)
/// plus a 1e-6 floor, with all-equal inputs mapping to all ones.
std::vector<double> normalize_ap(std::span<const double> aps, NormalizationMode mode);

/// Converts an AP reported in percent (e.g. 91.19) to a fraction.
double ap_from_percent(double percent);

}  // namespace segfuse
