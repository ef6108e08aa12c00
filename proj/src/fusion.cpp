#include "segfuse/fusion.hpp"

#include <algorithm>
#include <set>

#include "segfuse/errors.hpp"

namespace segfuse {

double FusionWeights::weight_of(const ModelId& model) const {
  for (const auto& [m, w] : weights) {
    if (m == model) return w;
  }
  throw DataError("model '" + model + "' has no fusion weight in group " + key.label());
}

namespace {

void sort_members(std::vector<MaskInstance>& members) {
  std::stable_sort(members.begin(), members.end(), [](const MaskInstance& a, const MaskInstance& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.model_id != b.model_id) return a.model_id < b.model_id;
    return a.id < b.id;
  });
}

// Shared kernel: out[i] = clamp(sum_m w_m * v_m[i], min_m v_m[i], max_m v_m[i]).
// `planes` is in ascending model order and aligned with `w`.
void weighted_combine(std::span<const std::span<const double>> planes, std::span<const double> w,
                      std::span<double> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    double acc = 0.0;
    double lo = planes[0][i];
    double hi = planes[0][i];
    for (std::size_t m = 0; m < planes.size(); ++m) {
      const double v = planes[m][i];
      acc += w[m] * v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    out[i] = std::clamp(acc, lo, hi);
  }
}

template <class Map>
void require_cover(const Map& maps, const FusionWeights& weights, const char* op) {
  if (weights.weights.empty()) throw DataError(std::string(op) + ": empty weight set");
  if (maps.size() != weights.weights.size()) {
    throw DataError(std::string(op) + ": " + std::to_string(maps.size()) + " inputs for " +
                    std::to_string(weights.weights.size()) + " weighted models");
  }
  for (const auto& [model, w] : weights.weights) {
    if (!maps.contains(model)) {
      throw DataError(std::string(op) + ": no input for model '" + model + "'");
    }
  }
}

FusionWeights normalized_to_weights(std::vector<std::pair<ModelId, double>> normalized,
                                    const GroupKey& key) {
  std::sort(normalized.begin(), normalized.end());
  FusionWeights out{key, {}};
  double total = 0.0;
  for (const auto& [m, n] : normalized) total += n;
  const double count = static_cast<double>(normalized.size());
  for (const auto& [m, n] : normalized) {
    out.weights.emplace_back(m, total > 0.0 ? n / total : 1.0 / count);
  }
  return out;
}

}  // namespace

std::vector<MaskGroup> group_predictions(std::span<const MaskInstance> instances, GroupingMode mode) {
  std::vector<MaskGroup> groups;
  if (mode == GroupingMode::Vertical) {
    for (Component c : kComponents) {
      MaskGroup g{GroupKey::component(c), {}};
      for (const auto& inst : instances) {
        if (inst.component == c) g.members.push_back(inst);
      }
      sort_members(g.members);
      groups.push_back(std::move(g));
    }
    return groups;
  }
  std::set<ObjectId> objects;
  for (const auto& inst : instances) {
    if (!inst.object_id) {
      throw DataError("instance " + std::to_string(inst.id) + " (model '" + inst.model_id +
                      "') has no object_id; horizontal grouping needs one");
    }
    objects.insert(*inst.object_id);
  }
  for (ObjectId obj : objects) {
    MaskGroup g{GroupKey::object(obj), {}};
    for (const auto& inst : instances) {
      if (inst.object_id == obj) g.members.push_back(inst);
    }
    sort_members(g.members);
    groups.push_back(std::move(g));
  }
  return groups;
}

FusionWeights compute_weights(const ApTable& table, const GroupKey& key, NormalizationMode mode) {
  std::vector<std::pair<ModelId, double>> aps;
  for (const ModelId& model : table.models()) aps.emplace_back(model, table.at(model, key));
  return compute_weights(aps, key, mode);
}

FusionWeights compute_weights(std::span<const std::pair<ModelId, double>> aps, const GroupKey& key,
                              NormalizationMode mode) {
  if (aps.empty()) throw DataError("compute_weights: no models in group " + key.label());
  std::vector<std::pair<ModelId, double>> sorted(aps.begin(), aps.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i].first == sorted[i - 1].first) {
      throw DataError("compute_weights: duplicate model '" + sorted[i].first + "'");
    }
  }
  std::vector<double> raw;
  for (const auto& [m, ap] : sorted) raw.push_back(ap);
  const auto normalized = normalize_ap(raw, mode);
  for (std::size_t i = 0; i < sorted.size(); ++i) sorted[i].second = normalized[i];
  return normalized_to_weights(std::move(sorted), key);
}

FusionWeights uniform_weights(std::span<const ModelId> models, const GroupKey& key) {
  std::vector<std::pair<ModelId, double>> ones;
  for (const auto& m : models) ones.emplace_back(m, 1.0);
  if (ones.empty()) throw DataError("uniform_weights: no models");
  return normalized_to_weights(std::move(ones), key);
}

SoftMask fuse_soft(const std::map<ModelId, SoftMask>& masks, const FusionWeights& weights) {
  if (weights.weights.empty()) throw DataError("fuse_masks: empty weight set");
  int h = -1;
  int w = -1;
  for (const auto& [model, m] : masks) {
    weights.weight_of(model);
    if (h < 0) {
      h = m.height;
      w = m.width;
    } else if (m.height != h || m.width != w) {
      throw ShapeError("fuse_masks: member masks have different dims");
    }
  }
  if (h < 0) throw DataError("fuse_masks: no member masks");
  const std::vector<double> zeros(static_cast<std::size_t>(h) * w, 0.0);
  std::vector<std::span<const double>> planes;
  std::vector<double> coeffs;
  for (const auto& [model, wt] : weights.weights) {
    const auto it = masks.find(model);
    planes.emplace_back(it == masks.end() ? std::span<const double>(zeros)
                                          : std::span<const double>(it->second.values));
    coeffs.push_back(wt);
  }
  SoftMask out{h, w, std::vector<double>(zeros.size())};
  weighted_combine(planes, coeffs, out.values);
  return out;
}

SoftMask to_soft(const BinaryMask& m) {
  SoftMask s{m.height, m.width, std::vector<double>(m.bits.size())};
  for (std::size_t i = 0; i < m.bits.size(); ++i) s.values[i] = m.bits[i] ? 1.0 : 0.0;
  return s;
}

SoftMask fuse_masks(std::span<const MaskInstance> members, const FusionWeights& weights) {
  std::map<ModelId, SoftMask> masks;
  for (const auto& inst : members) {
    if (masks.contains(inst.model_id)) {
      throw DataError("fuse_masks: model '" + inst.model_id +
                      "' contributes two masks to one correspondence set");
    }
    masks.emplace(inst.model_id, to_soft(rle_decode(inst.mask)));
  }
  return fuse_soft(masks, weights);
}

LogitMap fuse_logits(const std::map<ModelId, LogitMap>& maps, const FusionWeights& weights) {
  require_cover(maps, weights, "fuse_logits");
  const int channels = maps.begin()->second.channels();
  std::vector<FusionWeights> per_channel(static_cast<std::size_t>(channels), weights);
  return fuse_logits(maps, per_channel);
}

LogitMap fuse_logits(const std::map<ModelId, LogitMap>& maps,
                     std::span<const FusionWeights> per_channel) {
  if (maps.empty()) throw DataError("fuse_logits: no input maps");
  const LogitMap& first = maps.begin()->second;
  for (const auto& [model, m] : maps) {
    if (!m.same_shape(first)) {
      throw ShapeError("fuse_logits: map of model '" + model + "' has a different shape");
    }
  }
  if (per_channel.size() != static_cast<std::size_t>(first.channels())) {
    throw ShapeError("fuse_logits: " + std::to_string(per_channel.size()) + " weight sets for " +
                     std::to_string(first.channels()) + " channels");
  }
  for (const auto& w : per_channel) require_cover(maps, w, "fuse_logits");

  // Each channel is its own strided plane; gather, combine, scatter.
  const std::size_t pixels = static_cast<std::size_t>(first.height()) * first.width();
  const auto channels = static_cast<std::size_t>(first.channels());
  LogitMap out(first.height(), first.width(), first.channels());
  std::vector<std::vector<double>> planes(maps.size(), std::vector<double>(pixels));
  std::vector<double> fused(pixels);
  for (std::size_t c = 0; c < channels; ++c) {
    const FusionWeights& wset = per_channel[c];
    std::vector<std::span<const double>> views;
    std::vector<double> coeffs;
    for (std::size_t m = 0; m < wset.weights.size(); ++m) {
      const auto src = maps.at(wset.weights[m].first).data();
      for (std::size_t p = 0; p < pixels; ++p) planes[m][p] = src[p * channels + c];
      views.emplace_back(planes[m]);
      coeffs.push_back(wset.weights[m].second);
    }
    weighted_combine(views, coeffs, fused);
    auto dst = out.data();
    for (std::size_t p = 0; p < pixels; ++p) dst[p * channels + c] = fused[p];
  }
  return out;
}

AttentionMap fuse_attention(const std::map<ModelId, AttentionMap>& maps,
                            const FusionWeights& weights) {
  require_cover(maps, weights, "fuse_attention");
  const AttentionMap& first = maps.begin()->second;
  std::vector<std::span<const double>> views;
  std::vector<double> coeffs;
  for (const auto& [model, wt] : weights.weights) {
    const AttentionMap& m = maps.at(model);
    if (m.height() != first.height() || m.width() != first.width()) {
      throw ShapeError("fuse_attention: map of model '" + model + "' has different dims");
    }
    views.emplace_back(m.data());
    coeffs.push_back(wt);
  }
  std::vector<double> out(first.size());
  weighted_combine(views, coeffs, out);
  return AttentionMap(first.height(), first.width(), std::move(out));
}

BinaryMask binarize(const SoftMask& soft, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ArgumentError("binarize: threshold must lie in (0, 1)");
  }
  BinaryMask out(soft.height, soft.width);
  for (std::size_t i = 0; i < soft.values.size(); ++i) {
    out.bits[i] = soft.values[i] >= threshold ? 1 : 0;
  }
  return out;
}

std::vector<MaskInstance> fuse_group(const MaskGroup& group, const FusionWeights& weights,
                                     double binarize_threshold, const ModelId& output_model) {
  // Correspondence sets: same object within a component group, same
  // component within an object group.
  std::map<std::int64_t, std::vector<MaskInstance>> sets;
  for (const auto& inst : group.members) {
    std::int64_t sub = 0;
    if (group.key.mode == GroupingMode::Vertical) {
      if (!inst.object_id) {
        throw DataError("instance " + std::to_string(inst.id) + " (model '" + inst.model_id +
                        "') has no object_id; fusion needs cross-model correspondence");
      }
      sub = *inst.object_id;
    } else {
      sub = static_cast<std::int64_t>(inst.component);
    }
    sets[sub].push_back(inst);
  }

  std::vector<MaskInstance> fused;
  for (const auto& [sub, members] : sets) {
    const SoftMask soft = fuse_masks(members, weights);
    const BinaryMask bin = binarize(soft, binarize_threshold);
    const auto box = tight_bbox(bin);
    if (!box) continue;
    double score = 0.0;
    for (const auto& [model, wt] : weights.weights) {
      for (const auto& m : members) {
        if (m.model_id == model) score += wt * m.score;
      }
    }
    MaskInstance out;
    out.mask = rle_encode(bin);
    out.bbox = *box;
    out.component = members.front().component;
    out.object_id = members.front().object_id;
    out.score = std::clamp(score, 0.0, 1.0);
    out.model_id = output_model;
    out.scale = members.front().scale;
    fused.push_back(std::move(out));
  }
  return fused;
}

}  // namespace segfuse
