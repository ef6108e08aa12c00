#include "segfuse/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include "segfuse/errors.hpp"
#include "segfuse/hierarchy.hpp"
#include "segfuse/io.hpp"

namespace segfuse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* grouping_name(GroupingChoice g) {
  switch (g) {
    case GroupingChoice::Vertical: return "vertical";
    case GroupingChoice::Horizontal: return "horizontal";
    case GroupingChoice::Both: return "both";
  }
  return "?";
}

const char* mode_name(GroupingMode m) {
  return m == GroupingMode::Vertical ? "vertical" : "horizontal";
}

json weights_json(const FusionWeights& w) {
  json arr = json::array();
  for (const auto& [model, v] : w.weights) arr.push_back({{"model", model}, {"weight", v}});
  return {{"group", w.key.label()}, {"weights", std::move(arr)}};
}

void require_unit_open(double v, const char* name) {
  if (!(v > 0.0 && v < 1.0)) throw ArgumentError(std::string(name) + " must lie in (0, 1)");
}

// Mean AP per model over the given keys of a table.
FusionWeights pooled_weights(const ApTable& table, std::span<const ModelId> models,
                             const std::vector<GroupKey>& keys, const GroupKey& pooled_key,
                             NormalizationMode mode) {
  std::vector<std::pair<ModelId, double>> aps;
  for (const ModelId& m : models) {
    double sum = 0.0;
    for (const GroupKey& k : keys) sum += table.at(m, k);
    aps.emplace_back(m, keys.empty() ? 0.0 : sum / static_cast<double>(keys.size()));
  }
  return compute_weights(aps, pooled_key, mode);
}

std::vector<MaskInstance> instances_at(std::span<const MaskInstance> all, double scale) {
  std::vector<MaskInstance> out;
  for (const auto& i : all) {
    if (i.scale == scale) out.push_back(i);
  }
  return out;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results must be written
// to per-index slots; the first exception (by index) is rethrown.
template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

BBox to_image_box(const BBox& grid_box, int gh, int gw, int image_h, int image_w) {
  const double sy = static_cast<double>(image_h) / gh;
  const double sx = static_cast<double>(image_w) / gw;
  BBox b;
  b.x0 = std::clamp(static_cast<int>(std::floor(grid_box.x0 * sx)), 0, image_w - 1);
  b.y0 = std::clamp(static_cast<int>(std::floor(grid_box.y0 * sy)), 0, image_h - 1);
  b.x1 = std::clamp(static_cast<int>(std::ceil(grid_box.x1 * sx)), b.x0 + 1, image_w);
  b.y1 = std::clamp(static_cast<int>(std::ceil(grid_box.y1 * sy)), b.y0 + 1, image_h);
  return b;
}

}  // namespace

void PipelineConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw ArgumentError("iou-threshold must lie in (0, 1]");
  }
  require_unit_open(binarize_threshold, "binarize-threshold");
  if (!(attention_factor > 0.0) || !std::isfinite(attention_factor)) {
    throw ArgumentError("attention-factor must be positive");
  }
  if (!(alpha_fallback >= 0.0 && alpha_fallback <= 1.0)) {
    throw ArgumentError("alpha-fallback must lie in [0, 1]");
  }
  if (!(outside_beta >= 0.0 && outside_beta <= 1.0)) {
    throw ArgumentError("outside-beta must lie in [0, 1]");
  }
  if (force_beta && !(*force_beta >= 0.0 && *force_beta <= 1.0)) {
    throw ArgumentError("force-beta must lie in [0, 1]");
  }
  if (!(bbox_expansion >= 1.0) || !std::isfinite(bbox_expansion)) {
    throw ArgumentError("bbox-expansion must be >= 1");
  }
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (!(scales[i] > 0.0) || (i > 0 && !(scales[i] > scales[i - 1]))) {
      throw ArgumentError("scales must be positive and strictly increasing");
    }
  }
  if (jobs < 1) throw ArgumentError("jobs must be >= 1");
}

json PipelineConfig::to_json() const {
  json j;
  j["iou_threshold"] = iou_threshold;
  j["normalization"] = normalization == NormalizationMode::Fraction ? "fraction" : "minmax";
  j["grouping"] = grouping_name(grouping);
  j["attention_factor"] = attention_factor;
  j["binarize_threshold"] = binarize_threshold;
  j["alpha_fallback"] = alpha_fallback;
  j["bbox_expansion"] = bbox_expansion;
  j["scales"] = scales;
  j["weighting"] = weighting == WeightingMode::Ap ? "ap" : "uniform";
  j["outside_beta"] = outside_beta;
  j["force_beta"] = force_beta ? json(*force_beta) : json(nullptr);
  return j;
}

std::vector<FusionWeights> WeightSet::channel_weights(int channels) const {
  std::vector<FusionWeights> out;
  for (int c = 0; c < channels; ++c) {
    const auto it = per_component.find(static_cast<Component>(c));
    out.push_back(c > 0 && it != per_component.end() ? it->second : overall);
  }
  return out;
}

json WeightSet::to_json() const {
  json j;
  j["scale"] = scale;
  j["overall"] = weights_json(overall);
  json vert = json::array();
  for (const auto& [c, w] : per_component) vert.push_back(weights_json(w));
  j["vertical"] = std::move(vert);
  json hor = json::array();
  for (const auto& [o, w] : per_object) hor.push_back(weights_json(w));
  j["horizontal"] = std::move(hor);
  if (!per_object.empty()) j["overall_objects"] = weights_json(overall_objects);
  return j;
}

WeightSet compute_weight_set(std::span<const ModelId> models, const PredictionBundle* calibration,
                             double scale, const PipelineConfig& cfg) {
  WeightSet ws;
  ws.scale = scale;
  if (cfg.weighting == WeightingMode::Uniform) {
    for (Component c : kComponents) {
      ws.per_component.emplace(c, uniform_weights(models, GroupKey::component(c)));
    }
    ws.overall = uniform_weights(models, GroupKey::all_components());
    ws.overall_objects = uniform_weights(models, GroupKey::all_objects());
    return ws;
  }

  if (calibration == nullptr) {
    throw DataError("AP weighting needs a weight-calibration split (pass --calibration, or use "
                    "--weighting uniform)");
  }
  if (calibration->ground_truth.empty()) {
    throw DataError("weight-calibration split '" + calibration->image_id +
                    "' has no ground truth; AP weights cannot be derived");
  }
  for (const ModelId& m : models) {
    if (!std::binary_search(calibration->models.begin(), calibration->models.end(), m)) {
      throw DataError("weight-calibration split has no predictions for model '" + m + "'");
    }
  }
  if (std::find(calibration->scales.begin(), calibration->scales.end(), scale) ==
      calibration->scales.end()) {
    throw DataError("weight-calibration split has no scale " + std::to_string(scale));
  }

  const auto preds = instances_at(calibration->instances, scale);
  const ApTable vertical =
      group_ap(preds, calibration->ground_truth, models, GroupingMode::Vertical, cfg.iou_threshold);
  std::vector<GroupKey> comp_keys;
  for (Component c : kComponents) {
    ws.per_component.emplace(c, compute_weights(vertical, GroupKey::component(c), cfg.normalization));
    comp_keys.push_back(GroupKey::component(c));
  }
  ws.overall = pooled_weights(vertical, models, comp_keys, GroupKey::all_components(),
                              cfg.normalization);

  if (cfg.grouping != GroupingChoice::Vertical) {
    const ApTable horizontal = group_ap(preds, calibration->ground_truth, models,
                                        GroupingMode::Horizontal, cfg.iou_threshold);
    const auto keys = horizontal.keys();
    for (const GroupKey& k : keys) {
      ws.per_object.emplace(k.value, compute_weights(horizontal, k, cfg.normalization));
    }
    ws.overall_objects =
        pooled_weights(horizontal, models, keys, GroupKey::all_objects(), cfg.normalization);
  }
  return ws;
}

FuseResult fuse_instances(const PredictionBundle& preds, const PredictionBundle* calibration,
                          double scale, GroupingMode mode, const PipelineConfig& cfg) {
  PipelineConfig local = cfg;
  local.grouping = mode == GroupingMode::Vertical ? GroupingChoice::Vertical
                                                  : GroupingChoice::Horizontal;
  const WeightSet ws = compute_weight_set(preds.models, calibration, scale, local);
  const auto instances = instances_at(preds.instances, scale);

  FuseResult result;
  result.scale = scale;
  result.mode = mode;
  for (const MaskGroup& group : group_predictions(instances, mode)) {
    FusionWeights w;
    if (mode == GroupingMode::Vertical) {
      w = ws.per_component.at(static_cast<Component>(group.key.value));
    } else if (cfg.weighting == WeightingMode::Uniform) {
      w = uniform_weights(preds.models, group.key);
    } else {
      const auto it = ws.per_object.find(group.key.value);
      if (it == ws.per_object.end()) {
        throw DataError("no horizontal weights for " + group.key.label() +
                        " in the weight-calibration split");
      }
      w = it->second;
    }
    for (auto& inst : fuse_group(group, w, cfg.binarize_threshold, "ensemble")) {
      result.fused.push_back(std::move(inst));
    }
    result.weights.push_back(std::move(w));
  }
  for (std::size_t i = 0; i < result.fused.size(); ++i) {
    result.fused[i].id = static_cast<std::int64_t>(i);
  }
  return result;
}

std::vector<MaskInstance> instances_from_labels(const LabelGrid& labels, const LogitMap& logits,
                                                const std::vector<std::pair<ObjectId, BBox>>& regions,
                                                const ModelId& model) {
  std::vector<MaskInstance> out;
  for (const auto& [obj, region] : regions) {
    for (Component c : kComponents) {
      BinaryMask mask(labels.height, labels.width);
      double conf = 0.0;
      std::size_t n = 0;
      for (int y = region.y0; y < region.y1; ++y) {
        for (int x = region.x0; x < region.x1; ++x) {
          if (labels.at(y, x) < static_cast<int>(c)) continue;
          mask.set(y, x, true);
          // Softmax probability of the winning label at this pixel.
          double peak = logits.at(y, x, 0);
          for (int k = 1; k < logits.channels(); ++k) peak = std::max(peak, logits.at(y, x, k));
          double sum = 0.0;
          for (int k = 0; k < logits.channels(); ++k) sum += std::exp(logits.at(y, x, k) - peak);
          conf += 1.0 / sum;
          ++n;
        }
      }
      if (n == 0) continue;
      MaskInstance inst;
      inst.id = static_cast<std::int64_t>(out.size());
      inst.mask = rle_encode(mask);
      inst.bbox = *tight_bbox(mask);
      inst.component = c;
      inst.object_id = obj;
      inst.score = std::clamp(conf / static_cast<double>(n), 0.0, 1.0);
      inst.model_id = model;
      out.push_back(std::move(inst));
    }
  }
  return out;
}

json ap_table_json(const ApTable& table) {
  json arr = json::array();
  for (const auto& [key, ap] : table.cells) {
    arr.push_back({{"model", key.first}, {"group", key.second.label()}, {"ap", ap}});
  }
  return arr;
}

PipelineResult run_pipeline(const PredictionBundle& bundle, const PredictionBundle* calibration,
                            const PipelineConfig& cfg) {
  cfg.validate();
  std::vector<double> scales = cfg.scales.empty() ? bundle.scales : cfg.scales;
  for (double s : scales) {
    if (std::find(bundle.scales.begin(), bundle.scales.end(), s) == bundle.scales.end()) {
      throw DataError("scale " + std::to_string(s) + " is not listed in the manifest");
    }
  }
  if (scales.empty()) throw DataError("manifest lists no scales");

  PipelineResult result;
  result.scales.resize(scales.size());
  const AttentionConfig att{cfg.attention_factor};

  parallel_for(scales.size(), cfg.jobs, [&](std::size_t si) {
    const double scale = scales[si];
    const std::string where = "scale " + std::to_string(scale);
    std::map<ModelId, LogitMap> globals;
    std::map<ModelId, AttentionMap> alphas;
    std::vector<const ScaleTensors*> per_model;
    for (const ModelId& m : bundle.models) {
      const ScaleTensors* t = bundle.find_tensors(m, scale);
      if (t == nullptr) throw DataError(where + ": model '" + m + "' has no tensors entry");
      per_model.push_back(t);
      globals.emplace(m, t->logits);
      if (t->alpha) alphas.emplace(m, *t->alpha);
    }
    if (!alphas.empty() && alphas.size() != bundle.models.size()) {
      throw DataError(where + ": alpha maps are given for some models but not all");
    }

    ScaleOutput out;
    out.scale = scale;
    out.weights = compute_weight_set(bundle.models, calibration, scale, cfg);
    const LogitMap& first = globals.begin()->second;
    const int gh = first.height();
    const int gw = first.width();
    const int channels = first.channels();
    const auto channel_w = out.weights.channel_weights(channels);
    if (cfg.grouping == GroupingChoice::Horizontal) {
      std::vector<FusionWeights> pooled(static_cast<std::size_t>(channels),
                                        cfg.weighting == WeightingMode::Uniform
                                            ? out.weights.overall
                                            : out.weights.overall_objects);
      out.global = fuse_logits(globals, pooled);
    } else {
      out.global = fuse_logits(globals, channel_w);
    }

    std::vector<PlacedLogits> placed;
    std::vector<RegionAttention> gates;
    for (const CropRecord& crop : bundle.crops) {
      if (crop.scale != scale) continue;
      const BBox region = expand_bbox(crop.bbox, cfg.bbox_expansion, gh, gw);
      std::map<ModelId, LogitMap> locals;
      for (const ScaleTensors* t : per_model) {
        for (const auto& l : t->locals) {
          if (l.object_id == crop.object_id) {
            locals.emplace(t->model, bilinear_resize(l.logits, region.height(), region.width()));
          }
        }
      }
      if (locals.empty()) continue;
      if (locals.size() != per_model.size()) {
        throw DataError(where + ": object " + std::to_string(crop.object_id) +
                        " has local logits from some models but not all");
      }
      LogitMap fused_local;
      if (cfg.grouping == GroupingChoice::Vertical) {
        fused_local = fuse_logits(locals, channel_w);
      } else if (cfg.weighting == WeightingMode::Uniform) {
        fused_local = fuse_logits(locals, uniform_weights(bundle.models,
                                                          GroupKey::object(crop.object_id)));
      } else {
        const auto it = out.weights.per_object.find(crop.object_id);
        if (it == out.weights.per_object.end()) {
          throw DataError(where + ": no horizontal weights for object " +
                          std::to_string(crop.object_id) + " in the weight-calibration split");
        }
        fused_local = fuse_logits(locals, it->second);
      }
      const AttentionMap gate = region_gate(segfuse::crop(out.global, region), fused_local, att);
      const auto gv = gate.data();
      gates.push_back({Matrix(region.height() * region.width(), 1,
                              std::vector<double>(gv.begin(), gv.end())),
                       region.height(), region.width(), region});
      placed.push_back({std::move(fused_local), region});
    }

    out.beta = cfg.force_beta ? AttentionMap(gh, gw, *cfg.force_beta)
                              : attention_to_map(gates, gh, gw, cfg.outside_beta);
    out.fused = fuse_global_local(out.global, placed, out.beta);
    out.alpha = alphas.empty() ? AttentionMap(gh, gw, cfg.alpha_fallback)
                               : fuse_attention(alphas, out.weights.overall);
    result.scales[si] = std::move(out);
  });

  std::vector<ScaleEntry> entries;
  for (const auto& s : result.scales) entries.push_back({s.scale, s.fused, s.alpha});
  const LogitMap chained = run_inference_chain(ScaleChain(std::move(entries)));
  result.final_logits = bilinear_resize(chained, bundle.height, bundle.width);
  result.labels = argmax_channel(result.final_logits);

  // Object regions on the image grid, from the finest scale's crops.
  const ScaleOutput& finest = result.scales.back();
  std::vector<std::pair<ObjectId, BBox>> regions;
  for (const CropRecord& c : bundle.crops) {
    if (c.scale != finest.scale) continue;
    const BBox grid_region =
        expand_bbox(c.bbox, cfg.bbox_expansion, finest.fused.height(), finest.fused.width());
    regions.emplace_back(c.object_id, to_image_box(grid_region, finest.fused.height(),
                                                   finest.fused.width(), bundle.height,
                                                   bundle.width));
  }
  result.instances = instances_from_labels(result.labels, result.final_logits, regions, "pipeline");

  json report;
  report["image_id"] = bundle.image_id;
  report["config"] = cfg.to_json();
  report["models"] = bundle.models;
  json scale_reports = json::array();
  for (const auto& s : result.scales) {
    scale_reports.push_back({{"scale", s.scale},
                             {"grid", json::array({s.fused.height(), s.fused.width()})},
                             {"weights", s.weights.to_json()}});
  }
  report["scales"] = std::move(scale_reports);
  std::vector<std::size_t> counts(static_cast<std::size_t>(kNumLabels), 0);
  for (auto l : result.labels.labels) {
    if (l >= 0 && l < kNumLabels) ++counts[static_cast<std::size_t>(l)];
  }
  report["label_counts"] = counts;
  report["instances"] = result.instances.size();
  if (!bundle.ground_truth.empty()) {
    const std::vector<ModelId> model{"pipeline"};
    result.vertical_ap = group_ap(result.instances, bundle.ground_truth, model,
                                  GroupingMode::Vertical, cfg.iou_threshold);
    result.horizontal_ap = group_ap(result.instances, bundle.ground_truth, model,
                                    GroupingMode::Horizontal, cfg.iou_threshold);
    report["ap"] = {{"iou_threshold", cfg.iou_threshold},
                    {"vertical", ap_table_json(*result.vertical_ap)},
                    {"horizontal", ap_table_json(*result.horizontal_ap)}};
  } else {
    report["ap"] = nullptr;
  }
  result.report = std::move(report);
  return result;
}

// --- commands ----------------------------------------------------------------

void cmd_fuse(const fs::path& manifest, const std::optional<fs::path>& calibration,
              GroupingMode mode, std::optional<double> scale, const PipelineConfig& cfg) {
  cfg.validate();
  const PredictionBundle bundle = load_manifest(manifest);
  std::optional<PredictionBundle> calib;
  if (calibration) calib = load_manifest(*calibration);
  if (bundle.scales.empty()) throw DataError("manifest lists no scales");
  const double s = scale.value_or(bundle.scales.back());
  if (std::find(bundle.scales.begin(), bundle.scales.end(), s) == bundle.scales.end()) {
    throw DataError("scale " + std::to_string(s) + " is not listed in the manifest");
  }

  const FuseResult fused = fuse_instances(bundle, calib ? &*calib : nullptr, s, mode, cfg);

  PredictionBundle out;
  out.image_id = bundle.image_id;
  out.height = bundle.height;
  out.width = bundle.width;
  out.classes = bundle.classes;
  out.models = {"ensemble"};
  out.scales = {s};
  out.instances = fused.fused;
  out.ground_truth = bundle.ground_truth;
  write_json(cfg.output_dir / "fused.json", bundle_to_json(out));

  json weights;
  weights["image_id"] = bundle.image_id;
  weights["scale"] = s;
  weights["mode"] = mode_name(mode);
  PipelineConfig effective = cfg;
  effective.grouping =
      mode == GroupingMode::Vertical ? GroupingChoice::Vertical : GroupingChoice::Horizontal;
  weights["config"] = effective.to_json();
  json groups = json::array();
  for (const auto& w : fused.weights) groups.push_back(weights_json(w));
  weights["groups"] = std::move(groups);
  write_json(cfg.output_dir / "weights.json", weights);
}

void cmd_pipeline(const fs::path& manifest, const std::optional<fs::path>& calibration,
                  const PipelineConfig& cfg) {
  const PredictionBundle bundle = load_manifest(manifest);
  std::optional<PredictionBundle> calib;
  if (calibration) calib = load_manifest(*calibration);
  const PipelineResult r = run_pipeline(bundle, calib ? &*calib : nullptr, cfg);

  save_tensor(cfg.output_dir / "final_logits.sgft", r.final_logits);
  write_overlay(r.labels, cfg.output_dir / "overlay.ppm");
  for (std::size_t i = 0; i < r.scales.size(); ++i) {
    const std::string stem = "scale" + std::to_string(i);
    save_tensor(cfg.output_dir / (stem + "_fused.sgft"), r.scales[i].fused);
    save_tensor(cfg.output_dir / (stem + "_beta.sgft"), r.scales[i].beta);
  }

  PredictionBundle masks;
  masks.image_id = bundle.image_id;
  masks.height = bundle.height;
  masks.width = bundle.width;
  masks.classes = bundle.classes;
  masks.models = {"pipeline"};
  masks.scales = {1.0};
  masks.instances = r.instances;
  masks.ground_truth = bundle.ground_truth;
  write_json(cfg.output_dir / "masks.json", bundle_to_json(masks));

  json report = r.report;
  report["outputs"] = {{"final_logits", "final_logits.sgft"},
                       {"overlay", "overlay.ppm"},
                       {"masks", "masks.json"}};
  write_json(cfg.output_dir / "pipeline_report.json", report);
}

void cmd_evaluate(const fs::path& predictions, const fs::path& ground_truth,
                  const PipelineConfig& cfg) {
  cfg.validate();
  const PredictionBundle preds = load_manifest(predictions);
  const PredictionBundle gts = load_manifest(ground_truth);
  if (preds.image_id != gts.image_id) {
    throw DataError("image id mismatch: predictions '" + preds.image_id + "' vs ground truth '" +
                    gts.image_id + "'");
  }
  if (preds.height != gts.height || preds.width != gts.width) {
    throw DataError("image dims differ between prediction and ground-truth manifests");
  }
  json report;
  report["image_id"] = preds.image_id;
  report["iou_threshold"] = cfg.iou_threshold;
  json tables = json::array();
  for (double s : preds.scales) {
    const auto at_scale = instances_at(preds.instances, s);
    const ApTable v =
        group_ap(at_scale, gts.ground_truth, preds.models, GroupingMode::Vertical, cfg.iou_threshold);
    const ApTable h = group_ap(at_scale, gts.ground_truth, preds.models, GroupingMode::Horizontal,
                               cfg.iou_threshold);
    tables.push_back({{"scale", s}, {"vertical", ap_table_json(v)}, {"horizontal", ap_table_json(h)}});
  }
  report["tables"] = std::move(tables);
  write_json(cfg.output_dir / "evaluation.json", report);
}

void cmd_synth(const SynthConfig& synth, const fs::path& output_dir) {
  save_manifest(make_synthetic_scene(synth), output_dir / "manifest.json");
}

}  // namespace segfuse
