#pragma once

#include <optional>
#include <string>
#include <vector>

#include "segfuse/mask.hpp"
#include "segfuse/tensor.hpp"

namespace segfuse {

/// Logits inferred on one cropped object, stored at the model's crop
/// resolution.
struct LocalLogits {
  ObjectId object_id = 0;
  std::string path;
  LogitMap logits;
};

/// Dense outputs of one model at one scale.
struct ScaleTensors {
  ModelId model;
  double scale = 1.0;
  std::string logits_path;
  LogitMap logits;
  std::string alpha_path;
  std::optional<AttentionMap> alpha;
  std::vector<LocalLogits> locals;
};

/// Detected object box on the grid of one scale; the crop region is this box
/// after expansion.
struct CropRecord {
  double scale = 1.0;
  ObjectId object_id = 0;
  BBox bbox;
};

/// Everything known about one image: per-(model, scale) dense maps, crop
/// boxes, instance predictions and (optionally) ground truth.
struct PredictionBundle {
  std::string image_id;
  int height = 0;
  int width = 0;
  int classes = kNumLabels;
  std::vector<ModelId> models;   // ascending
  std::vector<double> scales;    // strictly increasing
  std::vector<ScaleTensors> tensors;
  std::vector<CropRecord> crops;
  std::vector<MaskInstance> instances;
  std::vector<MaskInstance> ground_truth;

  const ScaleTensors* find_tensors(const ModelId& model, double scale) const {
    for (const auto& t : tensors) {
      if (t.model == model && t.scale == scale) return &t;
    }
    return nullptr;
  }
};

}  // namespace segfuse
