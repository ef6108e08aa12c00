#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "segfuse/bundle.hpp"

namespace segfuse {

/// Parameters of a synthetic multi-object scene. Every object is four nested
/// ellipses (shell > meat > gonad > muscle); each simulated model sees the
/// scene through its own seeded shift and dilation/erosion.
struct SynthConfig {
  std::uint64_t seed = 42;
  int height = 96;
  int width = 128;
  int objects = 5;
  int models = 3;
  std::vector<double> scales = {0.5, 1.0};
  /// Maximum shift and radius change, in image pixels, for perturbed models.
  int perturbation = 2;
  /// Index of the model that sees the exact geometry; nullopt perturbs all.
  std::optional<int> exact_model = 0;
  /// Amplitude of the uniform noise added to every logit.
  double logit_noise = 0.5;
  /// Local crops are rendered at this multiple of the crop's grid size.
  int local_upscale = 2;
  double bbox_expansion = 1.2;
  bool with_alpha = false;
};

/// Deterministic in `cfg`: identical configs give identical bundles, down to
/// the bytes written by save_manifest.
PredictionBundle make_synthetic_scene(const SynthConfig& cfg);

/// Grid size of an image dimension at `scale` (rounded, at least 1).
int scaled_extent(int extent, double scale);

}  // namespace segfuse
