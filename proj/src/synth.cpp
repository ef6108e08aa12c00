#include "segfuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>

#include "segfuse/errors.hpp"

namespace segfuse {

namespace {

// Draws are derived from raw mt19937_64 output so fixtures do not depend on
// the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int integer(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    return lo + static_cast<int>(engine_() % span);
  }

 private:
  std::mt19937_64 engine_;
};

// Ellipse radii of each component relative to the shell, plus the muscle's
// horizontal offset; all inner shapes stay strictly inside their parent.
constexpr double kMeatRatio = 0.75;
constexpr double kGonadRatio = 0.5;
constexpr double kMuscleRatio = 0.2;
constexpr double kMuscleOffset = 0.15;
constexpr double kLogitPeak = 4.0;

struct ObjectShape {
  double cx = 0;
  double cy = 0;
  double rx = 0;
  double ry = 0;
};

bool in_ellipse(double px, double py, double cx, double cy, double rx, double ry) {
  if (rx <= 0 || ry <= 0) return false;
  const double u = (px - cx) / rx;
  const double v = (py - cy) / ry;
  return u * u + v * v <= 1.0;
}

bool inside(const ObjectShape& s, Component c, double px, double py) {
  switch (c) {
    case Component::Shell: return in_ellipse(px, py, s.cx, s.cy, s.rx, s.ry);
    case Component::Meat:
      return in_ellipse(px, py, s.cx, s.cy, s.rx * kMeatRatio, s.ry * kMeatRatio);
    case Component::Gonad:
      return in_ellipse(px, py, s.cx, s.cy, s.rx * kGonadRatio, s.ry * kGonadRatio);
    case Component::Muscle:
      return in_ellipse(px, py, s.cx + kMuscleOffset * s.rx, s.cy, s.rx * kMuscleRatio,
                        s.ry * kMuscleRatio);
  }
  return false;
}

// Innermost component label at an image-space point (0 = background).
int label_at(const std::vector<ObjectShape>& shapes, double px, double py) {
  for (const auto& s : shapes) {
    if (!inside(s, Component::Shell, px, py)) continue;
    int label = 1;
    for (Component c : {Component::Meat, Component::Gonad, Component::Muscle}) {
      if (inside(s, c, px, py)) label = static_cast<int>(c);
    }
    return label;
  }
  return 0;
}

// Maps grid pixel centers of a (gh x gw) raster of the image to image space.
struct GridMap {
  double sy;
  double sx;
  double y(double gy) const { return gy * sy; }
  double x(double gx) const { return gx * sx; }
};

GridMap grid_map(int image_h, int image_w, int gh, int gw) {
  return {static_cast<double>(image_h) / gh, static_cast<double>(image_w) / gw};
}

BinaryMask rasterize(const ObjectShape& s, Component c, int image_h, int image_w, int gh, int gw) {
  // Evaluate on the (gh x gw) grid, then nearest-upsample onto the image.
  const GridMap g = grid_map(image_h, image_w, gh, gw);
  BinaryMask mask(image_h, image_w);
  for (int y = 0; y < image_h; ++y) {
    const int gy = std::min(gh - 1, static_cast<int>((y + 0.5) / g.sy));
    for (int x = 0; x < image_w; ++x) {
      const int gx = std::min(gw - 1, static_cast<int>((x + 0.5) / g.sx));
      mask.set(y, x, inside(s, c, g.x(gx + 0.5), g.y(gy + 0.5)));
    }
  }
  return mask;
}

// Mask on the (gh x gw) grid itself.
BinaryMask rasterize_grid(const ObjectShape& s, Component c, int image_h, int image_w, int gh,
                          int gw) {
  const GridMap g = grid_map(image_h, image_w, gh, gw);
  BinaryMask mask(gh, gw);
  for (int y = 0; y < gh; ++y) {
    for (int x = 0; x < gw; ++x) mask.set(y, x, inside(s, c, g.x(x + 0.5), g.y(y + 0.5)));
  }
  return mask;
}

LogitMap render_logits(const std::vector<ObjectShape>& shapes, int image_h, int image_w, int gh,
                       int gw, const BBox& region, int up, double noise, std::uint64_t noise_seed) {
  // Noise depends on position only, so models with identical geometry agree
  // exactly. Values are kept float-representable to match the file format.
  Rng rng(noise_seed);
  // Pixel (ly, lx) of the output samples grid point region.origin + (l + 0.5) / up.
  const GridMap g = grid_map(image_h, image_w, gh, gw);
  const int oh = region.height() * up;
  const int ow = region.width() * up;
  LogitMap out(oh, ow, kNumLabels);
  for (int y = 0; y < oh; ++y) {
    const double py = g.y(region.y0 + (y + 0.5) / up);
    for (int x = 0; x < ow; ++x) {
      const double px = g.x(region.x0 + (x + 0.5) / up);
      const int label = label_at(shapes, px, py);
      for (int c = 0; c < kNumLabels; ++c) {
        const double base = c == label ? kLogitPeak : 0.0;
        const double v = base + (noise > 0 ? rng.uniform(-noise, noise) : 0.0);
        out.at(y, x, c) = static_cast<double>(static_cast<float>(v));
      }
    }
  }
  return out;
}

std::uint64_t noise_seed(std::uint64_t seed, std::size_t scale_index, std::int64_t object) {
  return seed * 1000003ULL + scale_index * 7919ULL + static_cast<std::uint64_t>(object + 1) * 104729ULL;
}

std::string model_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "m%02d", i);
  return buf;
}

}  // namespace

int scaled_extent(int extent, double scale) {
  return std::max(1, static_cast<int>(std::lround(extent * scale)));
}

PredictionBundle make_synthetic_scene(const SynthConfig& cfg) {
  if (cfg.height <= 0 || cfg.width <= 0 || cfg.objects <= 0 || cfg.models <= 0) {
    throw ArgumentError("synth: dimensions, objects and models must be positive");
  }
  if (cfg.scales.empty()) throw ArgumentError("synth: at least one scale required");
  for (std::size_t i = 0; i < cfg.scales.size(); ++i) {
    if (!(cfg.scales[i] > 0) || (i > 0 && !(cfg.scales[i] > cfg.scales[i - 1]))) {
      throw ArgumentError("synth: scales must be positive and strictly increasing");
    }
  }
  if (cfg.perturbation < 0 || cfg.local_upscale < 1 || cfg.logit_noise < 0) {
    throw ArgumentError("synth: perturbation, noise and upscale must be nonnegative/positive");
  }
  if (cfg.exact_model && (*cfg.exact_model < 0 || *cfg.exact_model >= cfg.models)) {
    throw ArgumentError("synth: exact model index out of range");
  }

  Rng rng(cfg.seed);
  PredictionBundle b;
  b.image_id = "synth-" + std::to_string(cfg.seed);
  b.height = cfg.height;
  b.width = cfg.width;
  b.classes = kNumLabels;
  b.scales = cfg.scales;
  for (int m = 0; m < cfg.models; ++m) b.models.push_back(model_name(m));

  // Scene layout: one object per cell of a near-square grid.
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.objects))));
  const int rows = (cfg.objects + cols - 1) / cols;
  const double cw = static_cast<double>(cfg.width) / cols;
  const double ch = static_cast<double>(cfg.height) / rows;
  std::vector<ObjectShape> truth;
  for (int k = 0; k < cfg.objects; ++k) {
    const int r = k / cols;
    const int c = k % cols;
    ObjectShape s;
    s.cx = (c + 0.5) * cw + rng.uniform(-0.05, 0.05) * cw;
    s.cy = (r + 0.5) * ch + rng.uniform(-0.05, 0.05) * ch;
    s.rx = rng.uniform(0.28, 0.36) * cw;
    s.ry = rng.uniform(0.28, 0.36) * ch;
    truth.push_back(s);
  }

  // Per-model view of the scene.
  std::vector<std::vector<ObjectShape>> views;
  for (int m = 0; m < cfg.models; ++m) {
    const bool exact = cfg.exact_model && *cfg.exact_model == m;
    std::vector<ObjectShape> view = truth;
    for (auto& s : view) {
      if (exact || cfg.perturbation == 0) continue;
      const int p = cfg.perturbation;
      s.cx += rng.integer(-p, p);
      s.cy += rng.integer(-p, p);
      const double grow = rng.integer(-p, p);
      s.rx = std::max(0.5, s.rx + grow);
      s.ry = std::max(0.5, s.ry + grow);
    }
    views.push_back(std::move(view));
  }

  // Ground truth on the full image grid.
  std::int64_t next_id = 0;
  for (int k = 0; k < cfg.objects; ++k) {
    for (Component c : kComponents) {
      const BinaryMask mask = rasterize(truth[k], c, cfg.height, cfg.width, cfg.height, cfg.width);
      const auto box = tight_bbox(mask);
      if (!box) continue;
      MaskInstance gt;
      gt.id = next_id++;
      gt.mask = rle_encode(mask);
      gt.bbox = *box;
      gt.component = c;
      gt.object_id = k;
      b.ground_truth.push_back(std::move(gt));
    }
  }

  // Instance predictions: rendered on each scale's grid, returned to image size.
  next_id = 0;
  for (int m = 0; m < cfg.models; ++m) {
    const bool exact = cfg.exact_model && *cfg.exact_model == m;
    for (double scale : cfg.scales) {
      const int gh = scaled_extent(cfg.height, scale);
      const int gw = scaled_extent(cfg.width, scale);
      for (int k = 0; k < cfg.objects; ++k) {
        for (Component c : kComponents) {
          const BinaryMask mask = rasterize(views[m][k], c, cfg.height, cfg.width, gh, gw);
          const double score = exact ? rng.uniform(0.9, 0.99) : rng.uniform(0.5, 0.95);
          const auto box = tight_bbox(mask);
          if (!box) continue;
          MaskInstance inst;
          inst.id = next_id++;
          inst.mask = rle_encode(mask);
          inst.bbox = *box;
          inst.component = c;
          inst.object_id = k;
          inst.score = score;
          inst.model_id = b.models[m];
          inst.scale = scale;
          b.instances.push_back(std::move(inst));
        }
      }
    }
  }

  // Dense maps per (scale, model), crop boxes per (scale, object).
  for (std::size_t si = 0; si < cfg.scales.size(); ++si) {
    const double scale = cfg.scales[si];
    const int gh = scaled_extent(cfg.height, scale);
    const int gw = scaled_extent(cfg.width, scale);
    std::vector<std::pair<ObjectId, BBox>> regions;
    for (int k = 0; k < cfg.objects; ++k) {
      const auto box = tight_bbox(rasterize_grid(truth[k], Component::Shell, cfg.height, cfg.width, gh, gw));
      if (!box) continue;
      b.crops.push_back({scale, k, *box});
      regions.emplace_back(k, expand_bbox(*box, cfg.bbox_expansion, gh, gw));
    }
    for (int m = 0; m < cfg.models; ++m) {
      ScaleTensors st;
      st.model = b.models[m];
      st.scale = scale;
      const std::string stem = "tensors/" + st.model + "_s" + std::to_string(si);
      st.logits_path = stem + "_logits.sgft";
      st.logits = render_logits(views[m], cfg.height, cfg.width, gh, gw, BBox{0, 0, gw, gh}, 1,
                                cfg.logit_noise, noise_seed(cfg.seed, si, -1));
      for (const auto& [obj, region] : regions) {
        LocalLogits ll;
        ll.object_id = obj;
        ll.path = stem + "_obj" + std::to_string(obj) + "_logits.sgft";
        ll.logits = render_logits(views[m], cfg.height, cfg.width, gh, gw, region,
                                  cfg.local_upscale, cfg.logit_noise, noise_seed(cfg.seed, si, obj));
        st.locals.push_back(std::move(ll));
      }
      if (cfg.with_alpha) {
        AttentionMap alpha(gh, gw, static_cast<double>(0.65f));
        for (const auto& [obj, region] : regions) {
          for (int y = region.y0; y < region.y1; ++y) {
            for (int x = region.x0; x < region.x1; ++x) alpha.set(y, x, static_cast<double>(0.35f));
          }
        }
        st.alpha_path = stem + "_alpha.sgft";
        st.alpha = std::move(alpha);
      }
      b.tensors.push_back(std::move(st));
    }
  }
  return b;
}

}  // namespace segfuse
