#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "segfuse/tensor.hpp"

namespace segfuse {

/// The four nested oyster components. Values double as label indices in
/// class maps (0 is background).
enum class Component : std::int32_t { Shell = 1, Meat = 2, Gonad = 3, Muscle = 4 };

inline constexpr Component kComponents[] = {Component::Shell, Component::Meat, Component::Gonad,
                                            Component::Muscle};
inline constexpr int kNumLabels = 5;

std::string_view component_name(Component c);
/// Throws DataError for anything but "shell", "meat", "gonad", "muscle".
Component parse_component(std::string_view name);

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int h, int w, bool fill = false);
  BinaryMask(int h, int w, std::vector<std::uint8_t> values);

  bool at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int y, int x, bool v) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  std::size_t count() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// Row-major run lengths; the first run counts zeros and may be 0, every
/// later run is positive and the runs alternate 0/1.
struct RleMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  /// Throws FormatError when the counts break the run invariants.
  void validate() const;
  friend bool operator==(const RleMask&, const RleMask&) = default;
};

RleMask rle_encode(const BinaryMask& m);
BinaryMask rle_decode(const RleMask& r);

/// Half-open pixel box [x0, x1) x [y0, y1).
struct BBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool contains(const BBox& o) const {
    return x0 <= o.x0 && y0 <= o.y0 && x1 >= o.x1 && y1 >= o.y1;
  }
  auto operator<=>(const BBox&) const = default;
};

/// Throws ShapeError unless the box is nondegenerate and inside an image of
/// the given size.
void validate_bbox(const BBox& b, int image_h, int image_w);

/// Tight bounding box of the set pixels; nullopt for an empty mask.
std::optional<BBox> tight_bbox(const BinaryMask& m);

double iou(const BinaryMask& a, const BinaryMask& b);

/// Scales the box about its center, rounds outward (floor on the min corner,
/// ceil on the max corner) and clamps to the image.
BBox expand_bbox(const BBox& b, double factor, int image_h, int image_w);

LogitMap crop(const LogitMap& map, const BBox& b);
AttentionMap crop(const AttentionMap& map, const BBox& b);
BinaryMask crop(const BinaryMask& mask, const BBox& b);

/// Copy of `canvas` with the box region replaced by `patch`.
LogitMap paste(const LogitMap& canvas, const LogitMap& patch, const BBox& b);
AttentionMap paste(const AttentionMap& canvas, const AttentionMap& patch, const BBox& b);

using ModelId = std::string;
using ObjectId = std::int64_t;

/// One predicted or ground-truth instance on the full image grid.
struct MaskInstance {
  std::int64_t id = 0;
  RleMask mask;
  BBox bbox;
  Component component = Component::Shell;
  std::optional<ObjectId> object_id;
  double score = 1.0;
  ModelId model_id;
  double scale = 1.0;

  friend bool operator==(const MaskInstance&, const MaskInstance&) = default;
};

/// Checks the instance invariants against its image; throws DataError or
/// FormatError naming `where`.
void validate_instance(const MaskInstance& inst, int image_h, int image_w, const std::string& where);

}  // namespace segfuse
