#include "segfuse/mask.hpp"

#include <algorithm>
#include <cmath>

#include "segfuse/errors.hpp"

namespace segfuse {

namespace {

// Slack for outward rounding so that e.g. 10 * 1.2 / 2 landing one ulp above
// 6 does not grow the box by a whole pixel.
constexpr double kRoundSlack = 1e-9;

std::string box_str(const BBox& b) {
  return "(" + std::to_string(b.x0) + "," + std::to_string(b.y0) + "," + std::to_string(b.x1) +
         "," + std::to_string(b.y1) + ")";
}

void require_inside(const BBox& b, int h, int w, const char* op) {
  if (b.x0 < 0 || b.y0 < 0 || b.x1 > w || b.y1 > h || b.x0 >= b.x1 || b.y0 >= b.y1) {
    throw ShapeError(std::string(op) + ": box " + box_str(b) + " not inside " + std::to_string(h) +
                     "x" + std::to_string(w));
  }
}

}  // namespace

std::string_view component_name(Component c) {
  switch (c) {
    case Component::Shell: return "shell";
    case Component::Meat: return "meat";
    case Component::Gonad: return "gonad";
    case Component::Muscle: return "muscle";
  }
  return "unknown";
}

Component parse_component(std::string_view name) {
  for (Component c : kComponents) {
    if (component_name(c) == name) return c;
  }
  throw DataError("unknown component label '" + std::string(name) + "'");
}

BinaryMask::BinaryMask(int h, int w, bool fill) : height(h), width(w) {
  if (h <= 0 || w <= 0) throw ArgumentError("mask dimensions must be positive");
  bits.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill ? 1 : 0);
}

BinaryMask::BinaryMask(int h, int w, std::vector<std::uint8_t> values)
    : height(h), width(w), bits(std::move(values)) {
  if (h <= 0 || w <= 0) throw ArgumentError("mask dimensions must be positive");
  if (bits.size() != static_cast<std::size_t>(h) * static_cast<std::size_t>(w)) {
    throw ShapeError("mask bit count does not match dimensions");
  }
  for (auto& b : bits) b = b ? 1 : 0;
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

void RleMask::validate() const {
  if (height <= 0 || width <= 0) throw FormatError("RLE dimensions must be positive");
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (i > 0 && counts[i] == 0) {
      throw FormatError("RLE run " + std::to_string(i) + " has zero length");
    }
    total += counts[i];
  }
  const std::uint64_t expected = static_cast<std::uint64_t>(height) * static_cast<std::uint64_t>(width);
  if (total != expected) {
    throw FormatError("RLE counts sum " + std::to_string(total) + " != " + std::to_string(expected));
  }
}

RleMask rle_encode(const BinaryMask& m) {
  RleMask out{m.height, m.width, {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (std::uint8_t bit : m.bits) {
    if (bit != current) {
      out.counts.push_back(run);
      current = bit;
      run = 0;
    }
    ++run;
  }
  out.counts.push_back(run);
  return out;
}

BinaryMask rle_decode(const RleMask& r) {
  r.validate();
  BinaryMask out(r.height, r.width);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (std::uint32_t run : r.counts) {
    std::fill_n(out.bits.begin() + static_cast<std::ptrdiff_t>(pos), run, value);
    pos += run;
    value ^= 1;
  }
  return out;
}

void validate_bbox(const BBox& b, int image_h, int image_w) {
  require_inside(b, image_h, image_w, "bbox");
}

std::optional<BBox> tight_bbox(const BinaryMask& m) {
  BBox b{m.width, m.height, -1, -1};
  bool any = false;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      any = true;
      b.x0 = std::min(b.x0, x);
      b.y0 = std::min(b.y0, y);
      b.x1 = std::max(b.x1, x + 1);
      b.y1 = std::max(b.y1, y + 1);
    }
  }
  if (!any) return std::nullopt;
  return b;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError("iou: mask dims " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                     " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += (a.bits[i] & b.bits[i]);
    uni += (a.bits[i] | b.bits[i]);
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

BBox expand_bbox(const BBox& b, double factor, int image_h, int image_w) {
  if (!(factor >= 1.0) || !std::isfinite(factor)) {
    throw ArgumentError("expand_bbox: factor must be >= 1");
  }
  if (b.x0 >= b.x1 || b.y0 >= b.y1) throw ShapeError("expand_bbox: degenerate box " + box_str(b));
  require_inside(b, image_h, image_w, "expand_bbox");
  const double cx = (b.x0 + b.x1) / 2.0;
  const double cy = (b.y0 + b.y1) / 2.0;
  const double hw = b.width() * factor / 2.0;
  const double hh = b.height() * factor / 2.0;
  BBox out;
  out.x0 = static_cast<int>(std::floor(cx - hw + kRoundSlack));
  out.y0 = static_cast<int>(std::floor(cy - hh + kRoundSlack));
  out.x1 = static_cast<int>(std::ceil(cx + hw - kRoundSlack));
  out.y1 = static_cast<int>(std::ceil(cy + hh - kRoundSlack));
  out.x0 = std::clamp(std::min(out.x0, b.x0), 0, image_w);
  out.y0 = std::clamp(std::min(out.y0, b.y0), 0, image_h);
  out.x1 = std::clamp(std::max(out.x1, b.x1), 0, image_w);
  out.y1 = std::clamp(std::max(out.y1, b.y1), 0, image_h);
  return out;
}

LogitMap crop(const LogitMap& map, const BBox& b) {
  require_inside(b, map.height(), map.width(), "crop");
  LogitMap out(b.height(), b.width(), map.channels());
  for (int y = 0; y < b.height(); ++y) {
    const auto src = map.data().subspan(map.index(b.y0 + y, b.x0, 0),
                                        static_cast<std::size_t>(b.width()) * map.channels());
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(out.index(y, 0, 0)));
  }
  return out;
}

AttentionMap crop(const AttentionMap& map, const BBox& b) {
  require_inside(b, map.height(), map.width(), "crop");
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(b.width()) * b.height());
  for (int y = b.y0; y < b.y1; ++y) {
    for (int x = b.x0; x < b.x1; ++x) values.push_back(map.at(y, x));
  }
  return AttentionMap(b.height(), b.width(), std::move(values));
}

BinaryMask crop(const BinaryMask& mask, const BBox& b) {
  require_inside(b, mask.height, mask.width, "crop");
  BinaryMask out(b.height(), b.width());
  for (int y = 0; y < b.height(); ++y) {
    for (int x = 0; x < b.width(); ++x) out.set(y, x, mask.at(b.y0 + y, b.x0 + x));
  }
  return out;
}

LogitMap paste(const LogitMap& canvas, const LogitMap& patch, const BBox& b) {
  require_inside(b, canvas.height(), canvas.width(), "paste");
  if (patch.height() != b.height() || patch.width() != b.width() ||
      patch.channels() != canvas.channels()) {
    throw ShapeError("paste: patch " + std::to_string(patch.height()) + "x" +
                     std::to_string(patch.width()) + "x" + std::to_string(patch.channels()) +
                     " does not fit box " + box_str(b));
  }
  LogitMap out = canvas;
  for (int y = 0; y < b.height(); ++y) {
    const auto src = patch.data().subspan(patch.index(y, 0, 0),
                                          static_cast<std::size_t>(b.width()) * patch.channels());
    std::copy(src.begin(), src.end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(out.index(b.y0 + y, b.x0, 0)));
  }
  return out;
}

AttentionMap paste(const AttentionMap& canvas, const AttentionMap& patch, const BBox& b) {
  require_inside(b, canvas.height(), canvas.width(), "paste");
  if (patch.height() != b.height() || patch.width() != b.width()) {
    throw ShapeError("paste: attention patch does not fit box " + box_str(b));
  }
  AttentionMap out = canvas;
  for (int y = 0; y < b.height(); ++y) {
    for (int x = 0; x < b.width(); ++x) out.set(b.y0 + y, b.x0 + x, patch.at(y, x));
  }
  return out;
}

void validate_instance(const MaskInstance& inst, int image_h, int image_w, const std::string& where) {
  if (inst.mask.height != image_h || inst.mask.width != image_w) {
    throw DataError(where + ".rle: mask dims " + std::to_string(inst.mask.height) + "x" +
                    std::to_string(inst.mask.width) + " differ from image " +
                    std::to_string(image_h) + "x" + std::to_string(image_w));
  }
  try {
    inst.mask.validate();
  } catch (const FormatError& e) {
    throw FormatError(where + ".rle: " + e.what());
  }
  try {
    validate_bbox(inst.bbox, image_h, image_w);
  } catch (const ShapeError& e) {
    throw DataError(where + ".bbox: " + e.what());
  }
  if (!(inst.score >= 0.0 && inst.score <= 1.0)) {
    throw DataError(where + ".score: " + std::to_string(inst.score) + " outside [0, 1]");
  }
  if (!(inst.scale > 0.0) || !std::isfinite(inst.scale)) {
    throw DataError(where + ".scale: must be positive");
  }
  const auto tight = tight_bbox(rle_decode(inst.mask));
  if (tight && !inst.bbox.contains(*tight)) {
    throw DataError(where + ".bbox: " + box_str(inst.bbox) + " does not enclose mask extent " +
                    box_str(*tight));
  }
}

}  // namespace segfuse
