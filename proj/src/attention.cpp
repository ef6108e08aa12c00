#include "segfuse/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "segfuse/errors.hpp"

namespace segfuse {

Matrix difference_matrix(const Matrix& global_feat, const Matrix& local_feat) {
  if (global_feat.rows != local_feat.rows || global_feat.cols != local_feat.cols) {
    throw ShapeError("difference_matrix: " + std::to_string(global_feat.rows) + "x" +
                     std::to_string(global_feat.cols) + " vs " + std::to_string(local_feat.rows) +
                     "x" + std::to_string(local_feat.cols));
  }
  Matrix out(global_feat.rows, global_feat.cols);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = std::abs(global_feat.data[i] - local_feat.data[i]);
  }
  return out;
}

Matrix local_attention(const Matrix& d, const AttentionConfig& cfg) {
  if (!(cfg.factor > 0.0) || !std::isfinite(cfg.factor)) {
    throw ArgumentError("attention factor must be positive");
  }
  Matrix scaled(d.rows, d.cols);
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    if (d.data[i] < 0.0) throw ArgumentError("difference matrix has a negative entry");
    scaled.data[i] = -cfg.factor * d.data[i];
  }
  return softmax_rows(scaled);
}

Matrix row_normalize(const Matrix& a) {
  Matrix out(a.rows, a.cols);
  for (int r = 0; r < a.rows; ++r) {
    double sum = 0.0;
    for (double v : a.row(r)) {
      if (v < 0.0 || !std::isfinite(v)) {
        throw ArgumentError("row_normalize: entries must be finite and nonnegative");
      }
      sum += v;
    }
    if (sum == 0.0) {
      throw DegenerateAttentionError("row_normalize: row " + std::to_string(r) + " sums to zero");
    }
    for (int c = 0; c < a.cols; ++c) out.at(r, c) = a.at(r, c) / sum;
  }
  return out;
}

Matrix logits_as_features(const LogitMap& m) {
  const auto src = m.data();
  return Matrix(m.height() * m.width(), m.channels(), std::vector<double>(src.begin(), src.end()));
}

Matrix row_peak(const Matrix& a) {
  if (a.cols == 0) throw ArgumentError("row_peak: empty rows");
  Matrix out(a.rows, 1);
  for (int r = 0; r < a.rows; ++r) {
    const auto row = a.row(r);
    out.at(r, 0) = *std::max_element(row.begin(), row.end());
  }
  return out;
}

AttentionMap attention_to_map(std::span<const RegionAttention> regions, int canvas_h, int canvas_w,
                              double neutral) {
  AttentionMap canvas(canvas_h, canvas_w, neutral);
  for (const auto& r : regions) {
    validate_bbox(r.region, canvas_h, canvas_w);
    if (r.grid_h <= 0 || r.grid_w <= 0 ||
        r.values.data.size() != static_cast<std::size_t>(r.grid_h) * r.grid_w) {
      throw ShapeError("attention_to_map: " + std::to_string(r.values.data.size()) +
                       " attention values cannot be reshaped to " + std::to_string(r.grid_h) +
                       "x" + std::to_string(r.grid_w));
    }
    const AttentionMap grid(r.grid_h, r.grid_w, r.values.data);
    canvas = paste(canvas, bilinear_resize(grid, r.region.height(), r.region.width()), r.region);
  }
  return canvas;
}

AttentionMap region_gate(const LogitMap& global_crop, const LogitMap& local_logits,
                         const AttentionConfig& cfg) {
  if (global_crop.channels() != local_logits.channels()) {
    throw ShapeError("region_gate: channel counts differ");
  }
  const LogitMap local_on_grid =
      bilinear_resize(local_logits, global_crop.height(), global_crop.width());
  const Matrix d =
      difference_matrix(logits_as_features(global_crop), logits_as_features(local_on_grid));
  const Matrix beta = row_normalize(local_attention(d, cfg));
  const Matrix gate = row_peak(beta);
  std::vector<double> values = gate.data;
  for (double& v : values) v = std::clamp(v, 0.0, 1.0);
  return AttentionMap(global_crop.height(), global_crop.width(), std::move(values));
}

LogitMap fuse_global_local(const LogitMap& global_logits, std::span<const PlacedLogits> locals,
                           const AttentionMap& beta) {
  if (beta.height() != global_logits.height() || beta.width() != global_logits.width()) {
    throw ShapeError("fuse_global_local: attention map dims differ from global logits");
  }
  LogitMap local_sum(global_logits.height(), global_logits.width(), global_logits.channels());
  for (const auto& p : locals) {
    if (p.logits.channels() != global_logits.channels()) {
      throw ShapeError("fuse_global_local: local channel count differs from global");
    }
    validate_bbox(p.box, global_logits.height(), global_logits.width());
    if (p.logits.height() != p.box.height() || p.logits.width() != p.box.width()) {
      throw ShapeError("fuse_global_local: local logits do not match their box");
    }
    for (int y = 0; y < p.box.height(); ++y) {
      for (int x = 0; x < p.box.width(); ++x) {
        for (int c = 0; c < global_logits.channels(); ++c) {
          local_sum.at(p.box.y0 + y, p.box.x0 + x, c) += p.logits.at(y, x, c);
        }
      }
    }
  }
  LogitMap out(global_logits.height(), global_logits.width(), global_logits.channels());
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      const double gate = beta.at(y, x);
      for (int c = 0; c < out.channels(); ++c) {
        out.at(y, x, c) = blend(global_logits.at(y, x, c), local_sum.at(y, x, c), gate);
      }
    }
  }
  return out;
}

}  // namespace segfuse
