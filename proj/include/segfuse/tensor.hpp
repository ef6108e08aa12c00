#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace segfuse {

/// Dense H x W x C grid of finite class scores, row-major with the channel
/// index varying fastest.
class LogitMap {
 public:
  LogitMap() = default;
  /// Zero-filled map. Throws ArgumentError on a zero dimension.
  LogitMap(int height, int width, int channels, double fill = 0.0);
  /// Takes ownership of `data`. Throws ShapeError on a length mismatch and
  /// ArgumentError on a non-finite element.
  LogitMap(int height, int width, int channels, std::vector<double> data);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }
  double at(int y, int x, int c) const { return data_[index(y, x, c)]; }
  double& at(int y, int x, int c) { return data_[index(y, x, c)]; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  bool same_shape(const LogitMap& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  friend bool operator==(const LogitMap&, const LogitMap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

/// Dense H x W grid of gate values in [0, 1].
class AttentionMap {
 public:
  AttentionMap() = default;
  AttentionMap(int height, int width, double fill);
  /// Throws ShapeError on a length mismatch and ArgumentError on a value
  /// outside [0, 1] (or NaN).
  AttentionMap(int height, int width, std::vector<double> data);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  double at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  /// Writes a single gate value; throws ArgumentError outside [0, 1].
  void set(int y, int x, double v);

  std::span<const double> data() const { return data_; }

  friend bool operator==(const AttentionMap&, const AttentionMap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// Row-major real matrix used for difference and attention matrices.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0);
  Matrix(int r, int c, std::vector<double> values);

  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::span<const double> row(int r) const {
    return std::span<const double>(data).subspan(static_cast<std::size_t>(r) * cols, cols);
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// Per-pixel integer labels (class indices).
struct LabelGrid {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> labels;

  std::int32_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const LabelGrid&, const LabelGrid&) = default;
};

/// Gated blend `high * gate + low * (1 - gate)` in monotone lerp form.
/// Exact at gate 0 and 1, exact when `high == low`, and never leaves
/// [min(high, low), max(high, low)] for gate in [0, 1].
double blend(double high, double low, double gate);

/// out[y,x,c] = a[y,x,c] * w[y,x].
LogitMap pixelwise_mul(const LogitMap& a, const AttentionMap& w);
LogitMap pixelwise_add(const LogitMap& a, const LogitMap& b);
AttentionMap complement(const AttentionMap& w);

/// Bilinear resampling, half-pixel centers, clamp-to-edge:
///   src = (dst + 0.5) * in / out - 0.5, clamped to [0, in - 1]
/// and per channel
///   top = a + fx * (b - a), bottom = c + fx * (d - c), v = top + fy * (bottom - top).
/// Equal sizes return a bitwise copy.
LogitMap bilinear_resize(const LogitMap& a, int out_h, int out_w);
AttentionMap bilinear_resize(const AttentionMap& a, int out_h, int out_w);

/// Row-wise softmax with max subtraction; sums run in ascending column order.
Matrix softmax_rows(const Matrix& m);

/// Smallest channel index attaining the per-pixel maximum.
LabelGrid argmax_channel(const LogitMap& a);

}  // namespace segfuse
