#include "segfuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "segfuse/errors.hpp"

namespace segfuse {

namespace {

void require_positive_dims(int h, int w, int c) {
  if (h <= 0 || w <= 0 || c <= 0) {
    throw ArgumentError("grid dimensions must be positive, got " + std::to_string(h) + "x" +
                        std::to_string(w) + "x" + std::to_string(c));
  }
}

std::size_t area(int h, int w) { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }

void require_same_plane(int ah, int aw, int bh, int bw, const char* op) {
  if (ah != bh || aw != bw) {
    throw ShapeError(std::string(op) + ": spatial dims " + std::to_string(ah) + "x" +
                     std::to_string(aw) + " vs " + std::to_string(bh) + "x" + std::to_string(bw));
  }
}

bool in_unit_interval(double v) { return v >= 0.0 && v <= 1.0; }

// One output axis of the half-pixel mapping: lower tap, upper tap, fraction.
struct Tap {
  int lo;
  int hi;
  double frac;
};

std::vector<Tap> axis_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  const double last = static_cast<double>(in - 1);
  for (int d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, last);
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(d)] = Tap{lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

// Resamples a channel-minor plane stack; shared by both map kinds.
std::vector<double> resize_plane(std::span<const double> src, int in_h, int in_w, int channels,
                                 int out_h, int out_w) {
  const auto ty = axis_taps(in_h, out_h);
  const auto tx = axis_taps(in_w, out_w);
  std::vector<double> out(area(out_h, out_w) * static_cast<std::size_t>(channels));
  auto idx = [channels](int y, int x, int w) {
    return (static_cast<std::size_t>(y) * w + x) * channels;
  };
  for (int y = 0; y < out_h; ++y) {
    const Tap& vy = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_w; ++x) {
      const Tap& vx = tx[static_cast<std::size_t>(x)];
      const std::size_t ia = idx(vy.lo, vx.lo, in_w);
      const std::size_t ib = idx(vy.lo, vx.hi, in_w);
      const std::size_t ic = idx(vy.hi, vx.lo, in_w);
      const std::size_t id = idx(vy.hi, vx.hi, in_w);
      const std::size_t io = idx(y, x, out_w);
      for (int c = 0; c < channels; ++c) {
        const double a = src[ia + c];
        const double b = src[ib + c];
        const double cc = src[ic + c];
        const double d = src[id + c];
        const double top = a + vx.frac * (b - a);
        const double bottom = cc + vx.frac * (d - cc);
        out[io + c] = top + vy.frac * (bottom - top);
      }
    }
  }
  return out;
}

}  // namespace

LogitMap::LogitMap(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  require_positive_dims(height, width, channels);
  if (!std::isfinite(fill)) throw ArgumentError("LogitMap fill value must be finite");
  data_.assign(area(height, width) * static_cast<std::size_t>(channels), fill);
}

LogitMap::LogitMap(int height, int width, int channels, std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  require_positive_dims(height, width, channels);
  const std::size_t expected = area(height, width) * static_cast<std::size_t>(channels);
  if (data_.size() != expected) {
    throw ShapeError("LogitMap data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(expected));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw ArgumentError("LogitMap element " + std::to_string(i) + " is not finite");
    }
  }
}

AttentionMap::AttentionMap(int height, int width, double fill) : height_(height), width_(width) {
  require_positive_dims(height, width, 1);
  if (!in_unit_interval(fill)) throw ArgumentError("attention value outside [0, 1]");
  data_.assign(area(height, width), fill);
}

AttentionMap::AttentionMap(int height, int width, std::vector<double> data)
    : height_(height), width_(width), data_(std::move(data)) {
  require_positive_dims(height, width, 1);
  if (data_.size() != area(height, width)) {
    throw ShapeError("AttentionMap data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(area(height, width)));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!in_unit_interval(data_[i])) {
      throw ArgumentError("attention element " + std::to_string(i) + " outside [0, 1]");
    }
  }
}

void AttentionMap::set(int y, int x, double v) {
  if (!in_unit_interval(v)) throw ArgumentError("attention value outside [0, 1]");
  data_[static_cast<std::size_t>(y) * width_ + x] = v;
}

Matrix::Matrix(int r, int c, double fill) : rows(r), cols(c) {
  if (r < 0 || c < 0) throw ArgumentError("matrix dimensions must be nonnegative");
  data.assign(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill);
}

Matrix::Matrix(int r, int c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
  if (r < 0 || c < 0) throw ArgumentError("matrix dimensions must be nonnegative");
  if (data.size() != static_cast<std::size_t>(r) * static_cast<std::size_t>(c)) {
    throw ShapeError("matrix data length does not match " + std::to_string(r) + "x" +
                     std::to_string(c));
  }
}

double blend(double high, double low, double gate) { return std::lerp(low, high, gate); }

LogitMap pixelwise_mul(const LogitMap& a, const AttentionMap& w) {
  require_same_plane(a.height(), a.width(), w.height(), w.width(), "pixelwise_mul");
  LogitMap out = a;
  auto dst = out.data();
  const auto gate = w.data();
  const auto channels = static_cast<std::size_t>(a.channels());
  for (std::size_t p = 0; p < gate.size(); ++p) {
    for (std::size_t c = 0; c < channels; ++c) dst[p * channels + c] *= gate[p];
  }
  return out;
}

LogitMap pixelwise_add(const LogitMap& a, const LogitMap& b) {
  if (!a.same_shape(b)) throw ShapeError("pixelwise_add: operand shapes differ");
  LogitMap out = a;
  auto dst = out.data();
  const auto rhs = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += rhs[i];
  return out;
}

AttentionMap complement(const AttentionMap& w) {
  std::vector<double> out(w.size());
  const auto src = w.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 - src[i];
  return AttentionMap(w.height(), w.width(), std::move(out));
}

LogitMap bilinear_resize(const LogitMap& a, int out_h, int out_w) {
  require_positive_dims(out_h, out_w, 1);
  if (out_h == a.height() && out_w == a.width()) return a;
  return LogitMap(out_h, out_w, a.channels(),
                  resize_plane(a.data(), a.height(), a.width(), a.channels(), out_h, out_w));
}

AttentionMap bilinear_resize(const AttentionMap& a, int out_h, int out_w) {
  require_positive_dims(out_h, out_w, 1);
  if (out_h == a.height() && out_w == a.width()) return a;
  auto values = resize_plane(a.data(), a.height(), a.width(), 1, out_h, out_w);
  // Interpolating inside [0, 1] stays inside; clamp only guards the last ulp.
  for (double& v : values) v = std::clamp(v, 0.0, 1.0);
  return AttentionMap(out_h, out_w, std::move(values));
}

Matrix softmax_rows(const Matrix& m) {
  if (m.cols == 0) throw ArgumentError("softmax_rows: empty row");
  Matrix out(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r) {
    const auto row = m.row(r);
    double peak = row[0];
    for (double v : row) {
      if (!std::isfinite(v)) throw ArgumentError("softmax_rows: non-finite entry");
      peak = std::max(peak, v);
    }
    double sum = 0.0;
    for (int c = 0; c < m.cols; ++c) {
      const double e = std::exp(row[static_cast<std::size_t>(c)] - peak);
      out.at(r, c) = e;
      sum += e;
    }
    for (int c = 0; c < m.cols; ++c) out.at(r, c) /= sum;
  }
  return out;
}

LabelGrid argmax_channel(const LogitMap& a) {
  LabelGrid out{a.height(), a.width(), std::vector<std::int32_t>(area(a.height(), a.width()))};
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      std::int32_t best = 0;
      double best_v = a.at(y, x, 0);
      for (int c = 1; c < a.channels(); ++c) {
        if (a.at(y, x, c) > best_v) {
          best_v = a.at(y, x, c);
          best = c;
        }
      }
      out.labels[static_cast<std::size_t>(y) * a.width() + x] = best;
    }
  }
  return out;
}

}  // namespace segfuse
