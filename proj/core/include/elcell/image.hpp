#pragma once

#include <cassert>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace elcell {

/// Runtime failure anywhere in the pipeline. The message carries a short
/// stage or operation tag so CLI users can tell which step gave up.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Single-channel intensity image, row-major, values nominally in [0, 1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  GrayImage() = default;
  GrayImage(int w, int h, float fill = 0.f)
      : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

  float& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  float at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }

  bool empty() const { return data.empty(); }
  size_t size() const { return data.size(); }

  /// Bilinear sample with border clamping.
  float sample(double x, double y) const;

  bool in_bounds(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }
};

/// Boolean mask with the same layout as the image it was derived from.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int w, int h, bool fill = false)
      : width(w), height(h), data(static_cast<size_t>(w) * h, fill ? 1 : 0) {}

  uint8_t& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  bool at(int x, int y) const { return data[static_cast<size_t>(y) * width + x] != 0; }

  bool in_bounds(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }
  bool empty() const { return data.empty(); }
  size_t count() const;
};

/// Soft mask cropped to its bounding box within a larger frame.
struct MaskRegion {
  int row = 0, col = 0;  // grid position
  int x0 = 0, y0 = 0;    // crop origin in the frame
  GrayImage image;
};

/// Dense double-precision field (ridgeness, stickness, orientations).
struct Field {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Field() = default;
  Field(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

  double& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }

  bool empty() const { return data.empty(); }

  /// Bilinear sample with border clamping.
  double sample(double x, double y) const;
};

}  // namespace elcell
