#include "elcell/imgproc.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

#include "elcell/parallel.hpp"

namespace elcell::imgproc {
namespace {

int bin_of(float v) {
  int b = static_cast<int>(v * 256.f);
  return std::clamp(b, 0, 255);
}

// Sliding-window 1-D min/max (van Herk style, deque variant), clipped at the
// borders. extent is the one-sided reach.
template <typename T, typename Cmp>
void sliding_extreme_row(const T* in, T* out, int n, int extent, Cmp better) {
  std::deque<int> q;
  int right = 0;
  for (int i = 0; i < n; ++i) {
    const int hi = std::min(n - 1, i + extent);
    for (; right <= hi; ++right) {
      while (!q.empty() && !better(in[q.back()], in[right])) q.pop_back();
      q.push_back(right);
    }
    while (q.front() < i - extent) q.pop_front();
    out[i] = in[q.front()];
  }
}

// Disk-shaped grayscale extreme filter: per-row sliding pass with the disk's
// horizontal extent for each row offset, combined vertically.
template <typename T, typename Cmp>
std::vector<T> disk_extreme(const std::vector<T>& data, int w, int h, int radius, Cmp better,
                            T init) {
  std::vector<int> extents(radius + 1);
  for (int dy = 0; dy <= radius; ++dy)
    extents[dy] = static_cast<int>(std::floor(std::sqrt(double(radius) * radius - double(dy) * dy)));

  // Row-filtered copies per distinct extent.
  std::vector<int> distinct(extents);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  std::vector<std::vector<T>> rowpass(distinct.size(), std::vector<T>(data.size()));
  for (size_t k = 0; k < distinct.size(); ++k) {
    const int ext = distinct[k];
    auto& dst = rowpass[k];
    parallel_for(0, h, [&](int y) {
      sliding_extreme_row(data.data() + static_cast<size_t>(y) * w,
                          dst.data() + static_cast<size_t>(y) * w, w, ext, better);
    });
  }
  auto pass_index = [&](int dy) {
    return std::lower_bound(distinct.begin(), distinct.end(), extents[std::abs(dy)]) -
           distinct.begin();
  };

  std::vector<T> out(data.size(), init);
  parallel_for(0, h, [&](int y) {
    for (int dy = -radius; dy <= radius; ++dy) {
      const int yy = y + dy;
      if (yy < 0 || yy >= h) continue;
      const T* src = rowpass[pass_index(dy)].data() + static_cast<size_t>(yy) * w;
      T* dst = out.data() + static_cast<size_t>(y) * w;
      for (int x = 0; x < w; ++x)
        if (better(src[x], dst[x])) dst[x] = src[x];
    }
  });
  return out;
}

}  // namespace

GrayImage stretch_contrast(const GrayImage& img) {
  if (img.empty()) throw Error("stretch_contrast: empty image");
  const auto [mn_it, mx_it] = std::minmax_element(img.data.begin(), img.data.end());
  const float mn = *mn_it, mx = *mx_it;
  GrayImage out(img.width, img.height);
  if (mx - mn < 1e-12f) return out;  // constant image -> zeros
  const float scale = 1.f / (mx - mn);
  for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = (img.data[i] - mn) * scale;
  return out;
}

GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (sigma <= 0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i)
    kernel[i + radius] = std::exp(-(double(i) * i) / (2.0 * sigma * sigma));

  const int w = img.width, h = img.height;
  GrayImage tmp(w, h), out(w, h);
  parallel_for(0, h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0, wsum = 0;
      const int lo = std::max(-radius, -x), hi = std::min(radius, w - 1 - x);
      for (int i = lo; i <= hi; ++i) {
        acc += kernel[i + radius] * img.at(x + i, y);
        wsum += kernel[i + radius];
      }
      tmp.at(x, y) = static_cast<float>(acc / wsum);
    }
  });
  parallel_for(0, h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0, wsum = 0;
      const int lo = std::max(-radius, -y), hi = std::min(radius, h - 1 - y);
      for (int i = lo; i <= hi; ++i) {
        acc += kernel[i + radius] * tmp.at(x, y + i);
        wsum += kernel[i + radius];
      }
      out.at(x, y) = static_cast<float>(acc / wsum);
    }
  });
  return out;
}

GrayImage dilate_disk(const GrayImage& img, int radius) {
  GrayImage out = img;
  out.data = disk_extreme<float>(img.data, img.width, img.height, radius,
                                 [](float a, float b) { return a > b; },
                                 -std::numeric_limits<float>::infinity());
  return out;
}

GrayImage erode_disk(const GrayImage& img, int radius) {
  GrayImage out = img;
  out.data = disk_extreme<float>(img.data, img.width, img.height, radius,
                                 [](float a, float b) { return a < b; },
                                 std::numeric_limits<float>::infinity());
  return out;
}

BinaryMask dilate_disk(const BinaryMask& mask, int radius) {
  BinaryMask out = mask;
  out.data = disk_extreme<uint8_t>(mask.data, mask.width, mask.height, radius,
                                   [](uint8_t a, uint8_t b) { return a > b; }, 0);
  return out;
}

BinaryMask erode_disk(const BinaryMask& mask, int radius) {
  BinaryMask out = mask;
  out.data = disk_extreme<uint8_t>(mask.data, mask.width, mask.height, radius,
                                   [](uint8_t a, uint8_t b) { return a < b; }, 1);
  return out;
}

GrayImage equalize_histogram(const GrayImage& img) {
  std::array<size_t, 256> hist{};
  for (float v : img.data) hist[bin_of(v)]++;
  std::array<double, 256> cdf{};
  double acc = 0;
  const double total = static_cast<double>(img.data.size());
  for (int i = 0; i < 256; ++i) {
    acc += hist[i];
    cdf[i] = acc / total;
  }
  // Map so the lowest occupied bin goes to 0.
  double cdf_min = 1.0;
  for (int i = 0; i < 256; ++i)
    if (hist[i] > 0) {
      cdf_min = cdf[i];
      break;
    }
  GrayImage out(img.width, img.height);
  const double denom = std::max(1e-12, 1.0 - cdf_min);
  for (size_t i = 0; i < img.data.size(); ++i)
    out.data[i] = static_cast<float>(std::clamp((cdf[bin_of(img.data[i])] - cdf_min) / denom, 0.0, 1.0));
  return out;
}

GrayImage equalize_background(const GrayImage& img, double blur_sigma, int disk_radius) {
  if (blur_sigma <= 0 || disk_radius < 1) throw Error("equalize_background: bad parameters");
  GrayImage bg = gaussian_blur(img, blur_sigma);
  bg = erode_disk(dilate_disk(bg, disk_radius), disk_radius);  // grayscale closing
  GrayImage ratio(img.width, img.height);
  for (size_t i = 0; i < img.data.size(); ++i) {
    const float denom = bg.data[i] < 1e-6f ? 1.f : bg.data[i];
    ratio.data[i] = img.data[i] / denom;
  }
  // The ratio can exceed 1 where the image outshines its background
  // estimate; rescale to the unit range before the histogram pass.
  return equalize_histogram(stretch_contrast(ratio));
}

std::pair<float, BinaryMask> otsu_threshold(const GrayImage& img) {
  if (img.empty()) throw Error("otsu_threshold: empty image");
  std::array<size_t, 256> hist{};
  for (float v : img.data) hist[bin_of(v)]++;
  const double total = static_cast<double>(img.data.size());

  double sum_all = 0;
  for (int i = 0; i < 256; ++i) sum_all += i * static_cast<double>(hist[i]);

  // Ties (flat variance plateaus between well-separated modes) resolve to
  // the middle split, the usual Otsu convention.
  int tie_first = -1, tie_last = -1;
  double best_var = -1;
  double w0 = 0, sum0 = 0;
  for (int k = 0; k < 256; ++k) {
    w0 += static_cast<double>(hist[k]);
    sum0 += k * static_cast<double>(hist[k]);
    const double w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double mu0 = sum0 / w0, mu1 = (sum_all - sum0) / w1;
    const double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (var > best_var) {
      best_var = var;
      tie_first = tie_last = k;
    } else if (var == best_var) {
      tie_last = k;
    }
  }
  int best_k;
  if (tie_first < 0) {
    // Constant image: threshold at its own bin, mask empty.
    best_k = 0;
    for (int i = 0; i < 256; ++i)
      if (hist[i] > 0) best_k = i;
  } else {
    best_k = (tie_first + tie_last) / 2;
  }
  const float threshold = (best_k + 0.5f) / 256.f;
  BinaryMask mask(img.width, img.height);
  for (size_t i = 0; i < img.data.size(); ++i) mask.data[i] = bin_of(img.data[i]) > best_k;
  return {threshold, mask};
}

BinaryMask adaptive_threshold_mean(const GrayImage& img, int window) {
  if (window < 3 || window % 2 == 0) throw Error("adaptive_threshold_mean: window must be odd >= 3");
  const int w = img.width, h = img.height;
  // Summed-area table with a zero row/column prefix.
  std::vector<double> sat(static_cast<size_t>(w + 1) * (h + 1), 0.0);
  for (int y = 0; y < h; ++y) {
    double row = 0;
    for (int x = 0; x < w; ++x) {
      row += img.at(x, y);
      sat[static_cast<size_t>(y + 1) * (w + 1) + x + 1] =
          sat[static_cast<size_t>(y) * (w + 1) + x + 1] + row;
    }
  }
  const int r = window / 2;
  BinaryMask out(w, h);
  parallel_for(0, h, [&](int y) {
    const int y0 = std::max(0, y - r), y1 = std::min(h - 1, y + r);
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - r), x1 = std::min(w - 1, x + r);
      const double sum = sat[static_cast<size_t>(y1 + 1) * (w + 1) + x1 + 1] -
                         sat[static_cast<size_t>(y0) * (w + 1) + x1 + 1] -
                         sat[static_cast<size_t>(y1 + 1) * (w + 1) + x0] +
                         sat[static_cast<size_t>(y0) * (w + 1) + x0];
      const double mean = sum / (double(x1 - x0 + 1) * (y1 - y0 + 1));
      out.at(x, y) = img.at(x, y) > mean;
    }
  });
  return out;
}

BinaryMask binary_cleanup(const BinaryMask& mask, int open_radius) {
  if (open_radius < 1) throw Error("binary_cleanup: open_radius must be >= 1");
  BinaryMask opened = dilate_disk(erode_disk(mask, open_radius), open_radius);

  // Flood fill background from the border (4-connected over false pixels);
  // anything false and unreachable is an interior hole.
  const int w = opened.width, h = opened.height;
  std::vector<uint8_t> reach(opened.data.size(), 0);
  std::deque<std::pair<int, int>> queue;
  auto push = [&](int x, int y) {
    const size_t i = static_cast<size_t>(y) * w + x;
    if (!reach[i] && !opened.data[i]) {
      reach[i] = 1;
      queue.emplace_back(x, y);
    }
  };
  for (int x = 0; x < w; ++x) {
    push(x, 0);
    push(x, h - 1);
  }
  for (int y = 0; y < h; ++y) {
    push(0, y);
    push(w - 1, y);
  }
  while (!queue.empty()) {
    auto [x, y] = queue.front();
    queue.pop_front();
    if (x > 0) push(x - 1, y);
    if (x < w - 1) push(x + 1, y);
    if (y > 0) push(x, y - 1);
    if (y < h - 1) push(x, y + 1);
  }
  BinaryMask out = opened;
  for (size_t i = 0; i < out.data.size(); ++i)
    if (!out.data[i] && !reach[i]) out.data[i] = 1;
  return out;
}

BinaryMask convex_hull_mask(const BinaryMask& mask) {
  std::vector<std::pair<int, int>> pts;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) pts.emplace_back(x, y);
  if (pts.empty()) throw Error("convex_hull_mask: empty mask");

  // Andrew monotone chain on integer pixel coordinates.
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  auto cross = [](const std::pair<int, int>& o, const std::pair<int, int>& a,
                  const std::pair<int, int>& b) {
    return static_cast<long long>(a.first - o.first) * (b.second - o.second) -
           static_cast<long long>(a.second - o.second) * (b.first - o.first);
  };
  std::vector<std::pair<int, int>> hull(2 * pts.size());
  size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  const size_t lower = k + 1;
  for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], *it) <= 0) --k;
    hull[k++] = *it;
  }
  hull.resize(k > 1 ? k - 1 : k);

  // Interior by half-open scanline crossings, boundary by line rasterization.
  BinaryMask out(mask.width, mask.height);
  const size_t n = hull.size();
  if (n == 1) {
    out.at(hull[0].first, hull[0].second) = 1;
    return out;
  }
  for (int y = 0; y < mask.height; ++y) {
    std::vector<double> xs;
    for (size_t i = 0; i < n; ++i) {
      const auto& a = hull[i];
      const auto& b = hull[(i + 1) % n];
      if (a.second == b.second) continue;
      const int ylo = std::min(a.second, b.second), yhi = std::max(a.second, b.second);
      if (y < ylo || y >= yhi) continue;  // half-open: top vertex counted once
      const double t = double(y - a.second) / double(b.second - a.second);
      xs.push_back(a.first + t * (b.first - a.first));
    }
    std::sort(xs.begin(), xs.end());
    for (size_t i = 0; i + 1 < xs.size(); i += 2) {
      const int x0 = static_cast<int>(std::ceil(xs[i] - 1e-9));
      const int x1 = static_cast<int>(std::floor(xs[i + 1] + 1e-9));
      for (int x = std::max(0, x0); x <= std::min(mask.width - 1, x1); ++x) out.at(x, y) = 1;
    }
  }
  for (size_t i = 0; i < n; ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % n];
    const int steps = std::max(std::abs(b.first - a.first), std::abs(b.second - a.second));
    for (int s = 0; s <= steps; ++s) {
      const double t = steps == 0 ? 0.0 : static_cast<double>(s) / steps;
      const int x = static_cast<int>(std::lround(a.first + t * (b.first - a.first)));
      const int y = static_cast<int>(std::lround(a.second + t * (b.second - a.second)));
      out.at(x, y) = 1;
    }
  }
  return out;
}

GrayImage decimate(const GrayImage& img, int stride) {
  const int w = (img.width + stride - 1) / stride;
  const int h = (img.height + stride - 1) / stride;
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(x, y) = img.at(x * stride, y * stride);
  return out;
}

}  // namespace elcell::imgproc
