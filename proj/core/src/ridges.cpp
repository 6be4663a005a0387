#include "elcell/ridges.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "elcell/imgproc.hpp"
#include "elcell/parallel.hpp"

namespace elcell::ridges {
namespace {

constexpr double kPi = std::numbers::pi;

// 7x7 Sobel, separable: smoothing [1 6 15 20 15 6 1]/64 and derivative
// [-1 -4 -5 0 5 4 1]/32 (calibrated so a unit ramp has unit derivative).
constexpr double kSmooth[7] = {1 / 64.0, 6 / 64.0, 15 / 64.0, 20 / 64.0, 15 / 64.0, 6 / 64.0, 1 / 64.0};
constexpr double kDeriv[7] = {-1 / 32.0, -4 / 32.0, -5 / 32.0, 0.0, 5 / 32.0, 4 / 32.0, 1 / 32.0};

// Separable 7-tap filter with clamped borders; kx/ky pick the kernels.
Field filter7(const Field& in, const double* kx, const double* ky) {
  const int w = in.width, h = in.height;
  Field tmp(w, h), out(w, h);
  parallel_for(0, h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -3; i <= 3; ++i) acc += kx[i + 3] * in.at(std::clamp(x + i, 0, w - 1), y);
      tmp.at(x, y) = acc;
    }
  });
  parallel_for(0, h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -3; i <= 3; ++i) acc += ky[i + 3] * tmp.at(x, std::clamp(y + i, 0, h - 1));
      out.at(x, y) = acc;
    }
  });
  return out;
}

Field to_field(const GrayImage& img) {
  Field f(img.width, img.height);
  for (size_t i = 0; i < img.data.size(); ++i) f.data[i] = img.data[i];
  return f;
}

// Connectivity helpers for thinning (8-neighborhood P2..P9 clockwise from N).
inline int neighbors_of(const BinaryMask& m, int x, int y, int p[8]) {
  static const int dx[8] = {0, 1, 1, 1, 0, -1, -1, -1};
  static const int dy[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
  int count = 0;
  for (int i = 0; i < 8; ++i) {
    const int xx = x + dx[i], yy = y + dy[i];
    p[i] = (m.in_bounds(xx, yy) && m.at(xx, yy)) ? 1 : 0;
    count += p[i];
  }
  return count;
}

inline int transitions(const int p[8]) {
  int a = 0;
  for (int i = 0; i < 8; ++i) a += (p[i] == 0 && p[(i + 1) % 8] == 1);
  return a;
}

}  // namespace

ScaleSpace build_scale_space(const GrayImage& img, int octaves, int sublevels, double sigma,
                             double gamma) {
  if (octaves < 1 || sublevels < 1 || sigma <= 0 || gamma <= 1)
    throw Error("build_scale_space: bad parameters");
  const int stride = static_cast<int>(std::lround(gamma));
  if (std::abs(gamma - stride) > 1e-9)
    throw Error("build_scale_space: gamma must be an integer downsampling factor");

  ScaleSpace ss;
  GrayImage base = img;   // octave base at its own grid
  double base_blur = 0.0; // blur of `base` relative to its grid
  double grid = 1.0;      // gamma^o
  for (int o = 0; o < octaves; ++o) {
    if (base.width < 16 || base.height < 16) break;
    for (int l = 0; l < sublevels; ++l) {
      const double s_rel = std::pow(gamma, static_cast<double>(l) / sublevels) * sigma;
      const double incr = std::sqrt(std::max(0.0, s_rel * s_rel - base_blur * base_blur));
      ScaleLevel level;
      level.octave = o;
      level.sublevel = l;
      level.scale = s_rel * grid;
      level.downsample = grid;
      level.image = incr > 1e-9 ? imgproc::gaussian_blur(base, incr) : base;
      ss.levels.push_back(std::move(level));
    }
    if (o + 1 < octaves) {
      // Blur the octave base to gamma*sigma, decimate; the new base then
      // carries sigma relative to the coarser grid.
      const double incr =
          std::sqrt(std::max(0.0, gamma * gamma * sigma * sigma - base_blur * base_blur));
      base = imgproc::decimate(imgproc::gaussian_blur(base, incr), stride);
      base_blur = sigma;
      grid *= gamma;
    }
  }
  if (ss.levels.empty()) throw Error("build_scale_space: image too small");
  return ss;
}

RidgeMap hessian_ridge(const GrayImage& level, double scale_rel) {
  if (level.width < 7 || level.height < 7) throw Error("hessian_ridge: level below 7x7");
  const Field img = to_field(level);
  const Field gx = filter7(img, kDeriv, kSmooth);
  const Field gy = filter7(img, kSmooth, kDeriv);
  const Field hxx = filter7(gx, kDeriv, kSmooth);
  const Field hxy = filter7(gx, kSmooth, kDeriv);
  const Field hyx = filter7(gy, kDeriv, kSmooth);
  const Field hyy = filter7(gy, kSmooth, kDeriv);

  const double norm = scale_rel * scale_rel;
  RidgeMap rm{Field(level.width, level.height), Field(level.width, level.height)};
  parallel_for(0, level.height, [&](int y) {
    for (int x = 0; x < level.width; ++x) {
      const double a = hxx.at(x, y);
      const double b = 0.5 * (hxy.at(x, y) + hyx.at(x, y));
      const double c = hyy.at(x, y);
      const double mean = 0.5 * (a + c);
      const double dev = std::sqrt(std::max(0.0, 0.25 * (a - c) * (a - c) + b * b));
      const double l1 = mean + dev;  // largest eigenvalue
      if (l1 > 0) {
        rm.response.at(x, y) = norm * l1;
        // Eigenvector of l1 points across the ridge; the tangent is its
        // perpendicular.
        double ex, ey;
        if (std::abs(a - l1) > std::abs(c - l1)) {
          ex = b;
          ey = l1 - a;
        } else {
          ex = l1 - c;
          ey = b;
        }
        if (std::abs(ex) < 1e-300 && std::abs(ey) < 1e-300) {
          ex = 1;
          ey = 0;
        }
        double beta = std::atan2(ey, ex) + kPi / 2.0;
        beta = std::fmod(beta, kPi);
        if (beta < 0) beta += kPi;
        rm.orientation.at(x, y) = beta;
      }
    }
  });
  return rm;
}

RidgeMap multiscale_ridgeness(const ScaleSpace& ss) {
  if (ss.levels.empty()) throw Error("multiscale_ridgeness: empty scale space");
  const int w0 = ss.levels.front().image.width;
  const int h0 = ss.levels.front().image.height;

  RidgeMap out{Field(w0, h0), Field(w0, h0)};
  for (const auto& level : ss.levels) {
    const double s_rel = level.scale / level.downsample;
    const RidgeMap lm = hessian_ridge(level.image, s_rel);
    const double stride = level.downsample;
    parallel_for(0, h0, [&](int y) {
      for (int x = 0; x < w0; ++x) {
        const double lx = x / stride, ly = y / stride;
        const double r = lm.response.sample(lx, ly);
        if (r > out.response.at(x, y)) {
          out.response.at(x, y) = r;
          const int nx = std::clamp(static_cast<int>(std::lround(lx)), 0, lm.orientation.width - 1);
          const int ny = std::clamp(static_cast<int>(std::lround(ly)), 0, lm.orientation.height - 1);
          out.orientation.at(x, y) = lm.orientation.at(nx, ny);
        }
      }
    });
  }
  return out;
}

StickField tensor_vote_direct(const RidgeMap& rm, double proximity, int specificity) {
  if (proximity <= 0 || specificity < 1) throw Error("tensor_vote: bad parameters");
  const int w = rm.response.width, h = rm.response.height;
  const int radius = static_cast<int>(std::ceil(3.0 * proximity));

  // Accumulate tensor components a (xx), b (xy), c (yy).
  Field ta(w, h), tb(w, h), tc(w, h);
  for (int vy = 0; vy < h; ++vy) {
    for (int vx = 0; vx < w; ++vx) {
      const double mag = rm.response.at(vx, vy);
      if (mag <= 0) continue;
      const double beta = rm.orientation.at(vx, vy);
      const double cb = std::cos(beta), sb = std::sin(beta);
      for (int dy = -radius; dy <= radius; ++dy) {
        const int y = vy + dy;
        if (y < 0 || y >= h) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
          const int x = vx + dx;
          if (x < 0 || x >= w) continue;
          const double r2 = double(dx) * dx + double(dy) * dy;
          if (r2 > double(radius) * radius) continue;
          // Offset rotated into the voter frame.
          const double ox = cb * dx + sb * dy;
          const double oy = -sb * dx + cb * dy;
          double wgt, gamma2;  // kernel weight, doubled kernel angle
          if (r2 < 1e-24) {
            wgt = 1.0;
            gamma2 = 0.0;
          } else {
            const double phi = std::atan2(oy, ox);
            const double cphi = std::cos(phi);
            double ang = 1.0;
            for (int k = 0; k < 2 * specificity; ++k) ang *= cphi;
            wgt = std::exp(-r2 / (2.0 * proximity * proximity)) * ang;
            gamma2 = 2.0 * phi;
          }
          // Stick direction gamma in the voter frame, rotated back by beta:
          // total angle = gamma + beta; tensor = w * c c^T.
          const double theta = gamma2 + beta;
          const double cth = std::cos(theta), sth = std::sin(theta);
          ta.at(x, y) += mag * wgt * cth * cth;
          tb.at(x, y) += mag * wgt * cth * sth;
          tc.at(x, y) += mag * wgt * sth * sth;
        }
      }
    }
  }

  StickField sf{Field(w, h), Field(w, h)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double a = ta.at(x, y), b = tb.at(x, y), c = tc.at(x, y);
      const double zr = a - c, zi = 2.0 * b;
      const double mag = std::hypot(zr, zi);
      sf.stickness.at(x, y) = mag;
      double beta = 0.5 * std::atan2(zi, zr);
      beta = std::fmod(beta, kPi);
      if (beta < 0) beta += kPi;
      sf.orientation.at(x, y) = mag > 0 ? beta : 0.0;
    }
  }
  return sf;
}

StickField iterate_tensor_voting(const RidgeMap& rm, double proximity1, double proximity2,
                                 int specificity) {
  StickField first = tensor_vote(rm, proximity1, specificity);
  RidgeMap mid{std::move(first.stickness), std::move(first.orientation)};
  return tensor_vote(mid, proximity2, specificity);
}

BinaryMask skeletonize(const BinaryMask& mask) {
  BinaryMask m = mask;
  // Zhang-Suen thinning.
  bool changed = true;
  std::vector<std::pair<int, int>> kill;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      kill.clear();
      for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
          if (!m.at(x, y)) continue;
          int p[8];
          const int bn = neighbors_of(m, x, y, p);
          if (bn < 2 || bn > 6) continue;
          if (transitions(p) != 1) continue;
          // p[0]=N p[2]=E p[4]=S p[6]=W
          if (pass == 0) {
            if (p[0] && p[2] && p[4]) continue;
            if (p[2] && p[4] && p[6]) continue;
          } else {
            if (p[0] && p[2] && p[6]) continue;
            if (p[0] && p[4] && p[6]) continue;
          }
          kill.emplace_back(x, y);
        }
      }
      for (auto [x, y] : kill) m.at(x, y) = 0;
      if (!kill.empty()) changed = true;
    }
  }
  // Remove staircase redundancy: a pixel inside a full 2x2 block can go if
  // its neighborhood stays connected without it.
  changed = true;
  while (changed) {
    changed = false;
    for (int y = 0; y + 1 < m.height; ++y) {
      for (int x = 0; x + 1 < m.width; ++x) {
        if (!(m.at(x, y) && m.at(x + 1, y) && m.at(x, y + 1) && m.at(x + 1, y + 1))) continue;
        for (auto [cx, cy] : {std::pair{x, y}, {x + 1, y}, {x, y + 1}, {x + 1, y + 1}}) {
          int p[8];
          neighbors_of(m, cx, cy, p);
          if (transitions(p) == 1) {
            m.at(cx, cy) = 0;
            changed = true;
            break;
          }
        }
      }
    }
  }
  return m;
}

BinaryMask nms_skeletonize(const StickField& sf) {
  if (sf.stickness.empty()) throw Error("nms_skeletonize: empty field");
  double mx = 0;
  for (double v : sf.stickness.data) mx = std::max(mx, v);
  GrayImage norm(sf.stickness.width, sf.stickness.height);
  if (mx > 0)
    for (size_t i = 0; i < norm.data.size(); ++i)
      norm.data[i] = static_cast<float>(sf.stickness.data[i] / mx);
  auto [thr, mask] = imgproc::otsu_threshold(norm);
  (void)thr;
  return skeletonize(mask);
}

}  // namespace elcell::ridges
