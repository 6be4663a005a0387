#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "elcell/parallel.hpp"
#include "elcell/ridges.hpp"

// Steerable stick tensor voting. The angular part cos^(2v) of the voting
// kernel is a trigonometric polynomial, so the dense vote integral splits
// into a small set of complex convolutions. Writing the summed tensor U as
// trace plus anisotropic part aniso = (Uxx - Uyy) + 2i Uxy, the stickness
// lambda1 - lambda2 equals |aniso| and the leading eigenvector angle is
// arg(aniso) / 2, so only
//
//   aniso(U) = sum_k a_k (c_{k+2} * h_{k+4})
//
// is required, with c_k(x) = R(x) e^{-ik b(x)}, h_k(d) = g(|d|) e^{ik psi(d)}
// and a_k = binom(2v, v - k/2) / 4^v over even k in [-2v, 2v]. For v = 2 this
// is a sum of five complex convolutions (the paper's eight count both tensor
// components). Kernels are truncated at radius 3*proximity, identical to the
// direct-summation reference, so the two paths agree to FFT roundoff.

namespace elcell::ridges {
namespace {

constexpr double kPi = std::numbers::pi;
using cplx = std::complex<double>;

int next_smooth(int n) {
  auto smooth = [](int v) {
    for (int p : {2, 3, 5}) {
      while (v % p == 0) v /= p;
    }
    return v == 1;
  };
  while (!smooth(n)) ++n;
  return n;
}

double binom(int n, int k) {
  double r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace

StickField tensor_vote(const RidgeMap& rm, double proximity, int specificity) {
  if (proximity <= 0 || specificity < 1) throw Error("tensor_vote: bad parameters");
  const int w = rm.response.width, h = rm.response.height;
  const int radius = static_cast<int>(std::ceil(3.0 * proximity));
  const int pw = next_smooth(w + 2 * radius + 1);
  const int ph = next_smooth(h + 2 * radius + 1);
  const size_t n = static_cast<size_t>(pw) * ph;

  const int v2 = 2 * specificity;
  auto a_of = [&](int k) { return binom(v2, (v2 - k) / 2) / std::pow(4.0, specificity); };

  fftw_complex* raw_a = fftw_alloc_complex(n);
  fftw_complex* raw_b = fftw_alloc_complex(n);
  cplx* votes = reinterpret_cast<cplx*>(raw_a);
  cplx* kern = reinterpret_cast<cplx*>(raw_b);
  fftw_plan fwd_a = fftw_plan_dft_2d(ph, pw, raw_a, raw_a, FFTW_FORWARD, FFTW_ESTIMATE);
  fftw_plan fwd_b = fftw_plan_dft_2d(ph, pw, raw_b, raw_b, FFTW_FORWARD, FFTW_ESTIMATE);
  fftw_plan bwd_a = fftw_plan_dft_2d(ph, pw, raw_a, raw_a, FFTW_BACKWARD, FFTW_ESTIMATE);

  std::vector<cplx> acc(n, cplx(0, 0));
  const double inv2s2 = 1.0 / (2.0 * proximity * proximity);

  for (int k = -v2; k <= v2; k += 2) {
    // c_{k+2}(x) = R(x) e^{-i(k+2) b(x)}, zero padded.
    std::fill(votes, votes + n, cplx(0, 0));
    parallel_for(0, h, [&](int y) {
      for (int x = 0; x < w; ++x) {
        const double r = rm.response.at(x, y);
        if (r <= 0) continue;
        const double a = -(k + 2) * rm.orientation.at(x, y);
        votes[static_cast<size_t>(y) * pw + x] = cplx(r * std::cos(a), r * std::sin(a));
      }
    });
    fftw_execute(fwd_a);

    // h_{k+4}(d), wrapped around the origin; origin sample left at zero, the
    // self-vote is added exactly afterwards.
    std::fill(kern, kern + n, cplx(0, 0));
    const int kk = k + 4;
    for (int dy = -radius; dy <= radius; ++dy) {
      for (int dx = -radius; dx <= radius; ++dx) {
        const double r2 = double(dx) * dx + double(dy) * dy;
        if (r2 > double(radius) * radius || r2 < 1e-24) continue;
        const double g = std::exp(-r2 * inv2s2);
        const double a = kk * std::atan2(double(dy), double(dx));
        kern[static_cast<size_t>((dy + ph) % ph) * pw + (dx + pw) % pw] =
            cplx(g * std::cos(a), g * std::sin(a));
      }
    }
    fftw_execute(fwd_b);

    const double a_k = a_of(k);
    parallel_for(0, ph, [&](int y) {
      cplx* accp = acc.data() + static_cast<size_t>(y) * pw;
      const cplx* vp = votes + static_cast<size_t>(y) * pw;
      const cplx* hp = kern + static_cast<size_t>(y) * pw;
      for (int x = 0; x < pw; ++x) accp[x] += a_k * vp[x] * hp[x];
    });
  }

  std::copy(acc.begin(), acc.end(), votes);
  fftw_execute(bwd_a);
  const double inv_n = 1.0 / static_cast<double>(n);

  StickField sf{Field(w, h), Field(w, h)};
  parallel_for(0, h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      double re = votes[static_cast<size_t>(y) * pw + x].real() * inv_n;
      double im = votes[static_cast<size_t>(y) * pw + x].imag() * inv_n;
      const double r = rm.response.at(x, y);
      if (r > 0) {
        const double b2 = 2.0 * rm.orientation.at(x, y);
        re += r * std::cos(b2);
        im += r * std::sin(b2);
      }
      const double mag = std::hypot(re, im);
      sf.stickness.at(x, y) = mag;
      double beta = 0.5 * std::atan2(im, re);
      beta = std::fmod(beta, kPi);
      if (beta < 0) beta += kPi;
      sf.orientation.at(x, y) = mag > 0 ? beta : 0.0;
    }
  });

  fftw_destroy_plan(fwd_a);
  fftw_destroy_plan(fwd_b);
  fftw_destroy_plan(bwd_a);
  fftw_free(raw_a);
  fftw_free(raw_b);
  return sf;
}

}  // namespace elcell::ridges
