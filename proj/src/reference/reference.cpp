#include "reference.hpp"

#include <cmath>
#include <functional>

namespace pcblab::ref {

std::vector<double> conv2d_naive(const std::vector<double>& x,
                                 const std::vector<double>& k, int N, int C, int H,
                                 int W, int F, int KH, int KW, int stride, int pad) {
  const int OH = (H + 2 * pad - KH) / stride + 1;
  const int OW = (W + 2 * pad - KW) / stride + 1;
  std::vector<double> y(static_cast<size_t>(N) * F * OH * OW, 0.0);
  for (int n = 0; n < N; ++n) {
    for (int f = 0; f < F; ++f) {
      for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
          double acc = 0;
          for (int c = 0; c < C; ++c) {
            for (int ky = 0; ky < KH; ++ky) {
              for (int kx = 0; kx < KW; ++kx) {
                const int iy = oy * stride + ky - pad;
                const int ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x[((static_cast<size_t>(n) * C + c) * H + iy) * W + ix] *
                       k[((static_cast<size_t>(f) * C + c) * KH + ky) * KW + kx];
              }
            }
          }
          y[((static_cast<size_t>(n) * F + f) * OH + oy) * OW + ox] = acc;
        }
      }
    }
  }
  return y;
}

std::vector<double> matmul_naive(const std::vector<double>& x,
                                 const std::vector<double>& w,
                                 const std::vector<double>& b, int N, int D, int K) {
  std::vector<double> y(static_cast<size_t>(N) * K, 0.0);
  for (int n = 0; n < N; ++n) {
    for (int k = 0; k < K; ++k) {
      double acc = b.empty() ? 0.0 : b[static_cast<size_t>(k)];
      for (int d = 0; d < D; ++d) {
        acc += x[static_cast<size_t>(n) * D + d] * w[static_cast<size_t>(d) * K + k];
      }
      y[static_cast<size_t>(n) * K + k] = acc;
    }
  }
  return y;
}

Image warp_serial(const Image& img, const Homography& h, float fill) {
  const Homography hinv = invert(h);
  Image out(img.h, img.w, img.c, fill);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      double sx, sy;
      hinv.apply(x, y, sx, sy);
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      for (int ch = 0; ch < img.c; ++ch) {
        auto tap = [&](int yy, int xx) -> double {
          if (yy < 0 || yy >= img.h || xx < 0 || xx >= img.w) return fill;
          return img.at(yy, xx, ch);
        };
        out.at(y, x, ch) = static_cast<float>(
            (1 - fx) * (1 - fy) * tap(y0, x0) + fx * (1 - fy) * tap(y0, x0 + 1) +
            (1 - fx) * fy * tap(y0 + 1, x0) + fx * fy * tap(y0 + 1, x0 + 1));
      }
    }
  }
  return out;
}

double ScalarAdam::step(double x, double g) {
  t += 1;
  m = beta1 * m + (1 - beta1) * g;
  v = beta2 * v + (1 - beta2) * g * g;
  const double mhat = m / (1 - std::pow(beta1, static_cast<double>(t)));
  const double vhat = v / (1 - std::pow(beta2, static_cast<double>(t)));
  return x - lr * mhat / (std::sqrt(vhat) + eps);
}

namespace {

double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double fa, double fm, double fb, double eps, int depth) {
  const double m = (a + b) / 2;
  const double lm = (a + m) / 2, rm = (m + b) / 2;
  const double flm = f(lm), frm = f(rm);
  const double whole = (b - a) / 6 * (fa + 4 * fm + fb);
  const double left = (m - a) / 6 * (fa + 4 * flm + fm);
  const double right = (b - m) / 6 * (fm + 4 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) < 15 * eps) {
    return left + right + (left + right - whole) / 15;
  }
  return adaptive_simpson(f, a, m, fa, flm, fm, eps / 2, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, eps / 2, depth - 1);
}

}  // namespace

double student_t_two_sided_p_quadrature(double t, double df) {
  const double at = std::abs(t);
  const double lognorm = std::lgamma((df + 1) / 2) - std::lgamma(df / 2) -
                         0.5 * std::log(df * 3.14159265358979323846);
  auto pdf = [df, lognorm](double x) {
    return std::exp(lognorm - (df + 1) / 2 * std::log1p(x * x / df));
  };
  // p = 1 - 2 * integral_0^|t| pdf
  const double body = adaptive_simpson(pdf, 0.0, at, pdf(0.0), pdf(at / 2), pdf(at),
                                       1e-13, 48);
  return std::max(0.0, 1.0 - 2.0 * body);
}

}  // namespace pcblab::ref
