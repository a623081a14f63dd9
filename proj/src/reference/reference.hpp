#pragma once

// Serial reference implementations, kept independent of the optimized
// kernels. Tests use them as oracles; the benchmark tool uses them as the
// single-thread baseline.

#include <vector>

#include "pcblab/geometry.hpp"
#include "pcblab/image.hpp"

namespace pcblab::ref {

// Direct nested-sum convolution, NCHW / FCHW layouts.
std::vector<double> conv2d_naive(const std::vector<double>& x,
                                 const std::vector<double>& k, int N, int C, int H,
                                 int W, int F, int KH, int KW, int stride, int pad);

// Nested-loop matmul with bias: y[n,k] = sum_d x[n,d] w[d,k] + b[k].
std::vector<double> matmul_naive(const std::vector<double>& x,
                                 const std::vector<double>& w,
                                 const std::vector<double>& b, int N, int D, int K);

// Single-thread bilinear warp with the same contract as pcblab::warp.
Image warp_serial(const Image& img, const Homography& h, float fill);

// Hand-rolled scalar Adam step with bias correction.
struct ScalarAdam {
  double m = 0, v = 0;
  long t = 0;
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  double step(double x, double g);
};

// Two-sided Student-t p-value by adaptive Simpson quadrature of the density;
// an independent route into the same number the experiments module gets from
// the incomplete beta.
double student_t_two_sided_p_quadrature(double t, double df);

}  // namespace pcblab::ref
