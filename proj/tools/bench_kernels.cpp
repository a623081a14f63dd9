// Benchmark of the OpenMP kernels against the serial reference
// implementations: conv2d forward, the dense matmul, and the bilinear warp.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "pcblab/geometry.hpp"
#include "pcblab/kernels.hpp"
#include "pcblab/rng.hpp"
#include "reference.hpp"

namespace {

double time_best_of(int reps, const std::function<void()>& fn) {
  double best = 1e100;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

std::vector<double> random_vec(size_t n, pcblab::Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1, 1);
  return v;
}

void report(const char* name, double serial_s, double parallel_s, double gflop,
            double max_diff) {
  std::printf("%-18s serial %8.2f ms  omp %8.2f ms  speedup %5.2fx  %7.2f GFLOP/s  maxdiff %.2e\n",
              name, serial_s * 1e3, parallel_s * 1e3, serial_s / parallel_s,
              gflop / parallel_s, max_diff);
}

}  // namespace

int main(int argc, char** argv) {
  int threads = 0;
  if (argc > 1) threads = std::atoi(argv[1]);
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
  std::printf("threads: %d\n", threads > 0 ? threads : omp_get_max_threads());
#else
  std::printf("threads: 1 (built without OpenMP)\n");
#endif
  pcblab::Rng rng(7);

  {
    const int N = 8, C = 16, H = 64, W = 64, F = 32, KH = 3, KW = 3;
    const auto x = random_vec(static_cast<size_t>(N) * C * H * W, rng);
    const auto k = random_vec(static_cast<size_t>(F) * C * KH * KW, rng);
    std::vector<double> y(static_cast<size_t>(N) * F * H * W);
    std::vector<double> yref;
    const double serial = time_best_of(3, [&] {
      yref = pcblab::ref::conv2d_naive(x, k, N, C, H, W, F, KH, KW, 1, 1);
    });
    const double par = time_best_of(5, [&] {
      pcblab::kernels::conv2d_forward(x.data(), k.data(), y.data(), N, C, H, W, F,
                                      KH, KW, 1, 1, H, W);
    });
    double md = 0;
    for (size_t i = 0; i < y.size(); ++i) md = std::max(md, std::abs(y[i] - yref[i]));
    const double gflop = 2.0 * N * F * C * KH * KW * H * W / 1e9;
    report("conv2d 8x16x64x64", serial, par, gflop, md);
  }

  {
    const int N = 256, D = 2048, K = 64;
    const auto x = random_vec(static_cast<size_t>(N) * D, rng);
    const auto w = random_vec(static_cast<size_t>(D) * K, rng);
    const auto b = random_vec(static_cast<size_t>(K), rng);
    std::vector<double> y(static_cast<size_t>(N) * K);
    std::vector<double> yref;
    const double serial = time_best_of(3, [&] {
      yref = pcblab::ref::matmul_naive(x, w, b, N, D, K);
    });
    const double par = time_best_of(5, [&] {
      pcblab::kernels::matmul_bias_forward(x.data(), w.data(), b.data(), y.data(), N,
                                           D, K);
    });
    double md = 0;
    for (size_t i = 0; i < y.size(); ++i) md = std::max(md, std::abs(y[i] - yref[i]));
    report("dense 256x2048x64", serial, par, 2.0 * N * D * K / 1e9, md);
  }

  {
    pcblab::Image img(512, 512, 3);
    for (auto& p : img.pix) p = static_cast<float>(rng.uniform01());
    const pcblab::Homography h =
        pcblab::compose(pcblab::rotation_homography(13.0, 255.5, 255.5),
                        pcblab::perspective_homography(0.08, 0.05, 512, 512));
    pcblab::Image out, outref;
    const double serial = time_best_of(3, [&] {
      outref = pcblab::ref::warp_serial(img, h, 0.0f);
    });
    const double par = time_best_of(5, [&] { out = pcblab::warp(img, h, 0.0f); });
    double md = 0;
    for (size_t i = 0; i < out.pix.size(); ++i) {
      md = std::max(md, static_cast<double>(std::abs(out.pix[i] - outref.pix[i])));
    }
    // ~14 flops per channel sample
    report("warp 512x512x3", serial, par, 14.0 * 3 * 512 * 512 / 1e9, md);
  }
  return 0;
}
