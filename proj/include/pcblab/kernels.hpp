#pragma once

// Hot loops shared by the differentiable ops. Every kernel assigns each
// output element to exactly one thread and keeps that element's accumulation
// order fixed, so results are bitwise identical for any thread count.
//
// The 3x3 stride-1 convolutions the models use take a fused path: the input
// is zero-padded once, then all nine taps of a channel apply in a single
// full-width pass over each output row (no border branches in the inner
// loop). Other shapes fall back to a generic tap-by-tap loop.

#include <algorithm>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pcblab::kernels {

namespace detail {

// Generic contribution of one (n, f, c) plane, any kernel size/stride.
template <typename T>
void conv_plane_generic(const T* xp, const T* kp, T* yp, int H, int W, int KH,
                        int KW, int stride, int pad, int OH, int OW) {
  for (int ky = 0; ky < KH; ++ky) {
    for (int kx = 0; kx < KW; ++kx) {
      const T kv = kp[ky * KW + kx];
      if (kv == T(0)) continue;
      for (int oy = 0; oy < OH; ++oy) {
        const int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= H) continue;
        T* yrow = yp + static_cast<int64_t>(oy) * OW;
        const T* xrow = xp + static_cast<int64_t>(iy) * W;
        if (stride == 1) {
          const int lo = std::max(0, pad - kx);
          const int hi = std::min(OW, W + pad - kx);
          const T* xs = xrow + lo + kx - pad;
          for (int ox = lo; ox < hi; ++ox) {
            yrow[ox] += kv * xs[ox - lo];
          }
        } else {
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= W) continue;
            yrow[ox] += kv * xrow[ix];
          }
        }
      }
    }
  }
}

// Zero-pad one [C,H,W] image into [C,H+2p,W+2p].
template <typename T>
void pad_image(const T* x, T* xpad, int C, int H, int W, int pad) {
  const int Hp = H + 2 * pad, Wp = W + 2 * pad;
  std::fill(xpad, xpad + static_cast<int64_t>(C) * Hp * Wp, T(0));
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H; ++y) {
      std::copy(x + (static_cast<int64_t>(c) * H + y) * W,
                x + (static_cast<int64_t>(c) * H + y) * W + W,
                xpad + (static_cast<int64_t>(c) * Hp + y + pad) * Wp + pad);
    }
  }
}

}  // namespace detail

// y[n,f,oy,ox] = sum_{c,ky,kx} x[n,c,oy*s+ky-p,ox*s+kx-p] * k[f,c,ky,kx]
// With accumulate=true the result is added onto y instead of overwriting.
template <typename T>
void conv2d_forward(const T* x, const T* k, T* y, int N, int C, int H, int W,
                    int F, int KH, int KW, int stride, int pad, int OH, int OW,
                    bool accumulate = false) {
  const int64_t x_n = static_cast<int64_t>(C) * H * W;
  const int64_t y_n = static_cast<int64_t>(F) * OH * OW;
  if (KH == 3 && KW == 3 && stride == 1) {
    const int Hp = H + 2 * pad, Wp = W + 2 * pad;
    const int64_t p_plane = static_cast<int64_t>(Hp) * Wp;
#pragma omp parallel
    {
      std::vector<T> xpad(static_cast<size_t>(C) * Hp * Wp);
      std::vector<T> rowbuf(static_cast<size_t>(OW));
#pragma omp for schedule(static)
      for (int n = 0; n < N; ++n) {
        detail::pad_image(x + n * x_n, xpad.data(), C, H, W, pad);
        for (int f = 0; f < F; ++f) {
          const T* kf = k + static_cast<int64_t>(f) * C * 9;
          T* yp = y + n * y_n + static_cast<int64_t>(f) * OH * OW;
          for (int oy = 0; oy < OH; ++oy) {
            std::fill(rowbuf.begin(), rowbuf.end(), T(0));
            T* rb = rowbuf.data();
            for (int c = 0; c < C; ++c) {
              const T* base = xpad.data() + c * p_plane + static_cast<int64_t>(oy) * Wp;
              const T* a = base;
              const T* b = base + Wp;
              const T* cc = base + 2 * Wp;
              const T* kp = kf + static_cast<int64_t>(c) * 9;
              const T k00 = kp[0], k01 = kp[1], k02 = kp[2];
              const T k10 = kp[3], k11 = kp[4], k12 = kp[5];
              const T k20 = kp[6], k21 = kp[7], k22 = kp[8];
              for (int i = 0; i < OW; ++i) {
                rb[i] += k00 * a[i] + k01 * a[i + 1] + k02 * a[i + 2] +
                         k10 * b[i] + k11 * b[i + 1] + k12 * b[i + 2] +
                         k20 * cc[i] + k21 * cc[i + 1] + k22 * cc[i + 2];
              }
            }
            T* yrow = yp + static_cast<int64_t>(oy) * OW;
            if (accumulate) {
              for (int i = 0; i < OW; ++i) yrow[i] += rb[i];
            } else {
              std::copy(rowbuf.begin(), rowbuf.end(), yrow);
            }
          }
        }
      }
    }
    return;
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int f = 0; f < F; ++f) {
      T* yp = y + n * y_n + static_cast<int64_t>(f) * OH * OW;
      if (!accumulate) std::fill(yp, yp + static_cast<int64_t>(OH) * OW, T(0));
      for (int c = 0; c < C; ++c) {
        detail::conv_plane_generic(x + n * x_n + static_cast<int64_t>(c) * H * W,
                                   k + ((static_cast<int64_t>(f) * C + c) * KH) * KW,
                                   yp, H, W, KH, KW, stride, pad, OH, OW);
      }
    }
  }
}

// dx[n,c,iy,ix] += sum_{f,ky,kx} dy[n,f,oy,ox] * k[f,c,ky,kx]
template <typename T>
void conv2d_backward_input(const T* dy, const T* k, T* dx, int N, int C, int H,
                           int W, int F, int KH, int KW, int stride, int pad,
                           int OH, int OW) {
  if (stride == 1) {
    // full correlation: convolve dy with the flipped, axis-swapped kernel
    std::vector<T> kflip(static_cast<size_t>(C) * F * KH * KW);
    for (int f = 0; f < F; ++f) {
      for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < KH; ++ky) {
          for (int kx = 0; kx < KW; ++kx) {
            kflip[((static_cast<size_t>(c) * F + f) * KH + (KH - 1 - ky)) * KW +
                  (KW - 1 - kx)] =
                k[((static_cast<size_t>(f) * C + c) * KH + ky) * KW + kx];
          }
        }
      }
    }
    conv2d_forward(dy, kflip.data(), dx, N, F, OH, OW, C, KH, KW, 1,
                   KH - 1 - pad, H, W, /*accumulate=*/true);
    return;
  }
  const int64_t x_n = static_cast<int64_t>(C) * H * W;
  const int64_t y_n = static_cast<int64_t>(F) * OH * OW;
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      T* dxp = dx + n * x_n + static_cast<int64_t>(c) * H * W;
      for (int f = 0; f < F; ++f) {
        const T* dyp = dy + n * y_n + static_cast<int64_t>(f) * OH * OW;
        const T* kp = k + ((static_cast<int64_t>(f) * C + c) * KH) * KW;
        for (int ky = 0; ky < KH; ++ky) {
          for (int kx = 0; kx < KW; ++kx) {
            const T kv = kp[ky * KW + kx];
            if (kv == T(0)) continue;
            for (int oy = 0; oy < OH; ++oy) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= H) continue;
              const T* dyrow = dyp + static_cast<int64_t>(oy) * OW;
              T* dxrow = dxp + static_cast<int64_t>(iy) * W;
              for (int ox = 0; ox < OW; ++ox) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= W) continue;
                dxrow[ix] += kv * dyrow[ox];
              }
            }
          }
        }
      }
    }
  }
}

// dk[f,c,ky,kx] += sum_{n,oy,ox} dy[n,f,oy,ox] * x[n,c,oy*s+ky-p,ox*s+kx-p]
template <typename T>
void conv2d_backward_kernel(const T* dy, const T* x, T* dk, int N, int C, int H,
                            int W, int F, int KH, int KW, int stride, int pad,
                            int OH, int OW) {
  const int64_t x_n = static_cast<int64_t>(C) * H * W;
  const int64_t y_n = static_cast<int64_t>(F) * OH * OW;
  if (KH == 3 && KW == 3 && stride == 1) {
    // im2col: dk[f,:] accumulates rank-1 updates dy[n,f,s] * patch[n,s,:],
    // a contiguous axpy over the C*9 patch row. Order over (n, s) is fixed
    // per dk element; parallelism is over f only.
    const int Hp = H + 2 * pad, Wp = W + 2 * pad;
    const int64_t p_plane = static_cast<int64_t>(Hp) * Wp;
    const int64_t p_n = static_cast<int64_t>(C) * p_plane;
    const int64_t ck = static_cast<int64_t>(C) * 9;
    const int64_t spatial = static_cast<int64_t>(OH) * OW;
    std::vector<T> xpad(static_cast<size_t>(N) * p_n);
    std::vector<T> patches(static_cast<size_t>(N) * spatial * ck);
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n) {
      detail::pad_image(x + n * x_n, xpad.data() + n * p_n, C, H, W, pad);
      const T* xc = xpad.data() + n * p_n;
      for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
          T* row = patches.data() + ((n * spatial) + oy * OW + ox) * ck;
          for (int c = 0; c < C; ++c) {
            const T* base = xc + c * p_plane + static_cast<int64_t>(oy) * Wp + ox;
            for (int ky = 0; ky < 3; ++ky) {
              row[c * 9 + ky * 3 + 0] = base[ky * Wp + 0];
              row[c * 9 + ky * 3 + 1] = base[ky * Wp + 1];
              row[c * 9 + ky * 3 + 2] = base[ky * Wp + 2];
            }
          }
        }
      }
    }
#pragma omp parallel for schedule(static)
    for (int f = 0; f < F; ++f) {
      std::vector<T> acc(static_cast<size_t>(ck), T(0));
      for (int n = 0; n < N; ++n) {
        const T* dyp = dy + n * y_n + static_cast<int64_t>(f) * spatial;
        const T* prow = patches.data() + n * spatial * ck;
        for (int64_t s = 0; s < spatial; ++s) {
          const T gv = dyp[s];
          const T* p = prow + s * ck;
          T* a = acc.data();
          for (int64_t j = 0; j < ck; ++j) a[j] += gv * p[j];
        }
      }
      T* dkf = dk + static_cast<int64_t>(f) * ck;
      for (int64_t j = 0; j < ck; ++j) dkf[j] += acc[j];
    }
    return;
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int f = 0; f < F; ++f) {
    for (int c = 0; c < C; ++c) {
      T* dkp = dk + ((static_cast<int64_t>(f) * C + c) * KH) * KW;
      for (int ky = 0; ky < KH; ++ky) {
        for (int kx = 0; kx < KW; ++kx) {
          T acc = T(0);
          for (int n = 0; n < N; ++n) {
            const T* dyp = dy + n * y_n + static_cast<int64_t>(f) * OH * OW;
            const T* xp = x + n * x_n + static_cast<int64_t>(c) * H * W;
            for (int oy = 0; oy < OH; ++oy) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= H) continue;
              const T* dyrow = dyp + static_cast<int64_t>(oy) * OW;
              const T* xrow = xp + static_cast<int64_t>(iy) * W;
              T s = T(0);
              for (int ox = 0; ox < OW; ++ox) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= W) continue;
                s += dyrow[ox] * xrow[ix];
              }
              acc += s;
            }
          }
          dkp[ky * KW + kx] += acc;
        }
      }
    }
  }
}

// y[n,k] = sum_d x[n,d] * w[d,k]  (+ b[k] when b != nullptr)
template <typename T>
void matmul_bias_forward(const T* x, const T* w, const T* b, T* y, int N, int D,
                         int K) {
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    T* yrow = y + static_cast<int64_t>(n) * K;
    if (b) {
      std::copy(b, b + K, yrow);
    } else {
      std::fill(yrow, yrow + K, T(0));
    }
    const T* xrow = x + static_cast<int64_t>(n) * D;
    for (int d = 0; d < D; ++d) {
      const T xv = xrow[d];
      const T* wrow = w + static_cast<int64_t>(d) * K;
      for (int k = 0; k < K; ++k) yrow[k] += xv * wrow[k];
    }
  }
}

// dx[n,d] += sum_k dy[n,k] * w[d,k]
template <typename T>
void matmul_backward_input(const T* dy, const T* w, T* dx, int N, int D, int K) {
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    const T* dyrow = dy + static_cast<int64_t>(n) * K;
    T* dxrow = dx + static_cast<int64_t>(n) * D;
    for (int d = 0; d < D; ++d) {
      const T* wrow = w + static_cast<int64_t>(d) * K;
      T s = T(0);
      for (int k = 0; k < K; ++k) s += dyrow[k] * wrow[k];
      dxrow[d] += s;
    }
  }
}

// dw[d,k] += sum_n x[n,d] * dy[n,k];  db[k] += sum_n dy[n,k]
template <typename T>
void matmul_backward_params(const T* dy, const T* x, T* dw, T* db, int N, int D,
                            int K) {
  if (dw) {
#pragma omp parallel for schedule(static)
    for (int d = 0; d < D; ++d) {
      T* dwrow = dw + static_cast<int64_t>(d) * K;
      for (int n = 0; n < N; ++n) {
        const T xv = x[static_cast<int64_t>(n) * D + d];
        const T* dyrow = dy + static_cast<int64_t>(n) * K;
        for (int k = 0; k < K; ++k) dwrow[k] += xv * dyrow[k];
      }
    }
  }
  if (db) {
    for (int n = 0; n < N; ++n) {
      const T* dyrow = dy + static_cast<int64_t>(n) * K;
      for (int k = 0; k < K; ++k) db[k] += dyrow[k];
    }
  }
}

// v[nb,k,d] = sum_i x[nb,i,d] * w[i,k,d]   (Hadamard mix over capsules)
template <typename T>
void hvc_mix_forward(const T* x, const T* w, T* v, int NB, int NC, int K, int D) {
  const int64_t x_n = static_cast<int64_t>(NC) * D;
  const int64_t v_n = static_cast<int64_t>(K) * D;
#pragma omp parallel for schedule(static)
  for (int nb = 0; nb < NB; ++nb) {
    T* vp = v + nb * v_n;
    std::fill(vp, vp + v_n, T(0));
    const T* xp = x + nb * x_n;
    for (int i = 0; i < NC; ++i) {
      const T* xi = xp + static_cast<int64_t>(i) * D;
      const T* wi = w + (static_cast<int64_t>(i) * K) * D;
      for (int k = 0; k < K; ++k) {
        const T* wk = wi + static_cast<int64_t>(k) * D;
        T* vk = vp + static_cast<int64_t>(k) * D;
        for (int d = 0; d < D; ++d) vk[d] += xi[d] * wk[d];
      }
    }
  }
}

// dx[nb,i,d] += sum_k dv[nb,k,d] * w[i,k,d]
template <typename T>
void hvc_mix_backward_input(const T* dv, const T* w, T* dx, int NB, int NC,
                            int K, int D) {
  const int64_t x_n = static_cast<int64_t>(NC) * D;
  const int64_t v_n = static_cast<int64_t>(K) * D;
#pragma omp parallel for schedule(static)
  for (int nb = 0; nb < NB; ++nb) {
    const T* dvp = dv + nb * v_n;
    T* dxp = dx + nb * x_n;
    for (int i = 0; i < NC; ++i) {
      const T* wi = w + (static_cast<int64_t>(i) * K) * D;
      T* dxi = dxp + static_cast<int64_t>(i) * D;
      for (int k = 0; k < K; ++k) {
        const T* wk = wi + static_cast<int64_t>(k) * D;
        const T* dvk = dvp + static_cast<int64_t>(k) * D;
        for (int d = 0; d < D; ++d) dxi[d] += dvk[d] * wk[d];
      }
    }
  }
}

// dw[i,k,d] += sum_nb x[nb,i,d] * dv[nb,k,d]
template <typename T>
void hvc_mix_backward_weights(const T* dv, const T* x, T* dw, int NB, int NC,
                              int K, int D) {
  const int64_t x_n = static_cast<int64_t>(NC) * D;
  const int64_t v_n = static_cast<int64_t>(K) * D;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < NC; ++i) {
    T* dwi = dw + (static_cast<int64_t>(i) * K) * D;
    for (int nb = 0; nb < NB; ++nb) {
      const T* xi = x + nb * x_n + static_cast<int64_t>(i) * D;
      const T* dvp = dv + nb * v_n;
      for (int k = 0; k < K; ++k) {
        const T* dvk = dvp + static_cast<int64_t>(k) * D;
        T* dwk = dwi + static_cast<int64_t>(k) * D;
        for (int d = 0; d < D; ++d) dwk[d] += xi[d] * dvk[d];
      }
    }
  }
}

}  // namespace pcblab::kernels
