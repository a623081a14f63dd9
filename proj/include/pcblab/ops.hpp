#pragma once

// Differentiable tensor operations. Each op computes its forward result via
// the kernels, and, when a tape is supplied and a gradient is needed, records
// a pull closure that accumulates into the inputs' grad buffers.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pcblab/kernels.hpp"
#include "pcblab/tensor.hpp"

namespace pcblab::ops {

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <typename T>
bool any_grad(const Tensor<T>& a) {
  return a.requires_grad();
}

template <typename T, typename... Ts>
bool any_grad(const Tensor<T>& a, const Ts&... rest) {
  return a.requires_grad() || any_grad(rest...);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Tensor<T> conv2d(Tape<T>* tape, Tensor<T> x, Tensor<T> k, int stride, int pad) {
  detail::require(x.ndim() == 4, "conv2d: input must be [N,C,H,W]");
  detail::require(k.ndim() == 4, "conv2d: kernel must be [F,C,kh,kw]");
  detail::require(stride >= 1, "conv2d: stride must be >= 1");
  detail::require(pad >= 0, "conv2d: padding must be >= 0");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int F = k.dim(0), KC = k.dim(1), KH = k.dim(2), KW = k.dim(3);
  detail::require(KC == C, "conv2d: channel axis mismatch (input C=" +
                               std::to_string(C) + ", kernel C=" +
                               std::to_string(KC) + ")");
  detail::require(KH <= H + 2 * pad, "conv2d: kernel height axis exceeds padded input");
  detail::require(KW <= W + 2 * pad, "conv2d: kernel width axis exceeds padded input");
  const int OH = (H + 2 * pad - KH) / stride + 1;
  const int OW = (W + 2 * pad - KW) / stride + 1;

  Tensor<T> y({N, F, OH, OW});
  kernels::conv2d_forward(x.data(), k.data(), y.data(), N, C, H, W, F, KH, KW,
                          stride, pad, OH, OW);
  if (tape && detail::any_grad(x, k)) {
    y.set_requires_grad(true);
    tape->record(y, [=]() mutable {
      const T* dy = y.grad();
      if (x.requires_grad()) {
        kernels::conv2d_backward_input(dy, k.data(), x.grad(), N, C, H, W, F,
                                       KH, KW, stride, pad, OH, OW);
      }
      if (k.requires_grad()) {
        kernels::conv2d_backward_kernel(dy, x.data(), k.grad(), N, C, H, W, F,
                                        KH, KW, stride, pad, OH, OW);
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Fully connected

template <typename T>
Tensor<T> dense(Tape<T>* tape, Tensor<T> x, Tensor<T> w, Tensor<T> b) {
  detail::require(x.ndim() == 2, "dense: input must be [N,D]");
  detail::require(w.ndim() == 2, "dense: weights must be [D,K]");
  detail::require(b.ndim() == 1, "dense: bias must be [K]");
  const int N = x.dim(0), D = x.dim(1), K = w.dim(1);
  detail::require(w.dim(0) == D, "dense: inner axis mismatch (input D=" +
                                     std::to_string(D) + ", weights D=" +
                                     std::to_string(w.dim(0)) + ")");
  detail::require(b.dim(0) == K, "dense: bias axis mismatch");

  Tensor<T> y({N, K});
  kernels::matmul_bias_forward(x.data(), w.data(), b.data(), y.data(), N, D, K);
  if (tape && detail::any_grad(x, w, b)) {
    y.set_requires_grad(true);
    tape->record(y, [=]() mutable {
      const T* dy = y.grad();
      if (x.requires_grad()) {
        kernels::matmul_backward_input(dy, w.data(), x.grad(), N, D, K);
      }
      T* dw = w.requires_grad() ? w.grad() : nullptr;
      T* db = b.requires_grad() ? b.grad() : nullptr;
      if (dw || db) {
        kernels::matmul_backward_params(dy, x.data(), dw, db, N, D, K);
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(Tape<T>* tape, Tensor<T> a, Tensor<T> b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch");
  Tensor<T> y(a.shape());
  const int64_t n = y.numel();
  const T* ap = a.data();
  const T* bp = b.data();
  T* yp = y.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) yp[i] = ap[i] + bp[i];
  if (tape && detail::any_grad(a, b)) {
    y.set_requires_grad(true);
    tape->record(y, [=]() mutable {
      const T* dy = y.grad();
      if (a.requires_grad()) {
        T* da = a.grad();
        for (int64_t i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (b.requires_grad()) {
        T* db = b.grad();
        for (int64_t i = 0; i < n; ++i) db[i] += dy[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> hadamard_multiply(Tape<T>* tape, Tensor<T> a, Tensor<T> b) {
  detail::require(a.shape() == b.shape(), "hadamard_multiply: shape mismatch");
  Tensor<T> y(a.shape());
  const int64_t n = y.numel();
  const T* ap = a.data();
  const T* bp = b.data();
  T* yp = y.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) yp[i] = ap[i] * bp[i];
  if (tape && detail::any_grad(a, b)) {
    y.set_requires_grad(true);
    tape->record(y, [=]() mutable {
      const T* dy = y.grad();
      if (a.requires_grad()) {
        T* da = a.grad();
        for (int64_t i = 0; i < n; ++i) da[i] += dy[i] * bp[i];
      }
      if (b.requires_grad()) {
        T* db = b.grad();
        for (int64_t i = 0; i < n; ++i) db[i] += dy[i] * ap[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, Tensor<T> x) {
  Tensor<T> y(x.shape());
  const int64_t n = y.numel();
  const T* xp = x.data();
  T* yp = y.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) yp[i] = xp[i] > T(0) ? xp[i] : T(0);
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    tape->record(y, [=]() mutable {
      const T* dy = y.grad();
      T* dx = x.grad();
      for (int64_t i = 0; i < n; ++i) {
        if (xp[i] > T(0)) dx[i] += dy[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>* tape, Tensor<T> x) {
  Tensor<T> y(x.shape());
  const int64_t n = y.numel();
  const T* xp = x.data();
  T* yp = y.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    yp[i] = T(1) / (T(1) + std::exp(-xp[i]));
  }
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    tape->record(y, [=]() mutable {
      const T* dy = y.grad();
      T* dx = x.grad();
      for (int64_t i = 0; i < n; ++i) {
        dx[i] += dy[i] * yp[i] * (T(1) - yp[i]);
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Shape / reduction

template <typename T>
Tensor<T> reshape(Tape<T>* tape, Tensor<T> x, std::vector<int> new_shape) {
  detail::require(shape_numel(new_shape) == x.numel(),
                  "reshape: element count mismatch");
  Tensor<T> y = Tensor<T>::from(std::move(new_shape), x.values());
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    const int64_t n = x.numel();
    tape->record(y, [=]() mutable {
      const T* dy = y.grad();
      T* dx = x.grad();
      for (int64_t i = 0; i < n; ++i) dx[i] += dy[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> reduce_sum(Tape<T>* tape, Tensor<T> x, int axis) {
  detail::require(axis >= 0 && axis < x.ndim(), "reduce_sum: axis out of range");
  const auto& sh = x.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sh[i];
  for (int i = axis + 1; i < x.ndim(); ++i) inner *= sh[i];
  const int64_t mid = sh[axis];
  std::vector<int> osh;
  for (int i = 0; i < x.ndim(); ++i) {
    if (i != axis) osh.push_back(sh[i]);
  }
  if (osh.empty()) osh.push_back(1);

  Tensor<T> y(osh);
  const T* xp = x.data();
  T* yp = y.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      T s = T(0);
      for (int64_t m = 0; m < mid; ++m) {
        s += xp[(o * mid + m) * inner + i];
      }
      yp[o * inner + i] = s;
    }
  }
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    tape->record(y, [=]() mutable {
      const T* dy = y.grad();
      T* dx = x.grad();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t m = 0; m < mid; ++m) {
          for (int64_t i = 0; i < inner; ++i) {
            dx[(o * mid + m) * inner + i] += dy[o * inner + i];
          }
        }
      }
    });
  }
  return y;
}

// Scalar sum of all elements.
template <typename T>
Tensor<T> sum_all(Tape<T>* tape, Tensor<T> x) {
  Tensor<T> y({1});
  const int64_t n = x.numel();
  const T* xp = x.data();
  T s = T(0);
  for (int64_t i = 0; i < n; ++i) s += xp[i];
  y.data()[0] = s;
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    tape->record(y, [=]() mutable {
      const T dy = y.grad()[0];
      T* dx = x.grad();
      for (int64_t i = 0; i < n; ++i) dx[i] += dy;
    });
  }
  return y;
}

// L2 norm along `axis`; zero-norm slices get zero gradient.
template <typename T>
Tensor<T> vector_norm(Tape<T>* tape, Tensor<T> x, int axis) {
  detail::require(axis >= 0 && axis < x.ndim(), "vector_norm: axis out of range");
  const auto& sh = x.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sh[i];
  for (int i = axis + 1; i < x.ndim(); ++i) inner *= sh[i];
  const int64_t mid = sh[axis];
  std::vector<int> osh;
  for (int i = 0; i < x.ndim(); ++i) {
    if (i != axis) osh.push_back(sh[i]);
  }
  if (osh.empty()) osh.push_back(1);

  Tensor<T> y(osh);
  const T* xp = x.data();
  T* yp = y.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      T s = T(0);
      for (int64_t m = 0; m < mid; ++m) {
        const T v = xp[(o * mid + m) * inner + i];
        s += v * v;
      }
      yp[o * inner + i] = std::sqrt(s);
    }
  }
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    tape->record(y, [=]() mutable {
      const T* dy = y.grad();
      T* dx = x.grad();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
          const T norm = yp[o * inner + i];
          if (norm <= T(0)) continue;
          const T scale = dy[o * inner + i] / norm;
          for (int64_t m = 0; m < mid; ++m) {
            dx[(o * mid + m) * inner + i] += scale * xp[(o * mid + m) * inner + i];
          }
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
Tensor<T> max_pool2d(Tape<T>* tape, Tensor<T> x, int size = 2, int stride = 2) {
  detail::require(x.ndim() == 4, "max_pool2d: input must be [N,C,H,W]");
  detail::require(size >= 1 && stride >= 1, "max_pool2d: invalid window");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::require(size <= H && size <= W, "max_pool2d: window exceeds input axes");
  const int OH = (H - size) / stride + 1;
  const int OW = (W - size) / stride + 1;

  Tensor<T> y({N, C, OH, OW});
  auto argmax = std::make_shared<std::vector<int64_t>>(
      static_cast<size_t>(y.numel()));
  const T* xp = x.data();
  T* yp = y.data();
  int64_t* am = argmax->data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const int64_t xoff = (static_cast<int64_t>(n) * C + c) * H * W;
      const int64_t yoff = (static_cast<int64_t>(n) * C + c) * OH * OW;
      for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
          int64_t best_idx = xoff + static_cast<int64_t>(oy * stride) * W +
                             ox * stride;
          T best = xp[best_idx];
          for (int ky = 0; ky < size; ++ky) {
            for (int kx = 0; kx < size; ++kx) {
              const int64_t idx = xoff +
                                  static_cast<int64_t>(oy * stride + ky) * W +
                                  (ox * stride + kx);
              if (xp[idx] > best) {
                best = xp[idx];
                best_idx = idx;
              }
            }
          }
          const int64_t yi = yoff + static_cast<int64_t>(oy) * OW + ox;
          yp[yi] = best;
          am[yi] = best_idx;
        }
      }
    }
  }
  if (tape && x.requires_grad()) {
    y.set_requires_grad(true);
    const int64_t yn = y.numel();
    tape->record(y, [=]() mutable {
      const T* dy = y.grad();
      T* dx = x.grad();
      const int64_t* a = argmax->data();
      for (int64_t i = 0; i < yn; ++i) dx[a[i]] += dy[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Capsule mixing: v[nb,k,:] = sum_i x[nb,i,:] (Hadamard) w[i,k,:]

template <typename T>
Tensor<T> hvc_mix(Tape<T>* tape, Tensor<T> x, Tensor<T> w) {
  detail::require(x.ndim() == 3, "hvc_mix: capsules must be [N,n,d]");
  detail::require(w.ndim() == 3, "hvc_mix: weights must be [n,K,d]");
  const int NB = x.dim(0), NC = x.dim(1), D = x.dim(2), K = w.dim(1);
  detail::require(w.dim(0) == NC, "hvc_mix: capsule-count axis mismatch");
  detail::require(w.dim(2) == D, "hvc_mix: capsule-dimension axis mismatch");

  Tensor<T> v({NB, K, D});
  kernels::hvc_mix_forward(x.data(), w.data(), v.data(), NB, NC, K, D);
  if (tape && detail::any_grad(x, w)) {
    v.set_requires_grad(true);
    tape->record(v, [=]() mutable {
      const T* dv = v.grad();
      if (x.requires_grad()) {
        kernels::hvc_mix_backward_input(dv, w.data(), x.grad(), NB, NC, K, D);
      }
      if (w.requires_grad()) {
        kernels::hvc_mix_backward_weights(dv, x.data(), w.grad(), NB, NC, K, D);
      }
    });
  }
  return v;
}

// Per-channel bias over [N,C,H,W].
template <typename T>
Tensor<T> bias_add_channel(Tape<T>* tape, Tensor<T> x, Tensor<T> b) {
  detail::require(x.ndim() == 4, "bias_add_channel: input must be [N,C,H,W]");
  detail::require(b.ndim() == 1 && b.dim(0) == x.dim(1),
                  "bias_add_channel: channel axis mismatch");
  const int N = x.dim(0), C = x.dim(1);
  const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  Tensor<T> y(x.shape());
  const T* xp = x.data();
  const T* bp = b.data();
  T* yp = y.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const int64_t off = (static_cast<int64_t>(n) * C + c) * hw;
      const T bv = bp[c];
      for (int64_t i = 0; i < hw; ++i) yp[off + i] = xp[off + i] + bv;
    }
  }
  if (tape && detail::any_grad(x, b)) {
    y.set_requires_grad(true);
    tape->record(y, [=]() mutable {
      const T* dy = y.grad();
      if (x.requires_grad()) {
        T* dx = x.grad();
        const int64_t n = y.numel();
        for (int64_t i = 0; i < n; ++i) dx[i] += dy[i];
      }
      if (b.requires_grad()) {
        T* db = b.grad();
        for (int c = 0; c < C; ++c) {
          T s = T(0);
          for (int n2 = 0; n2 < N; ++n2) {
            const int64_t off = (static_cast<int64_t>(n2) * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) s += dy[off + i];
          }
          db[c] += s;
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Loss

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>* tape, Tensor<T> logits,
                                const std::vector<int>& labels) {
  detail::require(logits.ndim() == 2, "softmax_cross_entropy: logits must be [N,K]");
  const int N = logits.dim(0), K = logits.dim(1);
  detail::require(static_cast<int>(labels.size()) == N,
                  "softmax_cross_entropy: batch axis mismatch");
  for (int n = 0; n < N; ++n) {
    detail::require(labels[n] >= 0 && labels[n] < K,
                    "softmax_cross_entropy: label out of range at row " +
                        std::to_string(n));
  }
  // Softmax probabilities are kept for the backward pass.
  auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(N) * K);
  const T* lp = logits.data();
  T loss_acc = T(0);
  for (int n = 0; n < N; ++n) {
    const T* row = lp + static_cast<int64_t>(n) * K;
    T* prow = probs->data() + static_cast<int64_t>(n) * K;
    T mx = row[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    T denom = T(0);
    for (int k = 0; k < K; ++k) {
      prow[k] = std::exp(row[k] - mx);
      denom += prow[k];
    }
    const T inv = T(1) / denom;
    for (int k = 0; k < K; ++k) prow[k] *= inv;
    loss_acc += -(row[labels[n]] - mx - std::log(denom));
  }
  Tensor<T> loss = Tensor<T>::scalar(loss_acc / static_cast<T>(N));
  if (tape && logits.requires_grad()) {
    loss.set_requires_grad(true);
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    tape->record(loss, [=]() mutable {
      const T dy = loss.grad()[0];
      T* dl = logits.grad();
      const T scale = dy / static_cast<T>(N);
      for (int n = 0; n < N; ++n) {
        const T* prow = probs->data() + static_cast<int64_t>(n) * K;
        T* drow = dl + static_cast<int64_t>(n) * K;
        for (int k = 0; k < K; ++k) {
          const T onehot = (k == (*labels_copy)[n]) ? T(1) : T(0);
          drow[k] += scale * (prow[k] - onehot);
        }
      }
    });
  }
  return loss;
}

}  // namespace pcblab::ops
