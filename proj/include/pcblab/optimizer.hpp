#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pcblab/tensor.hpp"

namespace pcblab {

template <typename T>
struct AdamConfig {
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

// First/second moment estimates, one pair per parameter, plus the shared
// step counter.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  int64_t t = 0;

  static AdamState for_params(const std::vector<Tensor<T>>& params) {
    AdamState st;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const auto& p : params) {
      st.m.emplace_back(static_cast<size_t>(p.numel()), T(0));
      st.v.emplace_back(static_cast<size_t>(p.numel()), T(0));
    }
    return st;
  }
};

// One Adam update with bias correction. Parameters without an allocated
// gradient are treated as zero-gradient (moments decay, value unchanged
// only when moments are also zero).
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state,
               const AdamConfig<T>& cfg = {}) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: state size does not match params");
  }
  state.t += 1;
  const T bc1 = T(1) - std::pow(cfg.beta1, static_cast<T>(state.t));
  const T bc2 = T(1) - std::pow(cfg.beta2, static_cast<T>(state.t));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>& p = params[pi];
    if (state.m[pi].size() != static_cast<size_t>(p.numel())) {
      throw std::invalid_argument("adam_step: state shape mismatch at param " +
                                  std::to_string(pi));
    }
    const std::vector<T>& g = p.grad_values();
    T* m = state.m[pi].data();
    T* v = state.v[pi].data();
    T* w = p.data();
    const int64_t n = p.numel();
    const bool has_g = !g.empty();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
      const T gi = has_g ? g[i] : T(0);
      m[i] = cfg.beta1 * m[i] + (T(1) - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (T(1) - cfg.beta2) * gi * gi;
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace pcblab
