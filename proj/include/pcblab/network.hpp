#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcblab/geometry.hpp"
#include "pcblab/image.hpp"
#include "pcblab/ops.hpp"
#include "pcblab/optimizer.hpp"
#include "pcblab/rng.hpp"
#include "pcblab/synthgen.hpp"
#include "pcblab/tensor.hpp"

namespace pcblab {

enum class HeadKind : int { FullyConnected = 0, HVC = 1 };
enum class HvcNonlinearity : int { Sigmoid = 0, Identity = 1 };

// M1 and M2 share the convolutional trunk (3x3 convs, each block followed by
// relu and 2x2 max-pool) and differ only in the head.
struct ModelConfig {
  HeadKind head = HeadKind::HVC;
  int input_size = 64;
  int in_channels = 3;
  std::vector<int> channels = {8, 16, 32};
  int capsule_dim = 8;  // HVC only
  int num_classes = 8;
  HvcNonlinearity hvc_nonlinearity = HvcNonlinearity::Sigmoid;

  int spatial_out() const {
    int s = input_size;
    for (size_t i = 0; i < channels.size(); ++i) s /= 2;
    return s;
  }
  int feature_count() const {
    return channels.empty() ? input_size * input_size * in_channels
                            : channels.back() * spatial_out() * spatial_out();
  }
  int capsule_count() const { return feature_count() / capsule_dim; }

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("config: num_classes must be >= 2");
    if (channels.empty()) throw std::invalid_argument("config: need at least one conv block");
    if (input_size % (1 << channels.size()) != 0) {
      throw std::invalid_argument("config: input_size must be divisible by 2^blocks");
    }
    if (head == HeadKind::HVC && feature_count() % capsule_dim != 0) {
      throw std::invalid_argument(
          "config: feature count " + std::to_string(feature_count()) +
          " is not divisible by capsule_dim " + std::to_string(capsule_dim));
    }
  }
};

inline int64_t closed_form_parameter_count(const ModelConfig& cfg) {
  int64_t n = 0;
  int prev = cfg.in_channels;
  for (int c : cfg.channels) {
    n += static_cast<int64_t>(c) * prev * 9 + c;  // kernel + channel bias
    prev = c;
  }
  if (cfg.head == HeadKind::FullyConnected) {
    n += static_cast<int64_t>(cfg.feature_count()) * cfg.num_classes + cfg.num_classes;
  } else {
    n += static_cast<int64_t>(cfg.capsule_count()) * cfg.num_classes * cfg.capsule_dim;
  }
  return n;
}

template <typename T>
struct Model {
  ModelConfig config;
  std::vector<Tensor<T>> conv_kernels;
  std::vector<Tensor<T>> conv_biases;
  Tensor<T> head_weights;  // FC: [D,K]; HVC: [n,K,d]
  Tensor<T> head_bias;     // FC only

  // Declaration order (also the checkpoint order).
  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> ps;
    for (size_t i = 0; i < conv_kernels.size(); ++i) {
      ps.push_back(conv_kernels[i]);
      ps.push_back(conv_biases[i]);
    }
    ps.push_back(head_weights);
    if (config.head == HeadKind::FullyConnected) ps.push_back(head_bias);
    return ps;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.zero_grad();
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
  }

  // batch: [N, C, S, S] -> logits [N, K]
  Tensor<T> forward(Tape<T>* tape, Tensor<T> batch) const {
    Tensor<T> x = batch;
    for (size_t i = 0; i < conv_kernels.size(); ++i) {
      x = ops::conv2d(tape, x, conv_kernels[i], 1, 1);
      x = ops::bias_add_channel(tape, x, conv_biases[i]);
      x = ops::relu(tape, x);
      x = ops::max_pool2d(tape, x, 2, 2);
    }
    const int n = batch.dim(0);
    x = ops::reshape(tape, x, {n, config.feature_count()});
    if (config.head == HeadKind::FullyConnected) {
      return ops::dense(tape, x, head_weights, head_bias);
    }
    Tensor<T> caps = ops::reshape(tape, x, {n, config.capsule_count(), config.capsule_dim});
    return hvc_head(tape, caps, head_weights, config.hvc_nonlinearity);
  }

  // capsules: [N, n, d], weights: [n, K, d] -> logits [N, K]. Per class j the
  // output capsule is v_j = sum_i x_i (Hadamard) w_ij, sharing the input
  // capsule dimension; the logit reduces v_j through a componentwise
  // nonlinearity and a sum over the d components.
  static Tensor<T> hvc_head(Tape<T>* tape, Tensor<T> capsules, Tensor<T> weights,
                            HvcNonlinearity nl = HvcNonlinearity::Sigmoid) {
    Tensor<T> v = ops::hvc_mix(tape, capsules, weights);
    if (nl == HvcNonlinearity::Sigmoid) v = ops::sigmoid(tape, v);
    return ops::reduce_sum(tape, v, 2);
  }
};

// He-style uniform init, deterministic per seed. The trunk and the head draw
// from separate child streams, so M1 and M2 built from the same seed share
// bitwise-identical trunk parameters.
template <typename T>
Model<T> build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model<T> m;
  m.config = cfg;
  Rng trunk_rng = Rng(seed).split(0);
  Rng head_rng = Rng(seed).split(1);

  auto he_fill = [](Tensor<T>& t, double fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / fan_in);
    T* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) {
      p[i] = static_cast<T>(rng.uniform(-limit, limit));
    }
  };

  int prev = cfg.in_channels;
  for (int c : cfg.channels) {
    Tensor<T> k({c, prev, 3, 3}, true);
    he_fill(k, prev * 9.0, trunk_rng);
    Tensor<T> b({c}, true);  // zero-init
    m.conv_kernels.push_back(k);
    m.conv_biases.push_back(b);
    prev = c;
  }
  if (cfg.head == HeadKind::FullyConnected) {
    m.head_weights = Tensor<T>({cfg.feature_count(), cfg.num_classes}, true);
    he_fill(m.head_weights, cfg.feature_count(), head_rng);
    m.head_bias = Tensor<T>({cfg.num_classes}, true);
  } else {
    m.head_weights =
        Tensor<T>({cfg.capsule_count(), cfg.num_classes, cfg.capsule_dim}, true);
    he_fill(m.head_weights, cfg.capsule_count(), head_rng);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Training / evaluation

struct EpochMetrics {
  int epoch = 0;
  double mean_loss = 0;
  double train_accuracy = 0;
};

template <typename T>
struct TrainOptions {
  int epochs = 30;
  int batch_size = 32;
  uint64_t seed = 0;
  AugmentPolicy policy = AugmentPolicy::defaults();
  AdamConfig<T> adam{};
};

namespace detail {

// Augment (translation jitter always; rotation/perspective per policy) and
// pack one sample into row `n` of a [N,C,S,S] batch.
template <typename T>
void pack_sample(const LabeledSample& s, const AugmentPolicy& policy, Rng& rng,
                 Tensor<T>& batch, int n) {
  const Image img = dequantize(s.image);
  const AugmentDraw draw = sample_augmentation(s.rotation_label, s.perspective.ring,
                                               policy, rng, img.w, img.h);
  const Image warped = warp(img, augmentation_homography(draw, img.w, img.h),
                            policy.fill_value);
  const int c = warped.c, hw = warped.h * warped.w;
  T* dst = batch.data() + static_cast<int64_t>(n) * c * hw;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < warped.h; ++y) {
      for (int x = 0; x < warped.w; ++x) {
        dst[ch * hw + y * warped.w + x] = static_cast<T>(warped.at(y, x, ch));
      }
    }
  }
}

template <typename T>
void pack_plain(const LabeledSample& s, Tensor<T>& batch, int n) {
  const int c = s.image.c, hw = s.image.h * s.image.w;
  T* dst = batch.data() + static_cast<int64_t>(n) * c * hw;
  const float scale = 1.0f / 255.0f;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < s.image.h; ++y) {
      for (int x = 0; x < s.image.w; ++x) {
        dst[ch * hw + y * s.image.w + x] = static_cast<T>(
            s.image.pix[(static_cast<size_t>(y) * s.image.w + x) * c + ch] * scale);
      }
    }
  }
}

}  // namespace detail

template <typename T>
std::vector<EpochMetrics> train(Model<T>& model,
                                const std::vector<const LabeledSample*>& samples,
                                const TrainOptions<T>& opts) {
  if (samples.empty()) throw std::invalid_argument("train: empty dataset");
  for (const auto* s : samples) {
    if (s->image.w != model.config.input_size || s->image.h != model.config.input_size) {
      throw std::invalid_argument("train: image size does not match config input_size");
    }
  }
  std::vector<EpochMetrics> metrics;
  std::vector<Tensor<T>> params = model.parameters();
  AdamState<T> adam = AdamState<T>::for_params(params);
  const Rng master(opts.seed);
  std::vector<int> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  const int S = model.config.input_size;
  const int C = model.config.in_channels;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    Rng shuffle_rng = master.split(2 * static_cast<uint64_t>(epoch));
    Rng aug_rng = master.split(2 * static_cast<uint64_t>(epoch) + 1);
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
    }
    double loss_sum = 0;
    int64_t correct = 0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += opts.batch_size) {
      const int n = static_cast<int>(
          std::min(order.size() - start, static_cast<size_t>(opts.batch_size)));
      Tensor<T> batch({n, C, S, S});
      std::vector<int> labels(static_cast<size_t>(n));
      for (int bi = 0; bi < n; ++bi) {
        const LabeledSample& s = *samples[static_cast<size_t>(order[start + bi])];
        detail::pack_sample(s, opts.policy, aug_rng, batch, bi);
        labels[static_cast<size_t>(bi)] = s.class_id;
      }
      Tape<T> tape;
      Tensor<T> logits = model.forward(&tape, batch);
      Tensor<T> loss = ops::softmax_cross_entropy(&tape, logits, labels);
      if (!loss.all_finite()) {
        throw std::runtime_error("train: non-finite loss at epoch " +
                                 std::to_string(epoch));
      }
      model.zero_grad();
      tape.backward(loss);
      adam_step(params, adam, opts.adam);

      loss_sum += static_cast<double>(loss.item());
      ++batches;
      const T* lp = logits.data();
      const int K = model.config.num_classes;
      for (int bi = 0; bi < n; ++bi) {
        int best = 0;
        for (int k = 1; k < K; ++k) {
          if (lp[bi * K + k] > lp[bi * K + best]) best = k;
        }
        if (best == labels[static_cast<size_t>(bi)]) ++correct;
      }
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.mean_loss = batches > 0 ? loss_sum / batches : 0.0;
    em.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    metrics.push_back(em);
  }
  return metrics;
}

struct EvalResult {
  double accuracy = 0;
  int num_classes = 0;
  std::vector<int64_t> confusion;  // [true * K + predicted]

  int64_t at(int truth, int pred) const {
    return confusion[static_cast<size_t>(truth) * num_classes + pred];
  }
};

// Deterministic and augmentation-free.
template <typename T>
EvalResult evaluate(const Model<T>& model,
                    const std::vector<const LabeledSample*>& samples,
                    int batch_size = 64) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty test set");
  const int K = model.config.num_classes;
  EvalResult res;
  res.num_classes = K;
  res.confusion.assign(static_cast<size_t>(K) * K, 0);
  const int S = model.config.input_size;
  const int C = model.config.in_channels;
  int64_t correct = 0;
  for (size_t start = 0; start < samples.size(); start += batch_size) {
    const int n = static_cast<int>(
        std::min(samples.size() - start, static_cast<size_t>(batch_size)));
    Tensor<T> batch({n, C, S, S});
    for (int bi = 0; bi < n; ++bi) {
      detail::pack_plain(*samples[start + bi], batch, bi);
    }
    Tensor<T> logits = model.forward(nullptr, batch);
    const T* lp = logits.data();
    for (int bi = 0; bi < n; ++bi) {
      int best = 0;
      for (int k = 1; k < K; ++k) {
        if (lp[bi * K + k] > lp[bi * K + best]) best = k;
      }
      const int truth = samples[start + bi]->class_id;
      res.confusion[static_cast<size_t>(truth) * K + best]++;
      if (best == truth) ++correct;
    }
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints: little-endian flat file, header then parameter arrays in
// declaration order; load/save round-trips bitwise.

inline constexpr uint32_t kCheckpointMagic = 0x50434243;  // "PCBC"

template <typename T>
void save_model(const Model<T>& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_model: cannot open " + path);
  auto put_u32 = [&f](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  put_u32(kCheckpointMagic);
  put_u32(1);  // version
  put_u32(static_cast<uint32_t>(sizeof(T)));
  const ModelConfig& c = model.config;
  put_u32(static_cast<uint32_t>(c.head));
  put_u32(static_cast<uint32_t>(c.input_size));
  put_u32(static_cast<uint32_t>(c.in_channels));
  put_u32(static_cast<uint32_t>(c.channels.size()));
  for (int ch : c.channels) put_u32(static_cast<uint32_t>(ch));
  put_u32(static_cast<uint32_t>(c.capsule_dim));
  put_u32(static_cast<uint32_t>(c.num_classes));
  put_u32(static_cast<uint32_t>(c.hvc_nonlinearity));
  for (const auto& p : model.parameters()) {
    const uint64_t count = static_cast<uint64_t>(p.numel());
    f.write(reinterpret_cast<const char*>(&count), 8);
    f.write(reinterpret_cast<const char*>(p.data()),
            static_cast<std::streamsize>(count * sizeof(T)));
  }
  if (!f) throw std::runtime_error("save_model: write failed for " + path);
}

template <typename T>
Model<T> load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_model: cannot open " + path);
  auto get_u32 = [&f, &path]() {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    if (!f) throw std::runtime_error("load_model: truncated header in " + path);
    return v;
  };
  if (get_u32() != kCheckpointMagic) {
    throw std::runtime_error("load_model: bad magic in " + path);
  }
  if (get_u32() != 1) throw std::runtime_error("load_model: unsupported version");
  if (get_u32() != sizeof(T)) {
    throw std::runtime_error("load_model: scalar width mismatch");
  }
  ModelConfig c;
  c.head = static_cast<HeadKind>(get_u32());
  c.input_size = static_cast<int>(get_u32());
  c.in_channels = static_cast<int>(get_u32());
  const uint32_t nblocks = get_u32();
  c.channels.clear();
  for (uint32_t i = 0; i < nblocks; ++i) c.channels.push_back(static_cast<int>(get_u32()));
  c.capsule_dim = static_cast<int>(get_u32());
  c.num_classes = static_cast<int>(get_u32());
  c.hvc_nonlinearity = static_cast<HvcNonlinearity>(get_u32());

  Model<T> m = build_model<T>(c, 0);
  for (auto& p : m.parameters()) {
    uint64_t count = 0;
    f.read(reinterpret_cast<char*>(&count), 8);
    if (!f || count != static_cast<uint64_t>(p.numel())) {
      throw std::runtime_error("load_model: parameter count mismatch");
    }
    f.read(reinterpret_cast<char*>(p.data()),
           static_cast<std::streamsize>(count * sizeof(T)));
    if (!f) throw std::runtime_error("load_model: truncated parameters");
  }
  return m;
}

}  // namespace pcblab
