#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "gradcheck.hpp"
#include "pcblab/network.hpp"
#include "pcblab/synthgen.hpp"

using namespace pcblab;
using pcblab::testing::gradcheck;
using pcblab::testing::random_tensor;

namespace {

ModelConfig small_config(HeadKind head, int classes = 2) {
  ModelConfig cfg;
  cfg.head = head;
  cfg.input_size = 32;
  cfg.in_channels = 3;
  cfg.channels = {4, 8};
  cfg.capsule_dim = 4;
  cfg.num_classes = classes;
  return cfg;
}

Dataset tiny_dataset(int classes, int size, uint64_t seed) {
  const auto lib = make_board_library(classes, seed);
  return generate_dataset(lib, size, Rng::mix(seed, 1));
}

std::vector<const LabeledSample*> train_ptrs(const Dataset& ds, size_t limit = 0) {
  std::vector<const LabeledSample*> out;
  for (const auto& s : ds.samples) {
    if (s.split == Split::Train) out.push_back(&s);
    if (limit > 0 && out.size() == limit) break;
  }
  return out;
}

std::vector<const LabeledSample*> test_ptrs(const Dataset& ds) {
  std::vector<const LabeledSample*> out;
  for (const auto& s : ds.samples) {
    if (s.split == Split::Test) out.push_back(&s);
  }
  return out;
}

}  // namespace

TEST_CASE("config validation: capsule divisibility and class count") {
  ModelConfig cfg = small_config(HeadKind::HVC);
  // 8 channels * 8 * 8 = 512 features
  CHECK(cfg.feature_count() == 512);
  cfg.capsule_dim = 4;
  CHECK(cfg.capsule_count() == 128);
  cfg.capsule_dim = 7;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.capsule_dim = 4;
  cfg.num_classes = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("capsule shape arithmetic: 4x4x32 features at d=8 gives 64 capsules") {
  ModelConfig cfg;
  cfg.head = HeadKind::HVC;
  cfg.input_size = 32;
  cfg.channels = {8, 16, 32};
  cfg.capsule_dim = 8;
  CHECK(cfg.spatial_out() == 4);
  CHECK(cfg.feature_count() == 512);
  CHECK(cfg.capsule_count() == 64);
}

TEST_CASE("build_model: same seed gives bitwise-identical parameters") {
  const auto m1 = build_model<double>(small_config(HeadKind::HVC), 77);
  const auto m2 = build_model<double>(small_config(HeadKind::HVC), 77);
  const auto p1 = m1.parameters(), p2 = m2.parameters();
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); ++i) {
    REQUIRE(p1[i].numel() == p2[i].numel());
    for (int64_t j = 0; j < p1[i].numel(); ++j) {
      CHECK(p1[i].data()[j] == p2[i].data()[j]);
    }
  }
}

TEST_CASE("build_model: M1 and M2 share the trunk bitwise for one seed") {
  const auto m1 = build_model<double>(small_config(HeadKind::FullyConnected), 91);
  const auto m2 = build_model<double>(small_config(HeadKind::HVC), 91);
  REQUIRE(m1.conv_kernels.size() == m2.conv_kernels.size());
  for (size_t b = 0; b < m1.conv_kernels.size(); ++b) {
    for (int64_t j = 0; j < m1.conv_kernels[b].numel(); ++j) {
      CHECK(m1.conv_kernels[b].data()[j] == m2.conv_kernels[b].data()[j]);
    }
  }
}

TEST_CASE("parameter counts match the closed form") {
  for (HeadKind head : {HeadKind::FullyConnected, HeadKind::HVC}) {
    const ModelConfig cfg = small_config(head, 5);
    const auto m = build_model<double>(cfg, 3);
    CHECK(m.parameter_count() == closed_form_parameter_count(cfg));
  }
}

TEST_CASE("hvc_head: hand arithmetic with identity nonlinearity") {
  // n=1, d=2, x=(1,2), w_j=(3,4) -> v_j=(3,8), logit 11
  auto x = Tensor<double>::from({1, 1, 2}, {1, 2});
  auto w = Tensor<double>::from({1, 1, 2}, {3, 4});
  auto logits = Model<double>::hvc_head(nullptr, x, w, HvcNonlinearity::Identity);
  CHECK(logits.shape() == std::vector<int>{1, 1});
  CHECK(logits.item() == doctest::Approx(11.0));
}

TEST_CASE("hvc_head: all-zero capsules give equal logits") {
  auto x = Tensor<double>::from({1, 6, 4}, std::vector<double>(24, 0.0));
  Rng rng(5);
  auto w = random_tensor({6, 3, 4}, rng, false);
  auto logits = Model<double>::hvc_head(nullptr, x, w, HvcNonlinearity::Sigmoid);
  CHECK(logits.data()[0] == doctest::Approx(logits.data()[1]).epsilon(1e-12));
  CHECK(logits.data()[1] == doctest::Approx(logits.data()[2]).epsilon(1e-12));
}

TEST_CASE("hvc_head: capsule order permutation leaves logits unchanged") {
  Rng rng(7);
  auto x = random_tensor({2, 5, 3}, rng, false);
  auto w = random_tensor({5, 4, 3}, rng, false);
  auto base = Model<double>::hvc_head(nullptr, x, w);
  // permute capsule axis of x and w together
  const std::vector<int> perm{3, 0, 4, 1, 2};
  auto xp = Tensor<double>({2, 5, 3});
  auto wp = Tensor<double>({5, 4, 3});
  for (int n = 0; n < 2; ++n) {
    for (int i = 0; i < 5; ++i) {
      for (int d = 0; d < 3; ++d) {
        xp.data()[(n * 5 + i) * 3 + d] = x.data()[(n * 5 + perm[i]) * 3 + d];
      }
    }
  }
  for (int i = 0; i < 5; ++i) {
    for (int k = 0; k < 4; ++k) {
      for (int d = 0; d < 3; ++d) {
        wp.data()[(i * 4 + k) * 3 + d] = w.data()[(perm[i] * 4 + k) * 3 + d];
      }
    }
  }
  auto permuted = Model<double>::hvc_head(nullptr, xp, wp);
  for (int64_t i = 0; i < base.numel(); ++i) {
    CHECK(std::abs(base.data()[i] - permuted.data()[i]) <= 1e-12);
  }
}

TEST_CASE("hvc_head gradient matches finite differences") {
  Rng rng(11);
  auto x = random_tensor({2, 4, 3}, rng);
  auto w = random_tensor({4, 3, 3}, rng);
  auto res = gradcheck({x, w}, [&](Tape<double>* t) {
    auto logits = Model<double>::hvc_head(t, x, w);
    return ops::softmax_cross_entropy(t, logits, {1, 2});
  });
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("full models: end-to-end gradients match finite differences") {
  ModelConfig cfg;
  cfg.input_size = 16;
  cfg.in_channels = 2;
  cfg.channels = {3, 4};
  cfg.capsule_dim = 4;
  cfg.num_classes = 3;
  Rng rng(13);
  for (HeadKind head : {HeadKind::FullyConnected, HeadKind::HVC}) {
    cfg.head = head;
    auto model = build_model<double>(cfg, 17);
    auto batch = random_tensor({2, 2, 16, 16}, rng, false, 0.0, 1.0);
    const std::vector<int> labels{0, 2};
    auto res = gradcheck(model.parameters(), [&](Tape<double>* t) {
      return ops::softmax_cross_entropy(t, model.forward(t, batch), labels);
    });
    CHECK(res.max_rel_err <= 1e-4);
  }
}

TEST_CASE("train: epochs=0 returns no metrics and leaves the model unchanged") {
  const Dataset ds = tiny_dataset(2, 32, 23);
  auto model = build_model<float>(small_config(HeadKind::HVC), 29);
  const auto before = model.parameters();
  std::vector<std::vector<float>> snap;
  for (const auto& p : before) snap.push_back(p.values());
  TrainOptions<float> opts;
  opts.epochs = 0;
  opts.seed = 31;
  const auto metrics = train(model, train_ptrs(ds, 64), opts);
  CHECK(metrics.empty());
  const auto after = model.parameters();
  for (size_t i = 0; i < after.size(); ++i) {
    CHECK(after[i].values() == snap[i]);
  }
}

TEST_CASE("train rejects empty datasets and size mismatches") {
  auto model = build_model<float>(small_config(HeadKind::HVC), 29);
  TrainOptions<float> opts;
  CHECK_THROWS_AS(train(model, {}, opts), std::invalid_argument);
  const Dataset ds = tiny_dataset(2, 16, 37);
  CHECK_THROWS_AS(train(model, train_ptrs(ds, 8), opts), std::invalid_argument);
}

TEST_CASE("train determinism: identical seeds give identical metric traces") {
  const Dataset ds = tiny_dataset(2, 32, 41);
  TrainOptions<float> opts;
  opts.epochs = 2;
  opts.seed = 43;
  auto m1 = build_model<float>(small_config(HeadKind::HVC), 47);
  auto m2 = build_model<float>(small_config(HeadKind::HVC), 47);
  const auto tr = train_ptrs(ds, 96);
  const auto a = train(m1, tr, opts);
  const auto b = train(m2, tr, opts);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].mean_loss == b[i].mean_loss);
    CHECK(a[i].train_accuracy == b[i].train_accuracy);
  }
}

TEST_CASE("train: loss strictly decreases over the first 5 steps (pinned seed)") {
  const Dataset ds = tiny_dataset(2, 32, 53);
  const auto tr = train_ptrs(ds, 32);  // one batch per epoch at batch_size 32
  auto model = build_model<float>(small_config(HeadKind::HVC), 59);
  TrainOptions<float> opts;
  opts.epochs = 5;
  opts.batch_size = 32;
  opts.seed = 61;
  // keep the batch content fixed across epochs: translation off
  opts.policy.translation_bound = 0.0;
  const auto metrics = train(model, tr, opts);
  REQUIRE(metrics.size() == 5);
  for (size_t i = 1; i < metrics.size(); ++i) {
    CHECK(metrics[i].mean_loss < metrics[i - 1].mean_loss);
  }
}

TEST_CASE("train smoke run: 2 classes reach high training accuracy") {
  const Dataset ds = tiny_dataset(2, 32, 67);
  auto tr = train_ptrs(ds);
  tr.resize(100);
  auto model = build_model<float>(small_config(HeadKind::HVC), 71);
  TrainOptions<float> opts;
  opts.epochs = 20;
  opts.seed = 73;
  const auto metrics = train(model, tr, opts);
  CHECK(metrics.back().train_accuracy >= 0.95);
}

TEST_CASE("evaluate: accuracy, confusion row sums, determinism, errors") {
  const Dataset ds = tiny_dataset(2, 32, 79);
  auto model = build_model<float>(small_config(HeadKind::HVC), 83);
  const auto te = test_ptrs(ds);
  CHECK_THROWS_AS(evaluate(model, {}), std::invalid_argument);
  const EvalResult a = evaluate(model, te);
  const EvalResult b = evaluate(model, te);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.confusion == b.confusion);
  // confusion row sums recount the per-class test sets
  for (int c = 0; c < 2; ++c) {
    int64_t row = 0;
    for (int k = 0; k < 2; ++k) row += a.at(c, k);
    int64_t expect = 0;
    for (const auto* s : te) {
      if (s->class_id == c) ++expect;
    }
    CHECK(row == expect);
  }
  int64_t diag = 0;
  for (int c = 0; c < 2; ++c) diag += a.at(c, c);
  CHECK(a.accuracy == doctest::Approx(static_cast<double>(diag) / te.size()));
}

TEST_CASE("evaluate: constant-prediction model scores 1/K on a balanced set") {
  const Dataset ds = tiny_dataset(2, 32, 89);
  auto model = build_model<float>(small_config(HeadKind::HVC), 97);
  // zero head weights: logits all equal -> argmax picks class 0 always
  auto w = model.head_weights;
  std::fill(w.values().begin(), w.values().end(), 0.0f);
  const EvalResult r = evaluate(model, test_ptrs(ds));
  CHECK(r.accuracy == doctest::Approx(0.5));
}

TEST_CASE("checkpoint: save/load round-trips bitwise") {
  namespace fs = std::filesystem;
  auto model = build_model<float>(small_config(HeadKind::HVC, 3), 101);
  const fs::path path = fs::temp_directory_path() / "pcblab_ckpt.bin";
  save_model(model, path.string());
  const auto loaded = load_model<float>(path.string());
  const auto p1 = model.parameters(), p2 = loaded.parameters();
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].values() == p2[i].values());
  }
  CHECK(loaded.config.head == model.config.head);
  CHECK(loaded.config.channels == model.config.channels);
  // a second save of the loaded model is byte-identical
  const fs::path path2 = fs::temp_directory_path() / "pcblab_ckpt2.bin";
  save_model(loaded, path2.string());
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::vector<char> b1((std::istreambuf_iterator<char>(f1)),
                             std::istreambuf_iterator<char>());
  const std::vector<char> b2((std::istreambuf_iterator<char>(f2)),
                             std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK_THROWS_AS(load_model<double>(path.string()), std::runtime_error);
  fs::remove(path);
  fs::remove(path2);
}
