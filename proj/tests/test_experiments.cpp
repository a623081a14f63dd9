#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <stdexcept>

#include "pcblab/experiments.hpp"
#include "reference.hpp"

using namespace pcblab;

namespace {

Dataset tiny_dataset(int classes, int size, uint64_t seed) {
  const auto lib = make_board_library(classes, seed);
  return generate_dataset(lib, size, Rng::mix(seed, 1));
}

// one catalog row flattened to the paper's column layout:
// LW, LS, RS, RW, NegFar, NegNear, PosNear, PosFar
std::array<int, 8> checkmarks(const ExperimentSpec& s) {
  return {s.rotation_included(RotationLabel::LeftWide) ? 1 : 0,
          s.rotation_included(RotationLabel::LeftShallow) ? 1 : 0,
          s.rotation_included(RotationLabel::RightShallow) ? 1 : 0,
          s.rotation_included(RotationLabel::RightWide) ? 1 : 0,
          s.ring_included(Ring::NegativeFar) ? 1 : 0,
          s.ring_included(Ring::NegativeNear) ? 1 : 0,
          s.ring_included(Ring::PositiveNear) ? 1 : 0,
          s.ring_included(Ring::PositiveFar) ? 1 : 0};
}

}  // namespace

TEST_CASE("catalog reproduces the exclusion design matrix row-for-row") {
  // hard-coded expectation: LW LS RS RW | NF NN PN PF
  const std::vector<std::pair<std::string, std::array<int, 8>>> expected = {
      {"E1", {1, 1, 1, 1, 1, 1, 1, 1}},
      {"E2", {1, 1, 1, 1, 0, 1, 1, 0}},
      {"E3", {1, 1, 1, 1, 0, 0, 0, 0}},
      {"E4", {0, 1, 1, 0, 1, 1, 1, 1}},
      {"E5", {0, 1, 1, 0, 0, 1, 1, 0}},
      {"E6", {0, 1, 1, 0, 0, 0, 0, 0}},
      {"E7", {0, 0, 0, 0, 1, 1, 1, 1}},
      {"E8", {0, 0, 0, 0, 0, 1, 1, 0}},
      {"E9", {0, 0, 0, 0, 0, 0, 0, 0}},
  };
  for (const auto& [id, marks] : expected) {
    const ExperimentSpec& s = find_spec(id);
    CHECK(checkmarks(s) == marks);
    CHECK_FALSE(s.augment_rotations);
    CHECK_FALSE(s.augment_perspectives);
    // neutral rotation and ring are always included
    CHECK(s.rotation_included(RotationLabel::Neutral));
    CHECK(s.ring_included(Ring::Neutral));
  }
}

TEST_CASE("catalog reproduces the augmentation design matrix row-for-row") {
  // augment rotations, augment perspectives, then the 8 inclusion columns
  const std::vector<std::tuple<std::string, int, int, std::array<int, 8>>> expected = {
      {"A1", 0, 1, {1, 1, 1, 1, 0, 1, 1, 0}},
      {"A2", 0, 1, {1, 1, 1, 1, 0, 0, 0, 0}},
      {"A3", 1, 0, {0, 1, 1, 0, 1, 1, 1, 1}},
      {"A4", 1, 1, {0, 1, 1, 0, 0, 1, 1, 0}},
      {"A5", 1, 0, {0, 1, 1, 0, 0, 1, 1, 0}},
      {"A6", 0, 1, {0, 1, 1, 0, 0, 1, 1, 0}},
      {"A7", 1, 1, {0, 1, 1, 0, 0, 0, 0, 0}},
      {"A8", 1, 0, {0, 1, 1, 0, 0, 0, 0, 0}},
      {"A9", 0, 1, {0, 1, 1, 0, 0, 0, 0, 0}},
      {"A10", 1, 0, {0, 0, 0, 0, 1, 1, 1, 1}},
      {"A11", 1, 1, {0, 0, 0, 0, 0, 1, 1, 0}},
      {"A12", 1, 0, {0, 0, 0, 0, 0, 1, 1, 0}},
      {"A13", 0, 1, {0, 0, 0, 0, 0, 1, 1, 0}},
      {"A14", 1, 1, {0, 0, 0, 0, 0, 0, 0, 0}},
      {"A15", 1, 0, {0, 0, 0, 0, 0, 0, 0, 0}},
      {"A16", 0, 1, {0, 0, 0, 0, 0, 0, 0, 0}},
  };
  for (const auto& [id, ar, ap, marks] : expected) {
    const ExperimentSpec& s = find_spec(id);
    CHECK(s.augment_rotations == (ar == 1));
    CHECK(s.augment_perspectives == (ap == 1));
    CHECK(checkmarks(s) == marks);
  }
  const ExperimentSpec& all = find_spec("ALL");
  CHECK(all.augment_rotations);
  CHECK(all.augment_perspectives);
  CHECK(checkmarks(all) == std::array<int, 8>{1, 1, 1, 1, 1, 1, 1, 1});
}

TEST_CASE("unknown experiment id names the valid ids") {
  CHECK_THROWS_WITH_AS(find_spec("E10"), doctest::Contains("E9"),
                       std::invalid_argument);
  CHECK(catalog_ids().size() == 26);
}

TEST_CASE("e-vs-a grouping matches the matched-subset table") {
  bool found = false;
  for (const auto& [eid, aids] : e_vs_a_grouping()) {
    if (eid == "E5") {
      CHECK(aids == std::vector<std::string>{"A4", "A5", "A6"});
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("build_split per-class counts match the grid arithmetic") {
  const Dataset ds = tiny_dataset(2, 32, 3);
  const std::vector<std::pair<std::string, int>> expected = {
      {"E1", 500}, {"E2", 180}, {"E3", 20}, {"E4", 300}, {"E5", 108},
      {"E6", 12},  {"E7", 100}, {"E8", 36}, {"E9", 4},   {"ALL", 500},
  };
  for (const auto& [id, per_class] : expected) {
    const auto split = build_split(ds, find_spec(id));
    CHECK(static_cast<int>(split.size()) == 2 * per_class);
    for (const auto* s : split) CHECK(s->split == Split::Train);
  }
}

TEST_CASE("split monotonicity: E1 contains every other exclusion split") {
  const Dataset ds = tiny_dataset(2, 32, 5);
  const auto e1 = build_split(ds, find_spec("E1"));
  const std::set<const LabeledSample*> e1_set(e1.begin(), e1.end());
  for (int i = 2; i <= 9; ++i) {
    const auto sub = build_split(ds, find_spec("E" + std::to_string(i)));
    for (const auto* s : sub) CHECK(e1_set.count(s) == 1);
  }
}

TEST_CASE("test split is identical for every experiment (same hash)") {
  const Dataset ds = tiny_dataset(2, 32, 7);
  const auto t1 = test_split(ds);
  CHECK(t1.size() == 250);
  const uint64_t h = dataset_test_hash(ds);
  // build_split never touches test samples
  for (const auto& id : {"E9", "A16", "ALL"}) {
    build_split(ds, find_spec(id));
    CHECK(dataset_test_hash(ds) == h);
  }
}

TEST_CASE("policy_for: excluded-category pools and flags") {
  const AugmentPolicy e5 = policy_for(find_spec("E5"));
  CHECK_FALSE(e5.simulate_rotations);
  CHECK_FALSE(e5.simulate_perspectives);

  const AugmentPolicy a5 = policy_for(find_spec("A5"));
  CHECK(a5.simulate_rotations);
  CHECK_FALSE(a5.simulate_perspectives);
  CHECK(a5.rotation_sim_pool ==
        std::vector<RotationLabel>{RotationLabel::LeftWide, RotationLabel::RightWide});

  const AugmentPolicy a13 = policy_for(find_spec("A13"));
  CHECK(a13.simulate_perspectives);
  CHECK(a13.ring_sim_pool ==
        std::vector<Ring>{Ring::NegativeFar, Ring::PositiveFar});

  // nothing excluded: pools stay empty, draws use the sample's own label
  const AugmentPolicy all = policy_for(find_spec("ALL"));
  CHECK(all.simulate_rotations);
  CHECK(all.simulate_perspectives);
  CHECK(all.rotation_sim_pool.empty());
  CHECK(all.ring_sim_pool.empty());
}

// ---------------------------------------------------------------------------
// Welch's t-test

TEST_CASE("welch: identical samples give p = 1") {
  const std::vector<double> a{0.5, 0.5, 0.6};
  const WelchResult r = welch_t_test(a, a);
  CHECK(r.p == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("welch: textbook pair matches the quadrature oracle to 1e-9") {
  const std::vector<double> a{0.10, 0.11, 0.12, 0.10, 0.11};
  const std::vector<double> b{0.30, 0.29, 0.31, 0.30, 0.30};
  const WelchResult r = welch_t_test(a, b);
  const double oracle = ref::student_t_two_sided_p_quadrature(r.t, r.df);
  CHECK(std::abs(r.p - oracle) <= 1e-9);
  CHECK(r.p < 1e-6);  // clearly separated samples
}

TEST_CASE("welch: 20 random pairs match the quadrature oracle to 1e-9") {
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> a, b;
    const int na = 3 + static_cast<int>(rng.uniform_index(6));
    const int nb = 3 + static_cast<int>(rng.uniform_index(6));
    for (int j = 0; j < na; ++j) a.push_back(rng.normal(0.5, 0.1));
    for (int j = 0; j < nb; ++j) b.push_back(rng.normal(0.55, 0.15));
    const WelchResult r = welch_t_test(a, b);
    const double oracle = ref::student_t_two_sided_p_quadrature(r.t, r.df);
    CHECK(std::abs(r.p - oracle) <= 1e-9);
  }
}

TEST_CASE("welch: symmetry and shift invariance to 1e-12") {
  Rng rng(13);
  for (int i = 0; i < 10; ++i) {
    std::vector<double> a, b;
    for (int j = 0; j < 5; ++j) a.push_back(rng.normal(0.4, 0.05));
    for (int j = 0; j < 7; ++j) b.push_back(rng.normal(0.6, 0.08));
    const double pab = welch_t_test(a, b).p;
    const double pba = welch_t_test(b, a).p;
    CHECK(std::abs(pab - pba) <= 1e-12);
    std::vector<double> as = a, bs = b;
    for (double& v : as) v += 0.173;
    for (double& v : bs) v += 0.173;
    CHECK(std::abs(welch_t_test(as, bs).p - pab) <= 1e-12);
  }
}

TEST_CASE("welch: zero-variance handling") {
  // one sample with zero variance still has a well-defined statistic
  const std::vector<double> constant{0.923, 0.923, 0.923, 0.923, 0.923};
  const std::vector<double> spread{0.91, 0.93, 0.92, 0.94, 0.92};
  const WelchResult r1 = welch_t_test(constant, spread);
  CHECK(std::isfinite(r1.p));
  CHECK_FALSE(r1.degenerate);

  // both zero variance: equal means -> p=1; different -> p->0 sentinel
  const WelchResult r2 = welch_t_test(constant, constant);
  CHECK(r2.p == 1.0);
  CHECK(r2.degenerate);
  const std::vector<double> other{0.5, 0.5, 0.5};
  const WelchResult r3 = welch_t_test(constant, other);
  CHECK(r3.p == 0.0);
  CHECK(r3.degenerate);

  CHECK_THROWS_AS(welch_t_test({0.5}, spread), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// runner and artifacts

TEST_CASE("run_experiment: n_trials=0 yields an empty list; reruns are identical") {
  const Dataset ds = tiny_dataset(2, 32, 17);
  ExperimentSpec spec = find_spec("E9");
  spec.model = ModelKind::M2;
  RunOptions opts;
  opts.base_seed = 5;
  opts.epochs = 2;
  opts.channels = {4, 8};
  opts.capsule_dim = 4;
  spec.n_trials = 0;
  CHECK(run_experiment(spec, ds, opts).empty());

  spec.n_trials = 2;
  const auto r1 = run_experiment(spec, ds, opts);
  const auto r2 = run_experiment(spec, ds, opts);
  REQUIRE(r1.size() == 2);
  for (size_t i = 0; i < r1.size(); ++i) {
    CHECK(r1[i].accuracy == r2[i].accuracy);
    CHECK(r1[i].seed == 5 + static_cast<uint64_t>(i));
    CHECK(r1[i].spec_id == "E9");
  }
}

TEST_CASE("run_jobs orders results by (spec, model, trial); summary is coherent") {
  const Dataset ds = tiny_dataset(2, 32, 19);
  RunOptions opts;
  opts.base_seed = 7;
  opts.epochs = 2;
  opts.trials_override = 2;
  opts.channels = {4, 8};
  opts.capsule_dim = 4;
  const auto results = run_jobs(
      {{"E9", ModelKind::M1}, {"E9", ModelKind::M2}, {"E6", ModelKind::M2}}, ds, opts);
  REQUIRE(results.size() == 6);
  CHECK(results[0].spec_id == "E6");
  CHECK(results[2].model == ModelKind::M1);
  CHECK(results[2].trial == 0);

  const auto rows = summarize(results);
  for (const auto& row : rows) {
    CHECK(row.mean <= row.max + 1e-12);
    CHECK(row.sd >= 0.0);
    if (!std::isnan(row.p_vs_other)) {
      CHECK(row.p_vs_other >= 0.0);
      CHECK(row.p_vs_other <= 1.0);
    }
  }
  // identical result sets in both slots -> means equal, p = 1
  std::vector<TrialResult> fake;
  for (int t = 0; t < 3; ++t) {
    for (ModelKind mk : {ModelKind::M1, ModelKind::M2}) {
      TrialResult r;
      r.spec_id = "E9";
      r.model = mk;
      r.trial = t;
      r.accuracy = 0.4 + 0.1 * t;
      fake.push_back(r);
    }
  }
  const auto frows = summarize(fake);
  REQUIRE(frows.size() == 2);
  CHECK(frows[0].mean == doctest::Approx(frows[1].mean));
  CHECK(frows[0].p_vs_other == doctest::Approx(1.0));
}

TEST_CASE("results csv round trip and report formatting") {
  namespace fs = std::filesystem;
  std::vector<TrialResult> results;
  for (int t = 0; t < 2; ++t) {
    for (ModelKind mk : {ModelKind::M1, ModelKind::M2}) {
      TrialResult r;
      r.spec_id = t == 0 ? "E5" : "A5";
      r.model = mk;
      r.trial = t;
      r.seed = 11 + static_cast<uint64_t>(t);
      r.accuracy = 0.25 * (t + 1) + (mk == ModelKind::M2 ? 0.1 : 0.0);
      r.wall_time_s = 1.5;
      results.push_back(r);
    }
  }
  const fs::path path = fs::temp_directory_path() / "pcblab_results.csv";
  write_results_csv(path.string(), results);
  const auto loaded = read_results_csv(path.string());
  REQUIRE(loaded.size() == results.size());
  for (size_t i = 0; i < results.size(); ++i) {
    CHECK(loaded[i].spec_id == results[i].spec_id);
    CHECK(loaded[i].model == results[i].model);
    CHECK(loaded[i].accuracy == doctest::Approx(results[i].accuracy).epsilon(1e-6));
  }
  fs::remove(path);

  const std::string report = format_report(results);
  CHECK(report.find("E5") != std::string::npos);
  CHECK(report.find("A5") != std::string::npos);
  CHECK(report.find("Exclusion vs augmentation") != std::string::npos);
}
