#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pcblab/geometry.hpp"
#include "pcblab/network.hpp"
#include "pcblab/synthgen.hpp"

namespace pcblab {

enum class ModelKind : int { M1 = 0, M2 = 1 };

std::string to_string(ModelKind m);

// One row of the exclusion/augmentation design matrix. The neutral rotation
// and the neutral ring are always part of training; the E-series never
// augments, the ALL row trains on everything and augments both families.
struct ExperimentSpec {
  std::string id;
  std::array<bool, kNumRotationLabels> rotations{};  // included labels
  bool near = false;  // near ring included
  bool far = false;   // far ring included
  bool augment_rotations = false;
  bool augment_perspectives = false;
  int n_trials = 5;
  ModelKind model = ModelKind::M2;

  bool rotation_included(RotationLabel l) const {
    return rotations[static_cast<size_t>(l)];
  }
  bool ring_included(Ring r) const {
    switch (ring_class(r)) {
      case RingClass::Neutral: return true;
      case RingClass::Near: return near;
      default: return far;
    }
  }
};

// E1-E9, A1-A16 and ALL, in table order.
const std::vector<ExperimentSpec>& experiment_catalog();
std::vector<std::string> catalog_ids();
// Throws std::invalid_argument naming the valid ids on an unknown id.
const ExperimentSpec& find_spec(const std::string& id);

// Matched-training-subset grouping of exclusion rows against their
// augmentation counterparts.
const std::vector<std::pair<std::string, std::vector<std::string>>>& e_vs_a_grouping();

// Train samples whose rotation label and ring are included; the test split
// is never filtered.
std::vector<const LabeledSample*> build_split(const Dataset& ds,
                                              const ExperimentSpec& spec);
std::vector<const LabeledSample*> test_split(const Dataset& ds);

// Augmentation policy for one experiment: translation jitter always on;
// when a family is augmented, draws take sigma from the excluded labels of
// that family (from the sample's own label when nothing is excluded).
AugmentPolicy policy_for(const ExperimentSpec& spec);

struct TrialResult {
  std::string spec_id;
  ModelKind model = ModelKind::M1;
  int trial = 0;
  uint64_t seed = 0;
  double accuracy = 0;
  double wall_time_s = 0;
};

struct RunOptions {
  uint64_t base_seed = 1;
  int epochs = 30;
  int batch_size = 32;
  int trials_override = 0;  // 0: use the spec's n_trials
  int threads = 0;          // 0: all cores
  int capsule_dim = 8;
  std::vector<int> channels = {8, 16, 32};
};

// n_trials independent trainings with seeds base_seed + i, evaluated on the
// full test split.
std::vector<TrialResult> run_experiment(const ExperimentSpec& spec, const Dataset& ds,
                                        const RunOptions& opts);

// Requested catalog subset; every job is (spec id, model, trial). Trials run
// in parallel, each single-threaded, with deterministic results.
std::vector<TrialResult> run_jobs(const std::vector<std::pair<std::string, ModelKind>>& jobs,
                                  const Dataset& ds, const RunOptions& opts);

// ---------------------------------------------------------------------------
// Statistics

struct WelchResult {
  double p = 1.0;
  double t = 0.0;
  double df = 0.0;
  bool degenerate = false;
};

// Two-sided Welch unequal-variance t-test with Welch-Satterthwaite degrees
// of freedom. Zero variance in both samples degenerates to p=1 (equal means)
// or a p=0 sentinel (different means), flagged.
WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Regularized incomplete beta, exposed for the statistics tests.
double incomplete_beta(double a, double b, double x);

struct SummaryRow {
  std::string spec_id;
  ModelKind model = ModelKind::M1;
  int n = 0;
  double mean = 0, max = 0, sd = 0;
  double p_vs_other = std::numeric_limits<double>::quiet_NaN();
};

std::vector<SummaryRow> summarize(const std::vector<TrialResult>& results);

std::vector<double> accuracies_for(const std::vector<TrialResult>& results,
                                   const std::string& id, ModelKind model);

void write_results_csv(const std::string& path, const std::vector<TrialResult>& results);
std::vector<TrialResult> read_results_csv(const std::string& path);
void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows);

// E-table, A-table, E-vs-A comparison table, and the no-exclusions table in
// one text artifact.
std::string format_report(const std::vector<TrialResult>& results);

}  // namespace pcblab
