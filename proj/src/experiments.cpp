#include "pcblab/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pcblab {

std::string to_string(ModelKind m) { return m == ModelKind::M1 ? "M1" : "M2"; }

namespace {

// rotations: LW, LS, RS, RW; rings: near, far. Neutral is implicit.
ExperimentSpec make_spec(const std::string& id, bool lw, bool ls, bool rs, bool rw,
                         bool near, bool far, bool aug_rot, bool aug_persp,
                         int trials) {
  ExperimentSpec s;
  s.id = id;
  s.rotations[static_cast<size_t>(RotationLabel::LeftWide)] = lw;
  s.rotations[static_cast<size_t>(RotationLabel::LeftShallow)] = ls;
  s.rotations[static_cast<size_t>(RotationLabel::Neutral)] = true;
  s.rotations[static_cast<size_t>(RotationLabel::RightShallow)] = rs;
  s.rotations[static_cast<size_t>(RotationLabel::RightWide)] = rw;
  s.near = near;
  s.far = far;
  s.augment_rotations = aug_rot;
  s.augment_perspectives = aug_persp;
  s.n_trials = trials;
  return s;
}

}  // namespace

const std::vector<ExperimentSpec>& experiment_catalog() {
  static const std::vector<ExperimentSpec> kCatalog = [] {
    std::vector<ExperimentSpec> c;
    //                      id     LW     LS     RS     RW    near   far    augR   augP  trials
    c.push_back(make_spec("E1", true, true, true, true, true, true, false, false, 5));
    c.push_back(make_spec("E2", true, true, true, true, true, false, false, false, 5));
    c.push_back(make_spec("E3", true, true, true, true, false, false, false, false, 5));
    c.push_back(make_spec("E4", false, true, true, false, true, true, false, false, 5));
    c.push_back(make_spec("E5", false, true, true, false, true, false, false, false, 5));
    c.push_back(make_spec("E6", false, true, true, false, false, false, false, false, 10));
    c.push_back(make_spec("E7", false, false, false, false, true, true, false, false, 5));
    c.push_back(make_spec("E8", false, false, false, false, true, false, false, false, 10));
    c.push_back(make_spec("E9", false, false, false, false, false, false, false, false, 5));

    c.push_back(make_spec("A1", true, true, true, true, true, false, false, true, 5));
    c.push_back(make_spec("A2", true, true, true, true, false, false, false, true, 5));
    c.push_back(make_spec("A3", false, true, true, false, true, true, true, false, 5));
    c.push_back(make_spec("A4", false, true, true, false, true, false, true, true, 5));
    c.push_back(make_spec("A5", false, true, true, false, true, false, true, false, 5));
    c.push_back(make_spec("A6", false, true, true, false, true, false, false, true, 5));
    c.push_back(make_spec("A7", false, true, true, false, false, false, true, true, 5));
    c.push_back(make_spec("A8", false, true, true, false, false, false, true, false, 5));
    c.push_back(make_spec("A9", false, true, true, false, false, false, false, true, 5));
    c.push_back(make_spec("A10", false, false, false, false, true, true, true, false, 5));
    c.push_back(make_spec("A11", false, false, false, false, true, false, true, true, 5));
    c.push_back(make_spec("A12", false, false, false, false, true, false, true, false, 5));
    c.push_back(make_spec("A13", false, false, false, false, true, false, false, true, 5));
    c.push_back(make_spec("A14", false, false, false, false, false, false, true, true, 5));
    c.push_back(make_spec("A15", false, false, false, false, false, false, true, false, 5));
    c.push_back(make_spec("A16", false, false, false, false, false, false, false, true, 5));

    c.push_back(make_spec("ALL", true, true, true, true, true, true, true, true, 10));
    return c;
  }();
  return kCatalog;
}

std::vector<std::string> catalog_ids() {
  std::vector<std::string> ids;
  for (const auto& s : experiment_catalog()) ids.push_back(s.id);
  return ids;
}

const ExperimentSpec& find_spec(const std::string& id) {
  for (const auto& s : experiment_catalog()) {
    if (s.id == id) return s;
  }
  std::string valid;
  for (const auto& s : experiment_catalog()) {
    if (!valid.empty()) valid += " ";
    valid += s.id;
  }
  throw std::invalid_argument("unknown experiment id '" + id + "'; valid ids: " + valid);
}

const std::vector<std::pair<std::string, std::vector<std::string>>>& e_vs_a_grouping() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> kGroups = {
      {"E2", {"A1"}},
      {"E3", {"A2"}},
      {"E4", {"A3"}},
      {"E5", {"A4", "A5", "A6"}},
      {"E6", {"A7", "A8", "A9"}},
      {"E7", {"A10"}},
      {"E8", {"A11", "A12", "A13"}},
      {"E9", {"A14", "A15", "A16"}},
  };
  return kGroups;
}

std::vector<const LabeledSample*> build_split(const Dataset& ds,
                                              const ExperimentSpec& spec) {
  std::vector<const LabeledSample*> out;
  for (const auto& s : ds.samples) {
    if (s.split != Split::Train) continue;
    if (!spec.rotation_included(s.rotation_label)) continue;
    if (!spec.ring_included(s.perspective.ring)) continue;
    out.push_back(&s);
  }
  return out;
}

std::vector<const LabeledSample*> test_split(const Dataset& ds) {
  std::vector<const LabeledSample*> out;
  for (const auto& s : ds.samples) {
    if (s.split == Split::Test) out.push_back(&s);
  }
  return out;
}

AugmentPolicy policy_for(const ExperimentSpec& spec) {
  AugmentPolicy p = AugmentPolicy::defaults();
  p.fill_value = kBackgroundLevel;
  if (spec.augment_rotations) {
    p.simulate_rotations = true;
    for (int li = 0; li < kNumRotationLabels; ++li) {
      const auto label = static_cast<RotationLabel>(li);
      if (label == RotationLabel::Neutral) continue;
      if (!spec.rotation_included(label)) p.rotation_sim_pool.push_back(label);
    }
  }
  if (spec.augment_perspectives) {
    p.simulate_perspectives = true;
    if (!spec.near) {
      p.ring_sim_pool.push_back(Ring::NegativeNear);
      p.ring_sim_pool.push_back(Ring::PositiveNear);
    }
    if (!spec.far) {
      p.ring_sim_pool.push_back(Ring::NegativeFar);
      p.ring_sim_pool.push_back(Ring::PositiveFar);
    }
  }
  return p;
}

namespace {

TrialResult run_single_trial(const ExperimentSpec& spec, ModelKind model_kind,
                             int trial, const Dataset& ds,
                             const std::vector<const LabeledSample*>& train_samples,
                             const std::vector<const LabeledSample*>& test_samples,
                             const RunOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig cfg;
  cfg.head = model_kind == ModelKind::M1 ? HeadKind::FullyConnected : HeadKind::HVC;
  cfg.input_size = ds.image_size;
  cfg.in_channels = 3;
  cfg.channels = opts.channels;
  cfg.capsule_dim = opts.capsule_dim;
  cfg.num_classes = ds.num_classes;

  const uint64_t seed = opts.base_seed + static_cast<uint64_t>(trial);
  Model<float> model = build_model<float>(cfg, seed);
  TrainOptions<float> topts;
  topts.epochs = opts.epochs;
  topts.batch_size = opts.batch_size;
  topts.seed = Rng::mix(seed, 0x747261696eULL);
  topts.policy = policy_for(spec);
  train(model, train_samples, topts);
  const EvalResult ev = evaluate(model, test_samples);

  TrialResult r;
  r.spec_id = spec.id;
  r.model = model_kind;
  r.trial = trial;
  r.seed = seed;
  r.accuracy = ev.accuracy;
  r.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace

namespace {

int resolve_threads(int requested) {
#ifdef _OPENMP
  return requested > 0 ? requested : omp_get_max_threads();
#else
  (void)requested;
  return 1;
#endif
}

}  // namespace

std::vector<TrialResult> run_experiment(const ExperimentSpec& spec, const Dataset& ds,
                                        const RunOptions& opts) {
  const int trials = opts.trials_override > 0 ? opts.trials_override : spec.n_trials;
  const auto train_samples = build_split(ds, spec);
  if (train_samples.empty()) {
    throw std::runtime_error("run_experiment: empty training subset for " + spec.id);
  }
  const auto test_samples = test_split(ds);
  std::vector<TrialResult> results(static_cast<size_t>(trials));
  const int nthreads = resolve_threads(opts.threads);
#pragma omp parallel for schedule(dynamic) num_threads(nthreads)
  for (int t = 0; t < trials; ++t) {
    results[static_cast<size_t>(t)] =
        run_single_trial(spec, spec.model, t, ds, train_samples, test_samples, opts);
  }
  return results;
}

std::vector<TrialResult> run_jobs(
    const std::vector<std::pair<std::string, ModelKind>>& jobs, const Dataset& ds,
    const RunOptions& opts) {
  struct Unit {
    const ExperimentSpec* spec;
    ModelKind model;
    int trial;
  };
  std::vector<Unit> units;
  std::map<std::string, std::vector<const LabeledSample*>> splits;
  for (const auto& [id, model] : jobs) {
    const ExperimentSpec& spec = find_spec(id);
    if (!splits.count(id)) {
      splits[id] = build_split(ds, spec);
      if (splits[id].empty()) {
        throw std::runtime_error("run_jobs: empty training subset for " + id);
      }
    }
    const int trials = opts.trials_override > 0 ? opts.trials_override : spec.n_trials;
    for (int t = 0; t < trials; ++t) units.push_back({&spec, model, t});
  }
  const auto test_samples = test_split(ds);
  std::vector<TrialResult> results(units.size());
  const int nthreads = resolve_threads(opts.threads);
#pragma omp parallel for schedule(dynamic) num_threads(nthreads)
  for (size_t i = 0; i < units.size(); ++i) {
    const Unit& u = units[i];
    results[i] = run_single_trial(*u.spec, u.model, u.trial, ds, splits.at(u.spec->id),
                                  test_samples, opts);
  }
  // deterministic ordering by (spec, model, trial), independent of scheduling
  std::stable_sort(results.begin(), results.end(),
                   [](const TrialResult& a, const TrialResult& b) {
                     if (a.spec_id != b.spec_id) return a.spec_id < b.spec_id;
                     if (a.model != b.model) return a.model < b.model;
                     return a.trial < b.trial;
                   });
  return results;
}

// ---------------------------------------------------------------------------
// Welch's t-test

namespace {

// Continued-fraction evaluation of the regularized incomplete beta
// (Lentz's method).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1, qam = a - 1;
  double c = 1, d = 1 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x <= 0) return 0;
  if (x >= 1) return 1;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log(1 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1) / (a + b + 2)) {
    return front * betacf(a, b, x) / a;
  }
  return 1 - front * betacf(b, a, 1 - x) / b;
}

WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) {
    throw std::invalid_argument("welch_t_test: each sample needs at least 2 values");
  }
  auto mean_var = [](const std::vector<double>& v, double& mean, double& var) {
    mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size() - 1);
  };
  double ma, va, mb, vb;
  mean_var(a, ma, va);
  mean_var(b, mb, vb);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  WelchResult r;
  const double se2 = va / na + vb / nb;
  if (se2 <= 0) {
    r.degenerate = true;
    r.p = (ma == mb) ? 1.0 : 0.0;
    r.t = (ma == mb) ? 0.0 : std::numeric_limits<double>::infinity();
    r.df = na + nb - 2;
    return r;
  }
  r.t = (ma - mb) / std::sqrt(se2);
  r.df = se2 * se2 /
         (va * va / (na * na * (na - 1)) + vb * vb / (nb * nb * (nb - 1)));
  // two-sided p through the regularized incomplete beta
  const double x = r.df / (r.df + r.t * r.t);
  r.p = incomplete_beta(r.df / 2.0, 0.5, x);
  return r;
}

// ---------------------------------------------------------------------------
// Summaries and artifacts

std::vector<double> accuracies_for(const std::vector<TrialResult>& results,
                                   const std::string& id, ModelKind model) {
  std::vector<double> out;
  for (const auto& r : results) {
    if (r.spec_id == id && r.model == model) out.push_back(r.accuracy);
  }
  return out;
}

std::vector<SummaryRow> summarize(const std::vector<TrialResult>& results) {
  std::vector<std::pair<std::string, ModelKind>> keys;
  for (const auto& r : results) {
    const std::pair<std::string, ModelKind> key{r.spec_id, r.model};
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  std::vector<SummaryRow> rows;
  for (const auto& [id, model] : keys) {
    const std::vector<double> acc = accuracies_for(results, id, model);
    SummaryRow row;
    row.spec_id = id;
    row.model = model;
    row.n = static_cast<int>(acc.size());
    double sum = 0, mx = acc[0];
    for (double v : acc) {
      sum += v;
      mx = std::max(mx, v);
    }
    row.mean = sum / static_cast<double>(acc.size());
    row.max = mx;
    if (acc.size() > 1) {
      double ss = 0;
      for (double v : acc) ss += (v - row.mean) * (v - row.mean);
      row.sd = std::sqrt(ss / static_cast<double>(acc.size() - 1));
    }
    const ModelKind other = model == ModelKind::M1 ? ModelKind::M2 : ModelKind::M1;
    const std::vector<double> oacc = accuracies_for(results, id, other);
    if (acc.size() >= 2 && oacc.size() >= 2) {
      row.p_vs_other = welch_t_test(acc, oacc).p;
    }
    rows.push_back(row);
  }
  return rows;
}

void write_results_csv(const std::string& path, const std::vector<TrialResult>& results) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_results_csv: cannot open " + path);
  f << "spec_id,model,trial,seed,accuracy,wall_time_s\n";
  char line[256];
  for (const auto& r : results) {
    std::snprintf(line, sizeof(line), "%s,%s,%d,%llu,%.6f,%.3f\n", r.spec_id.c_str(),
                  to_string(r.model).c_str(), r.trial,
                  static_cast<unsigned long long>(r.seed), r.accuracy, r.wall_time_s);
    f << line;
  }
}

std::vector<TrialResult> read_results_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_results_csv: cannot open " + path);
  std::vector<TrialResult> out;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 6) {
      throw std::runtime_error("read_results_csv: malformed line: " + line);
    }
    TrialResult r;
    r.spec_id = fields[0];
    r.model = fields[1] == "M1" ? ModelKind::M1 : ModelKind::M2;
    r.trial = std::stoi(fields[2]);
    r.seed = std::stoull(fields[3]);
    r.accuracy = std::stod(fields[4]);
    r.wall_time_s = std::stod(fields[5]);
    out.push_back(r);
  }
  return out;
}

void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_summary_csv: cannot open " + path);
  f << "spec_id,model,mean,max,sd,p_value_vs_other_model\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%s,%.6f,%.6f,%.6f,%g\n", r.spec_id.c_str(),
                  to_string(r.model).c_str(), r.mean, r.max, r.sd, r.p_vs_other);
    f << line;
  }
}

namespace {

const SummaryRow* find_row(const std::vector<SummaryRow>& rows, const std::string& id,
                           ModelKind model) {
  for (const auto& r : rows) {
    if (r.spec_id == id && r.model == model) return &r;
  }
  return nullptr;
}

void append_model_columns(std::string& out, const std::vector<SummaryRow>& rows,
                          const std::string& id) {
  const SummaryRow* m1 = find_row(rows, id, ModelKind::M1);
  const SummaryRow* m2 = find_row(rows, id, ModelKind::M2);
  char buf[160];
  auto fmt = [&buf](const SummaryRow* r) -> std::string {
    if (!r) return std::string("        -       -        -");
    std::snprintf(buf, sizeof(buf), " %7.2f%% %6.2f%% %8.5f", 100 * r->mean,
                  100 * r->max, r->sd);
    return buf;
  };
  out += fmt(m1);
  out += " |";
  out += fmt(m2);
  const double p = m1 ? m1->p_vs_other : (m2 ? m2->p_vs_other : 0.0 / 0.0);
  std::snprintf(buf, sizeof(buf), " | %9.3g", p);
  out += buf;
}

}  // namespace

std::string format_report(const std::vector<TrialResult>& results) {
  const std::vector<SummaryRow> rows = summarize(results);
  auto have = [&rows](const std::string& id) {
    return find_row(rows, id, ModelKind::M1) || find_row(rows, id, ModelKind::M2);
  };
  std::string out;
  char buf[240];

  out += "== Exclusion experiments (translation jitter only) ==\n";
  std::snprintf(buf, sizeof(buf), "%-5s %27s | %26s | %9s\n", "id",
                "M1 mean    max      sd", "M2 mean    max      sd", "p-value");
  out += buf;
  for (int i = 1; i <= 9; ++i) {
    const std::string id = "E" + std::to_string(i);
    if (!have(id)) continue;
    std::snprintf(buf, sizeof(buf), "%-5s", id.c_str());
    out += buf;
    append_model_columns(out, rows, id);
    out += "\n";
  }

  out += "\n== Augmentation-of-excluded experiments ==\n";
  std::snprintf(buf, sizeof(buf), "%-5s %-9s %17s | %26s | %9s\n", "id", "augments",
                "M1 mean max sd", "M2 mean    max      sd", "p-value");
  out += buf;
  for (int i = 1; i <= 16; ++i) {
    const std::string id = "A" + std::to_string(i);
    if (!have(id)) continue;
    const ExperimentSpec& spec = find_spec(id);
    std::string aug;
    if (spec.augment_rotations) aug += "rot";
    if (spec.augment_perspectives) aug += aug.empty() ? "persp" : "+persp";
    std::snprintf(buf, sizeof(buf), "%-5s %-9s", id.c_str(), aug.c_str());
    out += buf;
    append_model_columns(out, rows, id);
    out += "\n";
  }

  out += "\n== Exclusion vs augmentation (matched training subsets) ==\n";
  for (const auto& [eid, aids] : e_vs_a_grouping()) {
    if (!have(eid)) continue;
    for (const auto& aid : aids) {
      if (!have(aid)) continue;
      const SummaryRow* e2 = find_row(rows, eid, ModelKind::M2);
      const SummaryRow* a2 = find_row(rows, aid, ModelKind::M2);
      double p = 0.0 / 0.0;
      const std::vector<double> ea = accuracies_for(results, eid, ModelKind::M2);
      const std::vector<double> aa = accuracies_for(results, aid, ModelKind::M2);
      if (ea.size() >= 2 && aa.size() >= 2) p = welch_t_test(ea, aa).p;
      std::snprintf(buf, sizeof(buf),
                    "%-4s M2 %7.2f%%  vs  %-4s M2 %7.2f%%   p=%9.3g\n", eid.c_str(),
                    e2 ? 100 * e2->mean : 0.0, aid.c_str(), a2 ? 100 * a2->mean : 0.0,
                    p);
      out += buf;
    }
  }

  if (have("ALL")) {
    out += "\n== No exclusions, label-matched augmentation of everything ==\n";
    std::snprintf(buf, sizeof(buf), "%-22s %8s %8s %9s\n", "Model", "Mean", "Max", "S.D.");
    out += buf;
    for (ModelKind mk : {ModelKind::M1, ModelKind::M2}) {
      const SummaryRow* r = find_row(rows, "ALL", mk);
      if (!r) continue;
      std::snprintf(buf, sizeof(buf), "%-22s %7.2f%% %7.2f%% %9.5f\n",
                    (to_string(mk) + (mk == ModelKind::M1 ? " (fully connected)" : " (capsules)")).c_str(),
                    100 * r->mean, 100 * r->max, r->sd);
      out += buf;
    }
    const SummaryRow* r1 = find_row(rows, "ALL", ModelKind::M1);
    const SummaryRow* r2 = find_row(rows, "ALL", ModelKind::M2);
    if (r1 && r2) {
      std::snprintf(buf, sizeof(buf), "M2 - M1 mean gap: %+0.2f points, p=%g\n",
                    100 * (r2->mean - r1->mean), r1->p_vs_other);
      out += buf;
    }
  }
  return out;
}

}  // namespace pcblab
