// pcblab: synthetic micro-PCB dataset generation, pose measurement, and the
// exclusion/augmentation experiment catalog in one batch CLI.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>

#include "pcblab/experiments.hpp"
#include "pcblab/posemeasure.hpp"
#include "pcblab/synthgen.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitTrial = 3;

void apply_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

int cmd_gen(const std::string& out_dir, int classes, int size, uint64_t seed,
            int threads) {
  apply_threads(threads);
  const auto library = pcblab::make_board_library(classes, pcblab::Rng::mix(seed, 1));
  const pcblab::Dataset ds =
      pcblab::generate_dataset(library, size, pcblab::Rng::mix(seed, 2));
  pcblab::write_dataset(ds, out_dir);
  int train_total = 0, test_total = 0;
  for (int c = 0; c < ds.num_classes; ++c) {
    int tr = 0, te = 0;
    for (const auto& s : ds.samples) {
      if (s.class_id != c) continue;
      (s.split == pcblab::Split::Train ? tr : te)++;
    }
    std::printf("class %d: %d train / %d test\n", c, tr, te);
    train_total += tr;
    test_total += te;
  }
  std::printf("total: %d/%d split at %dx%d -> %s\n", train_total, test_total, size,
              size, out_dir.c_str());
  return kExitOk;
}

int cmd_pose(const std::string& data_dir, const std::string& report_path,
             const std::string& aggregate_path, double threshold, int threads) {
  apply_threads(threads);
  const pcblab::Dataset ds = pcblab::load_dataset(data_dir);
  const auto rows = pcblab::measure_dataset(ds, threshold);
  pcblab::write_pose_report(report_path, rows);
  const auto rot = pcblab::aggregate_rotation(rows);
  const auto rat = pcblab::aggregate_ratio(rows);
  if (!aggregate_path.empty()) {
    pcblab::write_aggregate_csv(aggregate_path, rot, rat);
  }
  std::printf("%s\n", pcblab::format_aggregate_table(
                          "Angles of rotated images (degrees, |deviation|)", rot)
                          .c_str());
  std::printf("%s", pcblab::format_aggregate_table(
                        "Width-difference ratios (percent, |ratio|)", rat)
                        .c_str());
  int failures = 0;
  for (const auto& r : rows) {
    if (r.status != pcblab::DetectStatus::Ok) ++failures;
  }
  std::printf("measured %zu images, %d detection failures -> %s\n", rows.size(),
              failures, report_path.c_str());
  return kExitOk;
}

int cmd_exp(const std::string& data_dir, const std::vector<std::string>& ids,
            const std::string& out_dir, uint64_t seed, int trials, int epochs,
            int batch, int threads) {
  // validate ids before the (slow) dataset load
  for (const auto& id : ids) pcblab::find_spec(id);

  const pcblab::Dataset ds = pcblab::load_dataset(data_dir);
  pcblab::RunOptions opts;
  opts.base_seed = seed;
  opts.epochs = epochs;
  opts.batch_size = batch;
  opts.trials_override = trials;
  opts.threads = threads;

  std::vector<std::pair<std::string, pcblab::ModelKind>> jobs;
  for (const auto& id : ids) {
    jobs.emplace_back(id, pcblab::ModelKind::M1);
    jobs.emplace_back(id, pcblab::ModelKind::M2);
  }
  const auto results = pcblab::run_jobs(jobs, ds, opts);

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  pcblab::write_results_csv((fs::path(out_dir) / "results.csv").string(), results);
  pcblab::write_summary_csv((fs::path(out_dir) / "summary.csv").string(),
                            pcblab::summarize(results));
  const std::string report = pcblab::format_report(results);
  std::ofstream rf(fs::path(out_dir) / "report.txt");
  rf << report;
  std::printf("%s", report.c_str());
  std::printf("wrote results.csv, summary.csv, report.txt -> %s\n", out_dir.c_str());
  return kExitOk;
}

int cmd_report(const std::string& results_path, const std::string& out_dir) {
  const auto results = pcblab::read_results_csv(results_path);
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  pcblab::write_summary_csv((fs::path(out_dir) / "summary.csv").string(),
                            pcblab::summarize(results));
  const std::string report = pcblab::format_report(results);
  std::ofstream rf(fs::path(out_dir) / "report.txt");
  rf << report;
  std::printf("%s", report.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic micro-PCB capture rig: dataset generation, edge-based "
               "pose measurement, and CNN/HVC experiment harness"};
  app.set_config("--config");
  app.require_subcommand(1);

  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: all cores)");

  // gen
  auto* gen = app.add_subcommand("gen", "Render a labeled synthetic dataset");
  std::string gen_out;
  int gen_classes = 13, gen_size = 64;
  uint64_t gen_seed = 1234;
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->add_option("--classes", gen_classes, "Number of board classes")
      ->check(CLI::Range(2, 64));
  gen->add_option("--size", gen_size, "Image size in pixels");
  gen->add_option("--seed", gen_seed, "Master seed");

  // pose
  auto* pose = app.add_subcommand("pose", "Measure rotation/perspective over a dataset");
  std::string pose_data, pose_report = "pose_report.csv", pose_aggregate = "pose_aggregate.csv";
  double pose_threshold = 0.3;
  pose->add_option("--data", pose_data, "Dataset root (with manifest.csv)")->required();
  pose->add_option("--report", pose_report, "Per-image report CSV path");
  pose->add_option("--aggregate", pose_aggregate, "Aggregate stats CSV path");
  pose->add_option("--threshold", pose_threshold, "Gradient threshold fraction");

  // exp
  auto* exp = app.add_subcommand("exp", "Run experiment catalog entries (both models)");
  std::string exp_data, exp_out = "runs";
  uint64_t exp_seed = 0;
  int exp_trials = 0, exp_epochs = 30, exp_batch = 32;
  std::vector<std::string> exp_ids;
  exp->add_option("--data", exp_data, "Dataset root")->required();
  exp->add_option("--seed", exp_seed, "Base seed (trial i uses seed+i)")->required();
  exp->add_option("--out", exp_out, "Output directory");
  exp->add_option("--trials", exp_trials, "Override trial count (0: catalog default)");
  exp->add_option("--epochs", exp_epochs, "Training epochs");
  exp->add_option("--batch", exp_batch, "Batch size");
  exp->add_option("ids", exp_ids, "Experiment ids (E1..E9, A1..A16, ALL)")->required();

  // report
  auto* rep = app.add_subcommand("report", "Summarize an existing results.csv");
  std::string rep_results, rep_out = ".";
  rep->add_option("--results", rep_results, "results.csv path")->required();
  rep->add_option("--out", rep_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_out, gen_classes, gen_size, gen_seed, threads);
    if (pose->parsed()) {
      return cmd_pose(pose_data, pose_report, pose_aggregate, pose_threshold, threads);
    }
    if (exp->parsed()) {
      try {
        for (const auto& id : exp_ids) pcblab::find_spec(id);
      } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
      }
      try {
        return cmd_exp(exp_data, exp_ids, exp_out, exp_seed, exp_trials, exp_epochs,
                       exp_batch, threads);
      } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        if (msg.find("load_dataset") != std::string::npos ||
            msg.find("read_ppm") != std::string::npos) {
          std::fprintf(stderr, "data error: %s\n", msg.c_str());
          return kExitData;
        }
        std::fprintf(stderr, "trial failure: %s\n", msg.c_str());
        return kExitTrial;
      }
    }
    if (rep->parsed()) return cmd_report(rep_results, rep_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
