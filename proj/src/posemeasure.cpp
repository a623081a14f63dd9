#include "pcblab/posemeasure.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace pcblab {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kMinSupport = 10;
constexpr double kMaxResidual = 1.5;   // px, validity gate
constexpr double kInlierTol = 1.0;     // px, hypothesis scoring

struct EdgePoint {
  double x, y;
};

// Subpixel horizontal position of the first (scan_right) or last gradient
// peak above threshold in one row.
bool row_peak(const std::vector<float>& gmag, int w, double thr, bool scan_right,
              double& out_x) {
  const int x0 = scan_right ? 1 : w - 2;
  const int x1 = scan_right ? w - 1 : 0;
  const int step = scan_right ? 1 : -1;
  for (int x = x0; x != x1; x += step) {
    const double c = gmag[static_cast<size_t>(x)];
    if (c < thr) continue;
    const double m = gmag[static_cast<size_t>(x - 1)];
    const double p = gmag[static_cast<size_t>(x + 1)];
    if (c < m || c < p) continue;
    const double denom = m - 2 * c + p;
    double delta = 0;
    if (denom < -1e-12) delta = 0.5 * (m - p) / denom;
    out_x = x + std::clamp(delta, -0.5, 0.5);
    return true;
  }
  return false;
}

struct FitResult {
  bool ok = false;
  EdgeLine line;
};

// Least squares for x = a*y + b.
bool ls_fit(const std::vector<EdgePoint>& pts, double& a, double& b) {
  const size_t n = pts.size();
  if (n < 2) return false;
  double sy = 0, sx = 0, syy = 0, sxy = 0;
  for (const auto& p : pts) {
    sy += p.y;
    sx += p.x;
    syy += p.y * p.y;
    sxy += p.x * p.y;
  }
  const double denom = n * syy - sy * sy;
  if (std::abs(denom) < 1e-9) return false;
  a = (n * sxy - sx * sy) / denom;
  b = (sx - a * sy) / n;
  return true;
}

// Robust near-vertical line fit: deterministic two-point hypothesis sweep
// (extreme rotations put a second board side into the row scan), then least
// squares on the consensus set with one 2-sigma outlier-rejection pass.
FitResult fit_edge(const std::vector<EdgePoint>& pts, EdgeSide side) {
  FitResult r;
  r.line.side = side;
  if (static_cast<int>(pts.size()) < kMinSupport) return r;

  const size_t n = pts.size();
  const size_t anchors = std::min<size_t>(n, 24);
  std::vector<size_t> idx(anchors);
  for (size_t i = 0; i < anchors; ++i) idx[i] = i * (n - 1) / (anchors - 1);

  double best_a = 0, best_b = 0;
  int best_inliers = -1;
  for (size_t i = 0; i < anchors; ++i) {
    for (size_t j = i + 1; j < anchors; ++j) {
      const EdgePoint& p = pts[idx[i]];
      const EdgePoint& q = pts[idx[j]];
      const double dy = q.y - p.y;
      if (std::abs(dy) < 2.0) continue;
      const double a = (q.x - p.x) / dy;
      if (std::abs(a) > 2.0) continue;  // more than 63 deg from vertical
      const double b = p.x - a * p.y;
      const double norm = std::sqrt(1 + a * a);
      int inl = 0;
      for (const auto& e : pts) {
        if (std::abs(e.x - (a * e.y + b)) / norm <= kInlierTol) ++inl;
      }
      if (inl > best_inliers) {
        best_inliers = inl;
        best_a = a;
        best_b = b;
      }
    }
  }
  if (best_inliers < kMinSupport) return r;

  auto collect = [&pts](double a, double b, double tol) {
    std::vector<EdgePoint> kept;
    const double norm = std::sqrt(1 + a * a);
    for (const auto& e : pts) {
      if (std::abs(e.x - (a * e.y + b)) / norm <= tol) kept.push_back(e);
    }
    return kept;
  };

  std::vector<EdgePoint> inliers = collect(best_a, best_b, kInlierTol);
  double a = best_a, b = best_b;
  if (!ls_fit(inliers, a, b)) return r;

  // one 2-sigma residual rejection pass
  const double norm1 = std::sqrt(1 + a * a);
  double ss = 0;
  for (const auto& e : inliers) {
    const double d = (e.x - (a * e.y + b)) / norm1;
    ss += d * d;
  }
  const double sigma = std::sqrt(ss / static_cast<double>(inliers.size()));
  if (sigma > 1e-12) {
    std::vector<EdgePoint> kept;
    for (const auto& e : inliers) {
      if (std::abs(e.x - (a * e.y + b)) / norm1 <= 2 * sigma) kept.push_back(e);
    }
    if (static_cast<int>(kept.size()) >= kMinSupport) {
      inliers = std::move(kept);
      if (!ls_fit(inliers, a, b)) return r;
    }
  }

  const double norm2 = std::sqrt(1 + a * a);
  double ss2 = 0, ymin = inliers[0].y, ymax = inliers[0].y;
  for (const auto& e : inliers) {
    const double d = (e.x - (a * e.y + b)) / norm2;
    ss2 += d * d;
    ymin = std::min(ymin, e.y);
    ymax = std::max(ymax, e.y);
  }
  const double rms = std::sqrt(ss2 / static_cast<double>(inliers.size()));
  if (static_cast<int>(inliers.size()) < kMinSupport || rms > kMaxResidual) {
    return r;
  }

  r.ok = true;
  r.line.a = a;
  r.line.b = b;
  const double inv = 1.0 / norm2;
  r.line.dx = -a * inv;
  r.line.dy = -inv;
  r.line.support = static_cast<int>(inliers.size());
  r.line.residual = rms;
  r.line.row_min = ymin;
  r.line.row_max = ymax;
  return r;
}

}  // namespace

std::string to_string(DetectStatus s) {
  switch (s) {
    case DetectStatus::Ok: return "ok";
    case DetectStatus::FailLeft: return "fail_left";
    case DetectStatus::FailRight: return "fail_right";
    case DetectStatus::FailBoth: return "fail_both";
    case DetectStatus::Degenerate: return "degenerate";
  }
  return "?";
}

EdgeDetection detect_side_edges(const Image& img, double gradient_threshold) {
  const Image gray = to_gray(img);
  const int h = gray.h, w = gray.w;
  EdgeDetection det;
  if (w < 5 || h < kMinSupport) return det;

  std::vector<std::vector<float>> gmag(static_cast<size_t>(h),
                                       std::vector<float>(static_cast<size_t>(w), 0.0f));
  float gmax = 0.0f;
  for (int y = 0; y < h; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      const float g = 0.5f * (gray.at(y, x + 1, 0) - gray.at(y, x - 1, 0));
      const float m = std::abs(g);
      gmag[static_cast<size_t>(y)][static_cast<size_t>(x)] = m;
      gmax = std::max(gmax, m);
    }
  }
  const double thr = std::max(gradient_threshold * static_cast<double>(gmax), 1e-4);

  // Edges are sparse structures; when strong gradients cover a large share
  // of the image the first-peak scan locks onto texture, not a border.
  long above = 0;
  for (const auto& row : gmag) {
    for (float m : row) {
      if (m >= thr) ++above;
    }
  }
  if (static_cast<double>(above) > 0.2 * static_cast<double>(h) * w) return det;

  std::vector<EdgePoint> left_pts, right_pts;
  for (int y = 0; y < h; ++y) {
    double x;
    if (row_peak(gmag[static_cast<size_t>(y)], w, thr, true, x)) {
      left_pts.push_back({x, static_cast<double>(y)});
    }
    if (row_peak(gmag[static_cast<size_t>(y)], w, thr, false, x)) {
      right_pts.push_back({x, static_cast<double>(y)});
    }
  }

  FitResult lf = fit_edge(left_pts, EdgeSide::Left);
  FitResult rf = fit_edge(right_pts, EdgeSide::Right);
  det.left_ok = lf.ok;
  det.right_ok = rf.ok;
  det.left = lf.line;
  det.right = rf.line;
  return det;
}

double measure_rotation(const Image& img, double gradient_threshold) {
  const EdgeDetection det = detect_side_edges(img, gradient_threshold);
  if (!det.left_ok) {
    throw std::runtime_error("measure_rotation: left edge detection failed");
  }
  return std::atan2(det.left.dx, -det.left.dy) * 180.0 / kPi;
}

double measure_perspective_ratio(const Image& img, double gradient_threshold) {
  const EdgeDetection det = detect_side_edges(img, gradient_threshold);
  if (!det.left_ok || !det.right_ok) {
    throw std::runtime_error(std::string("measure_perspective_ratio: ") +
                             (det.left_ok ? "right" : det.right_ok ? "left" : "both") +
                             " edge detection failed");
  }
  const double ytop = std::max(det.left.row_min, det.right.row_min);
  const double ybot = std::min(det.left.row_max, det.right.row_max);
  if (ybot - ytop < 2.0) {
    throw std::runtime_error("measure_perspective_ratio: edges share too few rows");
  }
  const double wtop = det.right.x_at(ytop) - det.left.x_at(ytop);
  const double wbot = det.right.x_at(ybot) - det.left.x_at(ybot);
  if (wtop < 1e-3) {
    throw std::runtime_error("measure_perspective_ratio: degenerate top width");
  }
  return (wbot - wtop) / wtop;
}

PoseMeasurement measure_pose(const Image& img, double gradient_threshold) {
  PoseMeasurement out;
  const EdgeDetection det = detect_side_edges(img, gradient_threshold);
  if (!det.left_ok && !det.right_ok) {
    out.status = DetectStatus::FailBoth;
    return out;
  }
  if (!det.left_ok) {
    out.status = DetectStatus::FailLeft;
    return out;
  }
  out.theta_deg = std::atan2(det.left.dx, -det.left.dy) * 180.0 / kPi;
  if (!det.right_ok) {
    out.status = DetectStatus::FailRight;
    return out;
  }
  const double ytop = std::max(det.left.row_min, det.right.row_min);
  const double ybot = std::min(det.left.row_max, det.right.row_max);
  const double wtop = det.right.x_at(ytop) - det.left.x_at(ytop);
  const double wbot = det.right.x_at(ybot) - det.left.x_at(ybot);
  if (ybot - ytop < 2.0 || wtop < 1e-3) {
    out.status = DetectStatus::Degenerate;
    return out;
  }
  out.ratio_y = (wbot - wtop) / wtop;
  out.status = DetectStatus::Ok;
  return out;
}

std::vector<PoseReportRow> measure_dataset(const Dataset& ds,
                                           double gradient_threshold) {
  std::vector<PoseReportRow> rows(ds.samples.size());
#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const LabeledSample& s = ds.samples[i];
    PoseReportRow& r = rows[i];
    r.path = s.rel_path;
    r.rotation_label = s.rotation_label;
    r.ring = s.perspective.ring;
    const PoseMeasurement m = measure_pose(dequantize(s.image), gradient_threshold);
    r.status = m.status;
    r.theta_deg = m.theta_deg;
    r.ratio_y = m.ratio_y;
  }
  return rows;
}

void write_pose_report(const std::string& path,
                       const std::vector<PoseReportRow>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_pose_report: cannot open " + path);
  f << "path,theta_measured,ratio_measured,detect_status\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%s\n", r.path.c_str(),
                  r.theta_deg, r.ratio_y, to_string(r.status).c_str());
    f << line;
  }
}

namespace {

AggregateRow stats_row(const std::string& name, const std::vector<double>& vals) {
  AggregateRow row;
  row.name = name;
  row.count = static_cast<int>(vals.size());
  if (vals.empty()) return row;
  double mn = vals[0], mx = vals[0], sum = 0;
  for (double v : vals) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
    sum += v;
  }
  row.min = mn;
  row.max = mx;
  row.mean = sum / static_cast<double>(vals.size());
  if (vals.size() > 1) {
    double ss = 0;
    for (double v : vals) ss += (v - row.mean) * (v - row.mean);
    row.sd = std::sqrt(ss / static_cast<double>(vals.size() - 1));
  }
  return row;
}

}  // namespace

std::vector<AggregateRow> aggregate_rotation(const std::vector<PoseReportRow>& rows) {
  std::vector<AggregateRow> out;
  for (int li = 0; li < kNumRotationLabels; ++li) {
    std::vector<double> vals;
    for (const auto& r : rows) {
      if (r.status != DetectStatus::Ok && r.status != DetectStatus::FailRight) continue;
      if (static_cast<int>(r.rotation_label) != li) continue;
      vals.push_back(std::abs(r.theta_deg));
    }
    out.push_back(stats_row(display_name(static_cast<RotationLabel>(li)), vals));
  }
  return out;
}

std::vector<AggregateRow> aggregate_ratio(const std::vector<PoseReportRow>& rows) {
  std::vector<AggregateRow> out;
  for (int ri = 0; ri < kNumRings; ++ri) {
    std::vector<double> vals;
    for (const auto& r : rows) {
      if (r.status != DetectStatus::Ok) continue;
      if (static_cast<int>(r.ring) != ri) continue;
      vals.push_back(std::abs(r.ratio_y) * 100.0);
    }
    out.push_back(stats_row(display_name(static_cast<Ring>(ri)), vals));
  }
  return out;
}

std::string format_aggregate_table(const std::string& title,
                                   const std::vector<AggregateRow>& rows) {
  std::string out = title + "\n";
  char line[160];
  std::snprintf(line, sizeof(line), "%-15s %8s %8s %8s %8s %6s\n", "Position",
                "Min", "Mean", "S.D.", "Max", "N");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-15s %8.2f %8.2f %8.5f %8.2f %6d\n",
                  r.name.c_str(), r.min, r.mean, r.sd, r.max, r.count);
    out += line;
  }
  return out;
}

void write_aggregate_csv(const std::string& path,
                         const std::vector<AggregateRow>& rotation,
                         const std::vector<AggregateRow>& ratio) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_aggregate_csv: cannot open " + path);
  f << "table,position,min,mean,sd,max,count\n";
  char line[256];
  for (const auto& r : rotation) {
    std::snprintf(line, sizeof(line), "rotation,%s,%.6f,%.6f,%.6f,%.6f,%d\n",
                  r.name.c_str(), r.min, r.mean, r.sd, r.max, r.count);
    f << line;
  }
  for (const auto& r : ratio) {
    std::snprintf(line, sizeof(line), "ratio,%s,%.6f,%.6f,%.6f,%.6f,%d\n",
                  r.name.c_str(), r.min, r.mean, r.sd, r.max, r.count);
    f << line;
  }
}

}  // namespace pcblab
