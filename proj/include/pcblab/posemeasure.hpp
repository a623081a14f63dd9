#pragma once

#include <string>
#include <vector>

#include "pcblab/geometry.hpp"
#include "pcblab/image.hpp"
#include "pcblab/synthgen.hpp"

namespace pcblab {

enum class EdgeSide { Left, Right };

// Fitted near-vertical board edge. Direction is unit length, oriented
// bottom-to-top (dy <= 0).
struct EdgeLine {
  EdgeSide side = EdgeSide::Left;
  double a = 0, b = 0;        // x = a*y + b
  double dx = 0, dy = -1;     // unit direction, bottom-to-top
  int support = 0;            // contributing edge points after the final fit
  double residual = 0;        // RMS point-to-line distance, pixels
  double row_min = 0, row_max = 0;

  double x_at(double y) const { return a * y + b; }
};

enum class DetectStatus { Ok, FailLeft, FailRight, FailBoth, Degenerate };

std::string to_string(DetectStatus s);

struct EdgeDetection {
  bool left_ok = false, right_ok = false;
  EdgeLine left, right;
};

// Per image row, the first/last horizontal-gradient peak above threshold
// (a fraction of the image's max gradient) contributes a point; a robust
// line fit yields each edge. A side fails when fewer than 10 points
// survive or the fit residual is above 1.5 px.
EdgeDetection detect_side_edges(const Image& img, double gradient_threshold = 0.3);

// Signed deviation of the left edge from vertical, degrees. Positive matches
// rotation_homography's positive direction. Throws std::runtime_error when
// the left edge is not detectable.
double measure_rotation(const Image& img, double gradient_threshold = 0.3);

// (w_bottom - w_top) / w_top between the fitted side lines, evaluated at the
// lowest and highest mutually supported rows. Throws on detection failure or
// degenerate geometry (near-zero top width).
double measure_perspective_ratio(const Image& img, double gradient_threshold = 0.3);

// No-throw combined measurement for batch use.
struct PoseMeasurement {
  DetectStatus status = DetectStatus::FailBoth;
  double theta_deg = 0;
  double ratio_y = 0;
};
PoseMeasurement measure_pose(const Image& img, double gradient_threshold = 0.3);

// ---------------------------------------------------------------------------
// Batch mode over a dataset directory

struct PoseReportRow {
  std::string path;
  DetectStatus status = DetectStatus::FailBoth;
  double theta_deg = 0;
  double ratio_y = 0;
  RotationLabel rotation_label = RotationLabel::Neutral;
  Ring ring = Ring::Neutral;
};

std::vector<PoseReportRow> measure_dataset(const Dataset& ds,
                                           double gradient_threshold = 0.3);

// path, theta_measured, ratio_measured, detect_status
void write_pose_report(const std::string& path,
                       const std::vector<PoseReportRow>& rows);

struct AggregateRow {
  std::string name;
  int count = 0;
  double min = 0, mean = 0, sd = 0, max = 0;
};

// |theta| statistics per rotation label, in the Left Wide ... Right Wide
// row order.
std::vector<AggregateRow> aggregate_rotation(const std::vector<PoseReportRow>& rows);
// |ratio| statistics (percent) per ring, Negative Far ... Positive Far order.
std::vector<AggregateRow> aggregate_ratio(const std::vector<PoseReportRow>& rows);

std::string format_aggregate_table(const std::string& title,
                                   const std::vector<AggregateRow>& rows);
void write_aggregate_csv(const std::string& path,
                         const std::vector<AggregateRow>& rotation,
                         const std::vector<AggregateRow>& ratio);

}  // namespace pcblab
