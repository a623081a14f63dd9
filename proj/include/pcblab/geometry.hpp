#pragma once

#include <array>
#include <string>
#include <vector>

#include "pcblab/image.hpp"
#include "pcblab/rng.hpp"

namespace pcblab {

// 3x3 projective transform on pixel coordinates. Affine transforms are the
// special case with bottom row (0,0,1).
struct Homography {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Homography identity() { return Homography{}; }

  double& at(int r, int c) { return m[static_cast<size_t>(r) * 3 + c]; }
  double at(int r, int c) const { return m[static_cast<size_t>(r) * 3 + c]; }

  // Applies the transform to (x, y) with perspective division.
  void apply(double x, double y, double& ox, double& oy) const;

  bool is_affine(double tol = 1e-12) const;
};

// compose(a, b) applies b first, then a.
Homography compose(const Homography& a, const Homography& b);
Homography invert(const Homography& h);
// Scales so m[2][2] == 1 when possible; throws on a singular matrix.
Homography normalized(const Homography& h);
double frobenius_distance(const Homography& a, const Homography& b);

Homography translation_homography(double tx, double ty);
// Pure in-plane rotation about `center`, counterclockwise-positive in the
// (x right, y down... sign fixed by: theta=90 maps (1,0) to (0,1) about the
// origin). "Left" rotations are positive by convention.
Homography rotation_homography(double theta_deg, double cx, double cy);
// Maps the full image rectangle to a trapezoid whose measured bottom/top
// width ratio equals ratio_y, and left/right height ratio equals ratio_x.
// Ratios are signed fractions with |ratio| < 1; (0, 0) is the identity.
Homography perspective_homography(double ratio_y, double ratio_x, int width,
                                  int height);
// Least-squares-free exact 4-point homography (unit quad correspondence).
Homography homography_from_points(const std::array<std::array<double, 2>, 4>& src,
                                  const std::array<std::array<double, 2>, 4>& dst);

// Inverse-mapped bilinear resampling; source taps outside the image take
// `fill`. Output dimensions equal input dimensions.
Image warp(const Image& img, const Homography& h, float fill);

// ---------------------------------------------------------------------------
// Capture-pose taxonomy

enum class RotationLabel : int {
  LeftWide = 0,
  LeftShallow = 1,
  Neutral = 2,
  RightShallow = 3,
  RightWide = 4,
};
inline constexpr int kNumRotationLabels = 5;

enum class Ring : int {
  NegativeFar = 0,
  NegativeNear = 1,
  Neutral = 2,
  PositiveNear = 3,
  PositiveFar = 4,
};
inline constexpr int kNumRings = 5;

enum class RingClass : int { Neutral = 0, Near = 1, Far = 2 };

struct PerspectiveLabel {
  Ring ring = Ring::Neutral;
  int row = 2;
  int col = 2;
};

// Total over the 5x5 grid: center cell -> Neutral, the 8 adjacent cells ->
// Near, the outer 16 -> Far. Sign is taken from the column side (left of
// center -> negative, right -> positive); cells on the center column take
// the sign of the row side (above -> negative, below -> positive).
Ring ring_for_cell(int row, int col);
RingClass ring_class(Ring ring);

std::string to_string(RotationLabel label);
std::string to_string(Ring ring);
std::string display_name(RotationLabel label);
std::string display_name(Ring ring);
RotationLabel rotation_label_from_string(const std::string& s);

// Min/Mean/SD/Max rows of the measured capture statistics. Rotation values
// are degrees (absolute deviation from neutral); ratio values are percent.
struct LabelStats {
  double min = 0, mean = 0, sd = 0, max = 0;
};
const std::array<LabelStats, kNumRotationLabels>& rotation_stats();
const std::array<LabelStats, kNumRings>& ratio_stats();

// ---------------------------------------------------------------------------
// Augmentation policy

struct AugmentPolicy {
  // sigma of the zero-mean rotation draw, degrees, per rotation label
  std::array<double, kNumRotationLabels> rotation_sd;
  // mean placement deviation, degrees (used by the synthetic generator)
  std::array<double, kNumRotationLabels> rotation_mean;
  // sigma of the zero-mean perspective-ratio draw, percent, per ring
  std::array<double, kNumRings> perspective_sd;
  double translation_bound = 0.05;
  bool simulate_rotations = false;
  bool simulate_perspectives = false;
  // When simulating excluded categories, draws take sigma from a label picked
  // uniformly out of these pools instead of the sample's own label.
  std::vector<RotationLabel> rotation_sim_pool;
  std::vector<Ring> ring_sim_pool;
  // Apply the width/height-scaled x ratio alongside the y ratio.
  bool perspective_both_axes = true;
  float fill_value = 0.0f;

  static AugmentPolicy defaults();
};

struct AugmentDraw {
  double theta_deg = 0;    // in-plane rotation
  double ratio_y_pct = 0;  // perspective ratio, percent
  double ratio_x_pct = 0;  // estimated x ratio, percent
  double tx = 0;           // translation, pixels
  double ty = 0;
};

// Translation jitter is always drawn; rotation/perspective only when the
// corresponding simulate flag is set.
AugmentDraw sample_augmentation(RotationLabel label, Ring ring,
                                const AugmentPolicy& policy, Rng& rng,
                                int width, int height);

// Combined warp transform for one draw: perspective and rotation about the
// image center, then translation.
Homography augmentation_homography(const AugmentDraw& draw, int width,
                                   int height);

}  // namespace pcblab
