#include "pcblab/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pcblab {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

void Homography::apply(double x, double y, double& ox, double& oy) const {
  const double w = m[6] * x + m[7] * y + m[8];
  ox = (m[0] * x + m[1] * y + m[2]) / w;
  oy = (m[3] * x + m[4] * y + m[5]) / w;
}

bool Homography::is_affine(double tol) const {
  const Homography n = normalized(*this);
  return std::abs(n.m[6]) <= tol && std::abs(n.m[7]) <= tol;
}

Homography compose(const Homography& a, const Homography& b) {
  Homography r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += a.at(i, k) * b.at(k, j);
      r.at(i, j) = s;
    }
  }
  return r;
}

static double det3(const Homography& h) {
  const auto& m = h.m;
  return m[0] * (m[4] * m[8] - m[5] * m[7]) -
         m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Homography normalized(const Homography& h) {
  Homography r = h;
  if (r.m[8] != 0.0) {
    const double inv = 1.0 / r.m[8];
    for (double& v : r.m) v *= inv;
  }
  if (std::abs(det3(r)) <= 1e-12) {
    throw std::invalid_argument("homography: singular matrix");
  }
  return r;
}

Homography invert(const Homography& h) {
  const double d = det3(h);
  if (std::abs(d) <= 1e-12 * std::max(1.0, std::abs(h.m[8]))) {
    throw std::invalid_argument("homography: cannot invert singular matrix");
  }
  const auto& m = h.m;
  Homography r;
  const double inv = 1.0 / d;
  r.m[0] = (m[4] * m[8] - m[5] * m[7]) * inv;
  r.m[1] = (m[2] * m[7] - m[1] * m[8]) * inv;
  r.m[2] = (m[1] * m[5] - m[2] * m[4]) * inv;
  r.m[3] = (m[5] * m[6] - m[3] * m[8]) * inv;
  r.m[4] = (m[0] * m[8] - m[2] * m[6]) * inv;
  r.m[5] = (m[2] * m[3] - m[0] * m[5]) * inv;
  r.m[6] = (m[3] * m[7] - m[4] * m[6]) * inv;
  r.m[7] = (m[1] * m[6] - m[0] * m[7]) * inv;
  r.m[8] = (m[0] * m[4] - m[1] * m[3]) * inv;
  return normalized(r);
}

double frobenius_distance(const Homography& a, const Homography& b) {
  double s = 0;
  for (int i = 0; i < 9; ++i) {
    const double d = a.m[i] - b.m[i];
    s += d * d;
  }
  return std::sqrt(s);
}

Homography translation_homography(double tx, double ty) {
  Homography h;
  h.m = {1, 0, tx, 0, 1, ty, 0, 0, 1};
  return h;
}

Homography rotation_homography(double theta_deg, double cx, double cy) {
  const double t = theta_deg * kPi / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  Homography h;
  h.m = {c, -s, cx - c * cx + s * cy,
         s, c,  cy - s * cx - c * cy,
         0, 0,  1};
  return h;
}

Homography homography_from_points(
    const std::array<std::array<double, 2>, 4>& src,
    const std::array<std::array<double, 2>, 4>& dst) {
  // 8x8 linear system for h with h[8] = 1, Gaussian elimination with
  // partial pivoting.
  double a[8][9] = {};
  for (int i = 0; i < 4; ++i) {
    const double x = src[i][0], y = src[i][1];
    const double X = dst[i][0], Y = dst[i][1];
    double* r0 = a[2 * i];
    double* r1 = a[2 * i + 1];
    r0[0] = x; r0[1] = y; r0[2] = 1;
    r0[6] = -x * X; r0[7] = -y * X; r0[8] = X;
    r1[3] = x; r1[4] = y; r1[5] = 1;
    r1[6] = -x * Y; r1[7] = -y * Y; r1[8] = Y;
  }
  for (int col = 0; col < 8; ++col) {
    int piv = col;
    for (int r = col + 1; r < 8; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    }
    if (std::abs(a[piv][col]) < 1e-12) {
      throw std::invalid_argument("homography_from_points: degenerate correspondence");
    }
    if (piv != col) std::swap_ranges(a[piv], a[piv] + 9, a[col]);
    const double inv = 1.0 / a[col][col];
    for (int c = col; c < 9; ++c) a[col][c] *= inv;
    for (int r = 0; r < 8; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      if (f == 0.0) continue;
      for (int c = col; c < 9; ++c) a[r][c] -= f * a[col][c];
    }
  }
  Homography h;
  for (int i = 0; i < 8; ++i) h.m[static_cast<size_t>(i)] = a[i][8];
  h.m[8] = 1.0;
  return h;
}

Homography perspective_homography(double ratio_y, double ratio_x, int width,
                                  int height) {
  if (std::abs(ratio_y) >= 1.0 || std::abs(ratio_x) >= 1.0) {
    throw std::invalid_argument("perspective_homography: |ratio| must be < 1");
  }
  const double W = width - 1.0, H = height - 1.0;
  // Width at the bottom row is W(1 + py), at the top row W(1 - py), giving a
  // measured (bottom - top)/top ratio of exactly ratio_y over the full frame;
  // analogously for the left/right heights and ratio_x.
  const double py = ratio_y / (2.0 + ratio_y);
  const double px = ratio_x / (2.0 + ratio_x);
  const double dx = py * W / 2.0;
  const double dy = px * H / 2.0;
  const std::array<std::array<double, 2>, 4> src = {{{0, 0}, {W, 0}, {W, H}, {0, H}}};
  const std::array<std::array<double, 2>, 4> dst = {{{0 + dx, 0 - dy},
                                                     {W - dx, 0 + dy},
                                                     {W + dx, H - dy},
                                                     {0 - dx, H + dy}}};
  return homography_from_points(src, dst);
}

Image warp(const Image& img, const Homography& h, float fill) {
  const Homography hinv = invert(h);
  Image out(img.h, img.w, img.c, fill);
  const int H = img.h, W = img.w, C = img.c;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double sx, sy;
      hinv.apply(static_cast<double>(x), static_cast<double>(y), sx, sy);
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      const double w00 = (1 - fx) * (1 - fy);
      const double w01 = fx * (1 - fy);
      const double w10 = (1 - fx) * fy;
      const double w11 = fx * fy;
      for (int ch = 0; ch < C; ++ch) {
        auto tap = [&](int yy, int xx) -> double {
          if (yy < 0 || yy >= H || xx < 0 || xx >= W) return fill;
          return img.at(yy, xx, ch);
        };
        const double v = w00 * tap(y0, x0) + w01 * tap(y0, x0 + 1) +
                         w10 * tap(y0 + 1, x0) + w11 * tap(y0 + 1, x0 + 1);
        out.at(y, x, ch) = static_cast<float>(v);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Ring ring_for_cell(int row, int col) {
  if (row < 0 || row >= 5 || col < 0 || col >= 5) {
    throw std::invalid_argument("ring_for_cell: grid position out of 5x5 range");
  }
  const int dr = row - 2, dc = col - 2;
  const int cheb = std::max(std::abs(dr), std::abs(dc));
  if (cheb == 0) return Ring::Neutral;
  const bool negative = (dc < 0) || (dc == 0 && dr < 0);
  if (cheb == 1) return negative ? Ring::NegativeNear : Ring::PositiveNear;
  return negative ? Ring::NegativeFar : Ring::PositiveFar;
}

RingClass ring_class(Ring ring) {
  switch (ring) {
    case Ring::Neutral: return RingClass::Neutral;
    case Ring::NegativeNear:
    case Ring::PositiveNear: return RingClass::Near;
    default: return RingClass::Far;
  }
}

std::string to_string(RotationLabel label) {
  switch (label) {
    case RotationLabel::LeftWide: return "leftwide";
    case RotationLabel::LeftShallow: return "leftshallow";
    case RotationLabel::Neutral: return "neutral";
    case RotationLabel::RightShallow: return "rightshallow";
    case RotationLabel::RightWide: return "rightwide";
  }
  return "?";
}

std::string to_string(Ring ring) {
  switch (ring) {
    case Ring::NegativeFar: return "negfar";
    case Ring::NegativeNear: return "negnear";
    case Ring::Neutral: return "neutral";
    case Ring::PositiveNear: return "posnear";
    case Ring::PositiveFar: return "posfar";
  }
  return "?";
}

std::string display_name(RotationLabel label) {
  switch (label) {
    case RotationLabel::LeftWide: return "Left Wide";
    case RotationLabel::LeftShallow: return "Left Shallow";
    case RotationLabel::Neutral: return "Neutral";
    case RotationLabel::RightShallow: return "Right Shallow";
    case RotationLabel::RightWide: return "Right Wide";
  }
  return "?";
}

std::string display_name(Ring ring) {
  switch (ring) {
    case Ring::NegativeFar: return "Negative Far";
    case Ring::NegativeNear: return "Negative Near";
    case Ring::Neutral: return "Neutral";
    case Ring::PositiveNear: return "Positive Near";
    case Ring::PositiveFar: return "Positive Far";
  }
  return "?";
}

RotationLabel rotation_label_from_string(const std::string& s) {
  for (int i = 0; i < kNumRotationLabels; ++i) {
    if (to_string(static_cast<RotationLabel>(i)) == s) {
      return static_cast<RotationLabel>(i);
    }
  }
  throw std::invalid_argument("unknown rotation label: " + s);
}

const std::array<LabelStats, kNumRotationLabels>& rotation_stats() {
  static const std::array<LabelStats, kNumRotationLabels> kStats = {{
      {10.43, 21.31, 4.50481, 32.78602043},  // Left Wide
      {4.23, 12.39, 3.59036, 23.72892221},   // Left Shallow
      {0.0, 2.475, 2.04823, 12.76094982},    // Neutral
      {0.16, 14.73, 4.46218, 31.52155152},   // Right Shallow
      {0.76, 24.31, 5.27139, 42.84832537},   // Right Wide
  }};
  return kStats;
}

const std::array<LabelStats, kNumRings>& ratio_stats() {
  static const std::array<LabelStats, kNumRings> kStats = {{
      {0.0, 12.71, 6.27130, 48.18},  // Negative Far
      {0.0, 7.94, 5.05283, 29.66},   // Negative Near
      {0.0, 4.40, 3.50910, 20.90},   // Neutral
      {0.0, 7.09, 3.59487, 26.76},   // Positive Near
      {0.0, 11.45, 4.36561, 23.13},  // Positive Far
  }};
  return kStats;
}

AugmentPolicy AugmentPolicy::defaults() {
  AugmentPolicy p;
  for (int i = 0; i < kNumRotationLabels; ++i) {
    p.rotation_sd[static_cast<size_t>(i)] = rotation_stats()[static_cast<size_t>(i)].sd;
    p.rotation_mean[static_cast<size_t>(i)] = rotation_stats()[static_cast<size_t>(i)].mean;
  }
  for (int i = 0; i < kNumRings; ++i) {
    p.perspective_sd[static_cast<size_t>(i)] = ratio_stats()[static_cast<size_t>(i)].sd;
  }
  return p;
}

AugmentDraw sample_augmentation(RotationLabel label, Ring ring,
                                const AugmentPolicy& policy, Rng& rng,
                                int width, int height) {
  AugmentDraw d;
  if (policy.simulate_rotations) {
    RotationLabel lbl = label;
    if (!policy.rotation_sim_pool.empty()) {
      lbl = policy.rotation_sim_pool[rng.uniform_index(policy.rotation_sim_pool.size())];
    }
    d.theta_deg = rng.normal(0.0, policy.rotation_sd[static_cast<size_t>(lbl)]);
  }
  if (policy.simulate_perspectives) {
    Ring rg = ring;
    if (!policy.ring_sim_pool.empty()) {
      rg = policy.ring_sim_pool[rng.uniform_index(policy.ring_sim_pool.size())];
    }
    d.ratio_y_pct = rng.normal(0.0, policy.perspective_sd[static_cast<size_t>(rg)]);
    if (policy.perspective_both_axes) {
      d.ratio_x_pct = d.ratio_y_pct * static_cast<double>(width) / height;
    }
  }
  d.tx = rng.uniform(-policy.translation_bound, policy.translation_bound) * width;
  d.ty = rng.uniform(-policy.translation_bound, policy.translation_bound) * height;
  return d;
}

Homography augmentation_homography(const AugmentDraw& draw, int width,
                                   int height) {
  const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
  Homography h = Homography::identity();
  if (draw.ratio_y_pct != 0.0 || draw.ratio_x_pct != 0.0) {
    h = perspective_homography(draw.ratio_y_pct / 100.0, draw.ratio_x_pct / 100.0,
                               width, height);
  }
  if (draw.theta_deg != 0.0) {
    h = compose(rotation_homography(draw.theta_deg, cx, cy), h);
  }
  if (draw.tx != 0.0 || draw.ty != 0.0) {
    h = compose(translation_homography(draw.tx, draw.ty), h);
  }
  return h;
}

}  // namespace pcblab
