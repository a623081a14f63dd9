#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "pcblab/posemeasure.hpp"
#include "pcblab/rng.hpp"
#include "pcblab/synthgen.hpp"

using namespace pcblab;

namespace {

Image bright_rect(int size, int x0, int x1, int y0, int y1) {
  Image img(size, size, 1, 0.05f);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) img.at(y, x, 0) = 0.8f;
  }
  return img;
}

BoardSpec flat_board(uint64_t seed) {
  auto lib = make_board_library(4, seed);
  BoardSpec b = lib[3];
  for (auto& c : b.components) c.height = 0.0;
  return b;
}

SceneParams scene_at(int row, int col, double theta) {
  SceneParams s;
  s.row = row;
  s.col = col;
  s.actual_theta = theta;
  s.instance_noise_seed = 5;
  return s;
}

}  // namespace

TEST_CASE("detect_side_edges: axis-aligned rectangle localizes both borders") {
  const Image img = bright_rect(128, 30, 98, 20, 108);
  const EdgeDetection det = detect_side_edges(img);
  REQUIRE(det.left_ok);
  REQUIRE(det.right_ok);
  // true borders sit between the last dark and first bright column
  CHECK(std::abs(det.left.x_at(60) - 29.5) <= 0.5);
  CHECK(std::abs(det.right.x_at(60) - 98.5) <= 0.5);
  CHECK(det.left.support >= 10);
  CHECK(det.left.residual <= 1.0);
  // direction is bottom-to-top
  CHECK(det.left.dy < 0);
}

TEST_CASE("detect_side_edges: uniform image fails on both sides") {
  const Image img(64, 64, 1, 0.4f);
  const EdgeDetection det = detect_side_edges(img);
  CHECK_FALSE(det.left_ok);
  CHECK_FALSE(det.right_ok);
  CHECK_THROWS_AS(measure_rotation(img), std::runtime_error);
  CHECK_THROWS_AS(measure_perspective_ratio(img), std::runtime_error);
}

TEST_CASE("measure_rotation: axis-aligned rectangle reads zero") {
  const Image img = bright_rect(128, 30, 98, 20, 108);
  CHECK(std::abs(measure_rotation(img)) <= 0.1);
}

TEST_CASE("measure_perspective_ratio: rectangle reads zero, trapezoid reads 0.10") {
  const Image rect = bright_rect(128, 30, 98, 10, 118);
  CHECK(std::abs(measure_perspective_ratio(rect)) <= 0.005);

  // trapezoid: top width 200 px, bottom width 220 px on a 256 canvas
  Image trap(256, 256, 1, 0.05f);
  const int y0 = 8, y1 = 247;
  for (int y = y0; y <= y1; ++y) {
    const double t = static_cast<double>(y - y0) / (y1 - y0);
    const double w = 200 + 20 * t;
    const int xl = static_cast<int>(std::lround(128 - w / 2));
    const int xr = static_cast<int>(std::lround(128 + w / 2));
    for (int x = xl; x <= xr; ++x) trap.at(y, x, 0) = 0.8f;
  }
  CHECK(measure_perspective_ratio(trap) == doctest::Approx(0.10).epsilon(0.05));
}

TEST_CASE("synthetic flat board, neutral pose: sub-pixel residuals") {
  const BoardSpec b = flat_board(7);
  const Image img = render(b, scene_at(2, 2, 0.0), 128);
  const EdgeDetection det = detect_side_edges(img);
  REQUIRE(det.left_ok);
  REQUIRE(det.right_ok);
  CHECK(det.left.residual <= 1.0);
  CHECK(det.right.residual <= 1.0);
}

TEST_CASE("rotation sweep at 128px: max abs error 0.5 degrees over +/-40") {
  const BoardSpec b = flat_board(7);
  double worst = 0;
  for (int t = -40; t <= 40; t += 5) {
    const Image img = render(b, scene_at(2, 2, t), 128);
    const double measured = measure_rotation(img);
    worst = std::max(worst, std::abs(measured - t));
  }
  CHECK(worst <= 0.5);
}

TEST_CASE("rotation recovery at the table means (neutral cell)") {
  const BoardSpec b = flat_board(9);
  // Left Shallow mean 12.39, Left Wide mean 21.31 (left rotations positive)
  for (double t : {12.39, 21.31}) {
    const Image img = render(b, scene_at(2, 2, t), 128);
    CHECK(measure_rotation(img) == doctest::Approx(t).epsilon(0.5 / t));
  }
}

TEST_CASE("rotation equivariance: warping by a rotation shifts the measurement") {
  const BoardSpec b = flat_board(11);
  const Image base = render(b, scene_at(2, 2, 4.0), 128);
  const double theta0 = measure_rotation(base);
  for (double phi : {-30.0, -12.0, 15.0, 28.0}) {
    const Image turned =
        warp(base, rotation_homography(phi, 63.5, 63.5), kBackgroundLevel);
    const double theta1 = measure_rotation(turned);
    CHECK(std::abs(theta1 - (theta0 + phi)) <= 0.5);
  }
}

TEST_CASE("perspective ratio recovery through warp: within 0.01 absolute") {
  // full-height rectangle so the measured span matches the frame the
  // homography's ratio is defined over
  const int S = 128;
  Image img(S, S, 1, 0.05f);
  for (int y = 0; y < S; ++y) {
    for (int x = 24; x <= 104; ++x) img.at(y, x, 0) = 0.8f;
  }
  for (double r : {-0.2, -0.1, 0.05, 0.15}) {
    const Image warped = warp(img, perspective_homography(r, 0, S, S), 0.05f);
    CHECK(std::abs(measure_perspective_ratio(warped) - r) <= 0.01);
  }
}

TEST_CASE("ratio is stable under small in-plane rotations of a rectangle") {
  const Image rect = bright_rect(128, 34, 94, 6, 121);
  const double r0 = measure_perspective_ratio(rect);
  for (double phi : {-5.0, -2.0, 2.0, 5.0}) {
    const Image turned = warp(rect, rotation_homography(phi, 63.5, 63.5), 0.05f);
    CHECK(std::abs(measure_perspective_ratio(turned) - r0) <= 0.01);
  }
}

TEST_CASE("flat board at a negative-far cell: ratio matches the closed form") {
  const BoardSpec b = flat_board(13);
  for (double theta : {0.0, 3.0, -2.0}) {
    const SceneParams sc = scene_at(0, 1, theta);  // negative far ring
    REQUIRE(ring_class(ring_for_cell(0, 1)) == RingClass::Far);
    const GroundTruthPose gt = closed_form_pose(b, sc, 128);
    const Image img = render(b, sc, 128);
    CHECK(std::abs(measure_perspective_ratio(img) - gt.ratio_y) <= 0.01);
  }
}

TEST_CASE("failure honesty: uniform noise images almost never yield a pose") {
  Rng rng(17);
  int failures = 0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    Image img(64, 64, 3);
    for (auto& p : img.pix) p = static_cast<float>(rng.uniform01());
    if (measure_pose(img).status != DetectStatus::Ok) ++failures;
  }
  CHECK(failures >= 990);
}

TEST_CASE("batch measurement: ring aggregates order Far > Near > Neutral") {
  const auto lib = make_board_library(2, 19);
  const Dataset ds = generate_dataset(lib, 64, 21);
  const auto rows = measure_dataset(ds);
  const auto agg = aggregate_ratio(rows);
  REQUIRE(agg.size() == 5);
  const double far_mean = (agg[0].mean + agg[4].mean) / 2;   // negative/positive far
  const double near_mean = (agg[1].mean + agg[3].mean) / 2;  // negative/positive near
  const double neutral_mean = agg[2].mean;
  CHECK(far_mean > near_mean);
  CHECK(near_mean > neutral_mean);
  int ok = 0;
  for (const auto& r : rows) {
    if (r.status == DetectStatus::Ok) ++ok;
  }
  CHECK(ok >= static_cast<int>(0.95 * rows.size()));
}
