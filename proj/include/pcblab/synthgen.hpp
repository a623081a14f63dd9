#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcblab/geometry.hpp"
#include "pcblab/image.hpp"

namespace pcblab {

// Uniform background level outside the board; also the natural warp fill.
inline constexpr float kBackgroundLevel = 0.06f;

struct BoardComponent {
  double x = 0, y = 0;       // center, board units, board-local frame
  double w = 0.3, h = 0.3;   // footprint size, board units
  double height = 0.0;       // raised height above the board plane
  uint64_t appearance_seed = 0;
};

// Procedural board definition. Component positions are fixed per class; the
// appearance seeds carry the texture/color identity.
struct BoardSpec {
  int class_id = 0;
  double board_w = 2.6;  // board units ("inches" of the capture rig)
  double board_h = 3.4;
  std::vector<BoardComponent> components;
  uint64_t base_texture_seed = 0;
};

// Fixed capture geometry: 5x5 grid, neighbors `grid_spacing` apart, camera
// `camera_height` above the central cell, aimed at the occupied cell.
struct CameraRig {
  double camera_height = 16.0;
  double grid_spacing = 6.0;
  // Half-width of the field of view measured on the capture surface at the
  // neutral distance; sets the focal length.
  double frame_half_extent = 3.0;
};

struct SceneParams {
  int row = 2, col = 2;  // grid position, (2,2) is under the camera
  RotationLabel rotation_label = RotationLabel::Neutral;
  double actual_theta = 0.0;  // placed in-plane rotation, degrees, image sign convention
  uint64_t instance_noise_seed = 0;
  CameraRig camera;
};

// Pose as it appears in the image: the angle a perfect left-edge measurement
// would return, and the signed bottom/top width ratio (fraction).
struct GroundTruthPose {
  double theta_deg = 0;
  double ratio_y = 0;
  double ratio_x = 0;
};

enum class Split { Train, Test };

struct LabeledSample {
  ImageU8 image;
  int class_id = 0;
  RotationLabel rotation_label = RotationLabel::Neutral;
  PerspectiveLabel perspective;
  GroundTruthPose ground_truth;
  Split split = Split::Train;
  double placed_theta = 0.0;  // the draw that produced the scene
  std::string rel_path;       // set by write/load
};

struct Dataset {
  std::vector<LabeledSample> samples;
  int num_classes = 0;
  int image_size = 0;
};

// Deterministic library of procedurally distinct boards. Classes 0 and 1
// share the same component layout but differ in appearance seeds (the
// same-model/different-manufacturer confusable pair).
std::vector<BoardSpec> make_board_library(int n_classes, uint64_t seed);

// Exact base-plane homography from board coordinates to image pixels.
Homography scene_homography(const SceneParams& scene, int out_size);

// Raycast render: base plane through the induced homography, raised
// component tops through their own planes (the parallax of off-center
// cells). Flat boards therefore render exactly as a homography of the
// neutral render.
Image render(const BoardSpec& board, const SceneParams& scene, int out_size);

GroundTruthPose closed_form_pose(const BoardSpec& board, const SceneParams& scene,
                                 int out_size);

// Per class: 25 grid cells x 5 rotation labels x (4 train + 1 test) =
// 500 train / 125 test samples, with per-sample placed angles drawn from
// the rotation-band statistics. Train and test use distinct instance seeds.
Dataset generate_dataset(const std::vector<BoardSpec>& library, int out_size,
                         uint64_t seed);

// Placed-angle band sampler (|theta| from the label's measured band, sign:
// left positive, right negative, neutral random).
double draw_placed_theta(RotationLabel label, Rng& rng);

// Directory layout: <root>/<class_id>/<split>/r<row>c<col>_<label>_<copy>.ppm
// plus manifest.csv (path,class_id,split,row,col,rotation_label,theta_true,
// ratio_y_true).
void write_dataset(const Dataset& ds, const std::string& root);
Dataset load_dataset(const std::string& root);

// Order-independent digest of the test split (pixels + labels).
uint64_t dataset_test_hash(const Dataset& ds);

}  // namespace pcblab
