#include "pcblab/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pcblab {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator*(const Vec3& a, double s) { return {a.x * s, a.y * s, a.z * s}; }
double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
Vec3 normalize(const Vec3& a) {
  const double n = std::sqrt(dot(a, a));
  return {a.x / n, a.y / n, a.z / n};
}

// Camera frame: position, orthonormal basis (right, down, forward) and the
// pinhole intrinsics. The camera sits above the central cell and is aimed at
// the occupied cell; image +y is "down" and maps to world -y at neutral.
struct CameraFrame {
  Vec3 pos, right, down, fwd;
  double focal = 0, cx = 0, cy = 0;
};

// Board placement on the capture surface. Column 0 is left of the camera
// (world -x), row 0 is above it (world +y). The placed image-space rotation
// theta corresponds to a world rotation of -theta because image y is flipped
// relative to world y.
struct Placement {
  double gx = 0, gy = 0;
  double cosw = 1, sinw = 0;  // world rotation
};

Placement placement_for(const SceneParams& scene) {
  Placement p;
  p.gx = (scene.col - 2) * scene.camera.grid_spacing;
  p.gy = (2 - scene.row) * scene.camera.grid_spacing;
  const double tw = -scene.actual_theta * kPi / 180.0;
  p.cosw = std::cos(tw);
  p.sinw = std::sin(tw);
  return p;
}

CameraFrame camera_for(const SceneParams& scene, int out_size) {
  const Placement pl = placement_for(scene);
  CameraFrame cam;
  cam.pos = {0, 0, scene.camera.camera_height};
  const Vec3 target = {pl.gx, pl.gy, 0};
  cam.fwd = normalize(target - cam.pos);
  const Vec3 d0 = {0, -1, 0};
  cam.down = normalize(d0 - cam.fwd * dot(d0, cam.fwd));
  cam.right = cross(cam.down, cam.fwd);
  cam.focal = (out_size - 1) * scene.camera.camera_height /
              (2.0 * scene.camera.frame_half_extent);
  cam.cx = (out_size - 1) / 2.0;
  cam.cy = (out_size - 1) / 2.0;
  return cam;
}

void board_from_world(const Placement& pl, double wx, double wy, double& u,
                      double& v) {
  const double dx = wx - pl.gx, dy = wy - pl.gy;
  u = pl.cosw * dx + pl.sinw * dy;
  v = -pl.sinw * dx + pl.cosw * dy;
}

// ---------------------------------------------------------------------------
// Procedural texture

double u01(uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

double lattice(int64_t xi, int64_t yi, uint64_t seed) {
  return u01(Rng::mix3(seed, static_cast<uint64_t>(xi) * 2654435761ULL,
                       static_cast<uint64_t>(yi) * 40503ULL));
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Smooth value noise in [0,1), C1-continuous across the lattice.
double value_noise(double x, double y, uint64_t seed) {
  const double fx = std::floor(x), fy = std::floor(y);
  const int64_t xi = static_cast<int64_t>(fx), yi = static_cast<int64_t>(fy);
  const double tx = smoothstep(x - fx), ty = smoothstep(y - fy);
  const double v00 = lattice(xi, yi, seed), v01 = lattice(xi + 1, yi, seed);
  const double v10 = lattice(xi, yi + 1, seed), v11 = lattice(xi + 1, yi + 1, seed);
  const double a = v00 + (v01 - v00) * tx;
  const double b = v10 + (v11 - v10) * tx;
  return a + (b - a) * ty;
}

struct Rgb {
  double r = 0, g = 0, b = 0;
};

// The luma range is kept compressed so the board-to-background step stays
// above the detection threshold (a fraction of the image's max gradient)
// even next to the strongest component-to-component contrast.
Rgb base_shade(const BoardSpec& board, uint64_t instance_seed, double u, double v) {
  const double broad = value_noise(u * 2.5, v * 2.5, board.base_texture_seed) - 0.5;
  const double fine = value_noise(u * 9.0, v * 9.0, board.base_texture_seed ^ 0x5bd1e995ULL) - 0.5;
  const double inst =
      value_noise(u * 13.0, v * 13.0, Rng::mix(board.base_texture_seed, instance_seed)) - 0.5;
  Rgb c{0.20, 0.50, 0.28};
  const double m = 0.04 * broad + 0.02 * fine + 0.015 * inst;
  c.r += m * 0.6;
  c.g += m;
  c.b += m * 0.7;
  return c;
}

Rgb component_shade(const BoardComponent& comp, uint64_t instance_seed, double u,
                    double v) {
  static const Rgb kPalette[6] = {
      {0.15, 0.15, 0.17},  // IC dark
      {0.60, 0.62, 0.64},  // metal silver
      {0.52, 0.38, 0.24},  // electrolytic tan
      {0.22, 0.26, 0.50},  // connector blue
      {0.34, 0.34, 0.36},  // mid gray
      {0.60, 0.53, 0.28},  // gold pad
  };
  const uint64_t s = comp.appearance_seed;
  Rgb c = kPalette[Rng::mix(s, 17) % 6];
  const double j = (u01(Rng::mix(s, 29)) - 0.5) * 0.08;
  const double fine = value_noise(u * 22.0, v * 22.0, s) - 0.5;
  const double inst = value_noise(u * 18.0, v * 18.0, Rng::mix(s, instance_seed)) - 0.5;
  const double m = j + 0.05 * fine + 0.035 * inst;
  c.r += m;
  c.g += m;
  c.b += m;
  // darker rim so footprints read as parts, not flat patches
  const double lu = (u - comp.x) / comp.w + 0.5;
  const double lv = (v - comp.y) / comp.h + 0.5;
  const double rim = std::min(std::min(lu, 1.0 - lu), std::min(lv, 1.0 - lv));
  if (rim < 0.10) {
    const double k = 0.6 + 4.0 * rim;
    c.r *= k;
    c.g *= k;
    c.b *= k;
  }
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<BoardSpec> make_board_library(int n_classes, uint64_t seed) {
  if (n_classes < 2) {
    throw std::invalid_argument("make_board_library: need at least 2 classes");
  }
  const Rng master(seed);
  std::vector<BoardSpec> lib;
  lib.reserve(static_cast<size_t>(n_classes));
  for (int c = 0; c < n_classes; ++c) {
    Rng rng = master.split(static_cast<uint64_t>(c));
    BoardSpec b;
    b.class_id = c;
    if (c == 1) {
      // Confusable pair: same layout as class 0, different appearance.
      b.board_w = lib[0].board_w;
      b.board_h = lib[0].board_h;
      b.components = lib[0].components;
      for (auto& comp : b.components) comp.appearance_seed = rng.next_u64();
      b.base_texture_seed = rng.next_u64();
      lib.push_back(std::move(b));
      continue;
    }
    b.board_w = rng.uniform(2.2, 3.0);
    b.board_h = rng.uniform(2.8, 3.8);
    const int ncomp = 6 + static_cast<int>(rng.uniform_index(9));
    const double margin = 0.22;
    for (int i = 0; i < ncomp; ++i) {
      BoardComponent comp;
      comp.w = rng.uniform(0.18, 0.72);
      comp.h = rng.uniform(0.18, 0.72);
      comp.height = rng.uniform01() < 0.7 ? rng.uniform(0.02, 0.10)
                                          : rng.uniform(0.15, 0.45);
      const double xr = b.board_w / 2 - margin - comp.w / 2;
      const double yr = b.board_h / 2 - margin - comp.h / 2;
      comp.x = rng.uniform(-xr, xr);
      comp.y = rng.uniform(-yr, yr);
      comp.appearance_seed = rng.next_u64();
      b.components.push_back(comp);
    }
    b.base_texture_seed = rng.next_u64();
    lib.push_back(std::move(b));
  }
  return lib;
}

Homography scene_homography(const SceneParams& scene, int out_size) {
  const Placement pl = placement_for(scene);
  const CameraFrame cam = camera_for(scene, out_size);
  // Board-plane frame: P(u,v) = a*u + b*v + g0 on z=0.
  const Vec3 a = {pl.cosw, pl.sinw, 0};
  const Vec3 b = {-pl.sinw, pl.cosw, 0};
  const Vec3 g0 = {pl.gx, pl.gy, 0};
  const Vec3 cols[3] = {a, b, g0 - cam.pos};
  Homography h;
  for (int j = 0; j < 3; ++j) {
    const double xc = dot(cols[j], cam.right);
    const double yc = dot(cols[j], cam.down);
    const double zc = dot(cols[j], cam.fwd);
    h.at(0, j) = cam.focal * xc + cam.cx * zc;
    h.at(1, j) = cam.focal * yc + cam.cy * zc;
    h.at(2, j) = zc;
  }
  return normalized(h);
}

Image render(const BoardSpec& board, const SceneParams& scene, int out_size) {
  const Placement pl = placement_for(scene);
  const CameraFrame cam = camera_for(scene, out_size);

  // Field-of-view sanity: the board's circumscribed circle must project
  // inside the frame.
  const double radius = 0.5 * std::hypot(board.board_w, board.board_h);
  const double dist = std::sqrt(pl.gx * pl.gx + pl.gy * pl.gy +
                                scene.camera.camera_height * scene.camera.camera_height);
  if (radius * scene.camera.camera_height / dist > scene.camera.frame_half_extent) {
    throw std::invalid_argument("render: board does not fit the field of view");
  }

  // Taller components are hit first along a downward ray.
  std::vector<const BoardComponent*> order;
  order.reserve(board.components.size());
  for (const auto& comp : board.components) order.push_back(&comp);
  std::stable_sort(order.begin(), order.end(),
                   [](const BoardComponent* a, const BoardComponent* b) {
                     return a->height > b->height;
                   });

  const int ss = 3;  // supersampling grid per pixel axis
  Image img(out_size, out_size, 3, kBackgroundLevel);
  const double hw = board.board_w / 2, hh = board.board_h / 2;

#pragma omp parallel for schedule(static)
  for (int py = 0; py < out_size; ++py) {
    for (int px = 0; px < out_size; ++px) {
      Rgb acc;
      for (int sy = 0; sy < ss; ++sy) {
        for (int sx = 0; sx < ss; ++sx) {
          const double ix = px + (sx + 0.5) / ss - 0.5;
          const double iy = py + (sy + 0.5) / ss - 0.5;
          const Vec3 dir = cam.right * ((ix - cam.cx) / cam.focal) +
                           cam.down * ((iy - cam.cy) / cam.focal) + cam.fwd;
          Rgb c{kBackgroundLevel, kBackgroundLevel, kBackgroundLevel};
          bool hit = false;
          for (const BoardComponent* comp : order) {
            const double t = (comp->height - cam.pos.z) / dir.z;
            const Vec3 p = cam.pos + dir * t;
            double u, v;
            board_from_world(pl, p.x, p.y, u, v);
            if (std::abs(u - comp->x) <= comp->w / 2 &&
                std::abs(v - comp->y) <= comp->h / 2) {
              c = component_shade(*comp, scene.instance_noise_seed, u, v);
              hit = true;
              break;
            }
          }
          if (!hit) {
            const double t = -cam.pos.z / dir.z;
            const Vec3 p = cam.pos + dir * t;
            double u, v;
            board_from_world(pl, p.x, p.y, u, v);
            if (std::abs(u) <= hw && std::abs(v) <= hh) {
              c = base_shade(board, scene.instance_noise_seed, u, v);
            }
          }
          acc.r += c.r;
          acc.g += c.g;
          acc.b += c.b;
        }
      }
      const double inv = 1.0 / (ss * ss);
      img.at(py, px, 0) = static_cast<float>(std::clamp(acc.r * inv, 0.0, 1.0));
      img.at(py, px, 1) = static_cast<float>(std::clamp(acc.g * inv, 0.0, 1.0));
      img.at(py, px, 2) = static_cast<float>(std::clamp(acc.b * inv, 0.0, 1.0));
    }
  }
  return img;
}

GroundTruthPose closed_form_pose(const BoardSpec& board, const SceneParams& scene,
                                 int out_size) {
  const Homography h = scene_homography(scene, out_size);
  const double hw = board.board_w / 2, hh = board.board_h / 2;
  // Side endpoints in board coordinates: left side u=-hw, right side u=+hw.
  double lx0, ly0, lx1, ly1, rx0, ry0, rx1, ry1;
  h.apply(-hw, -hh, lx0, ly0);
  h.apply(-hw, +hh, lx1, ly1);
  h.apply(+hw, -hh, rx0, ry0);
  h.apply(+hw, +hh, rx1, ry1);

  GroundTruthPose gt;
  // Angle of the left side, bottom-to-top, against vertical.
  double ux = lx1 - lx0, uy = ly1 - ly0;
  if (uy > 0) {
    ux = -ux;
    uy = -uy;
  }
  gt.theta_deg = std::atan2(ux, -uy) * 180.0 / kPi;

  // Width between the side lines at the lowest/highest mutually supported rows.
  auto x_at = [](double x0, double y0, double x1, double y1, double y) {
    return x0 + (x1 - x0) * (y - y0) / (y1 - y0);
  };
  const double ytop = std::max(std::min(ly0, ly1), std::min(ry0, ry1));
  const double ybot = std::min(std::max(ly0, ly1), std::max(ry0, ry1));
  const double wtop = x_at(rx0, ry0, rx1, ry1, ytop) - x_at(lx0, ly0, lx1, ly1, ytop);
  const double wbot = x_at(rx0, ry0, rx1, ry1, ybot) - x_at(lx0, ly0, lx1, ly1, ybot);
  gt.ratio_y = (wbot - wtop) / wtop;
  gt.ratio_x = gt.ratio_y;  // square frame: width/height scaling is 1
  return gt;
}

double draw_placed_theta(RotationLabel label, Rng& rng) {
  const auto& st = rotation_stats();
  const double cut_nl = (st[2].mean + st[1].mean) / 2;  // neutral/left-shallow
  const double cut_lw = (st[1].mean + st[0].mean) / 2;  // left shallow/wide
  const double cut_nr = (st[2].mean + st[3].mean) / 2;  // neutral/right-shallow
  const double cut_rw = (st[3].mean + st[4].mean) / 2;  // right shallow/wide
  const auto& s = st[static_cast<size_t>(label)];
  // bands are kept strictly disjoint: the upper cut backs off by a margin
  const double gap = 0.05;
  double lo = 0, hi = 0, sign = 1;
  switch (label) {
    case RotationLabel::LeftWide: lo = cut_lw; hi = s.mean + 3 * s.sd; break;
    case RotationLabel::LeftShallow: lo = cut_nl; hi = cut_lw - gap; break;
    case RotationLabel::Neutral:
      lo = 0;
      hi = std::min(cut_nl, cut_nr) - gap;
      sign = rng.uniform01() < 0.5 ? 1.0 : -1.0;
      break;
    case RotationLabel::RightShallow: lo = cut_nr; hi = cut_rw - gap; sign = -1; break;
    case RotationLabel::RightWide: lo = cut_rw; hi = s.mean + 3 * s.sd; sign = -1; break;
  }
  lo = std::max(lo, s.mean - 3 * s.sd);
  const double mag = std::clamp(rng.normal(s.mean, s.sd), lo, hi);
  return sign * mag;
}

Dataset generate_dataset(const std::vector<BoardSpec>& library, int out_size,
                         uint64_t seed) {
  if (library.empty()) {
    throw std::invalid_argument("generate_dataset: empty board library");
  }
  struct Item {
    int cls, row, col, copy;
    RotationLabel label;
    SceneParams scene;
  };
  std::vector<Item> items;
  items.reserve(library.size() * 625);
  for (size_t c = 0; c < library.size(); ++c) {
    for (int row = 0; row < 5; ++row) {
      for (int col = 0; col < 5; ++col) {
        for (int li = 0; li < kNumRotationLabels; ++li) {
          for (int copy = 0; copy < 5; ++copy) {
            const bool test = copy == 4;
            const uint64_t key =
                ((((c * 5 + row) * 5 + col) * 5 + static_cast<uint64_t>(li)) * 5 + copy);
            Rng rng(Rng::mix(seed, key));
            Item it;
            it.cls = static_cast<int>(c);
            it.row = row;
            it.col = col;
            it.copy = copy;
            it.label = static_cast<RotationLabel>(li);
            it.scene.row = row;
            it.scene.col = col;
            it.scene.rotation_label = it.label;
            it.scene.actual_theta = draw_placed_theta(it.label, rng);
            it.scene.instance_noise_seed = Rng::mix(seed, c * 2 + (test ? 1 : 0));
            items.push_back(it);
          }
        }
      }
    }
  }

  Dataset ds;
  ds.num_classes = static_cast<int>(library.size());
  ds.image_size = out_size;
  ds.samples.resize(items.size());
#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < items.size(); ++i) {
    const Item& it = items[i];
    LabeledSample& s = ds.samples[i];
    s.class_id = it.cls;
    s.rotation_label = it.label;
    s.perspective.row = it.row;
    s.perspective.col = it.col;
    s.perspective.ring = ring_for_cell(it.row, it.col);
    s.split = it.copy == 4 ? Split::Test : Split::Train;
    s.placed_theta = it.scene.actual_theta;
    s.image = quantize(render(library[static_cast<size_t>(it.cls)], it.scene, out_size));
    s.ground_truth = closed_form_pose(library[static_cast<size_t>(it.cls)], it.scene, out_size);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%d/%s/r%dc%d_%s_%d.ppm", it.cls,
                  it.copy == 4 ? "test" : "train", it.row, it.col,
                  to_string(it.label).c_str(), it.copy == 4 ? 0 : it.copy);
    s.rel_path = buf;
  }
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  for (int c = 0; c < ds.num_classes; ++c) {
    fs::create_directories(fs::path(root) / std::to_string(c) / "train");
    fs::create_directories(fs::path(root) / std::to_string(c) / "test");
  }
  std::ofstream manifest(fs::path(root) / "manifest.csv");
  if (!manifest) throw std::runtime_error("write_dataset: cannot write manifest");
  manifest << "path,class_id,split,row,col,rotation_label,theta_true,ratio_y_true\n";
  for (const auto& s : ds.samples) {
    write_ppm((fs::path(root) / s.rel_path).string(), s.image);
    char line[256];
    std::snprintf(line, sizeof(line), "%s,%d,%s,%d,%d,%s,%.6f,%.6f\n",
                  s.rel_path.c_str(), s.class_id,
                  s.split == Split::Test ? "test" : "train", s.perspective.row,
                  s.perspective.col, to_string(s.rotation_label).c_str(),
                  s.ground_truth.theta_deg, s.ground_truth.ratio_y);
    manifest << line;
  }
}

Dataset load_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  const fs::path mpath = fs::path(root) / "manifest.csv";
  std::ifstream manifest(mpath);
  if (!manifest) {
    throw std::runtime_error("load_dataset: missing manifest at " + mpath.string());
  }
  Dataset ds;
  std::string line;
  std::getline(manifest, line);  // header
  int max_class = -1;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> f;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 8) {
      throw std::runtime_error("load_dataset: malformed manifest line: " + line);
    }
    LabeledSample s;
    s.rel_path = f[0];
    s.class_id = std::stoi(f[1]);
    s.split = f[2] == "test" ? Split::Test : Split::Train;
    s.perspective.row = std::stoi(f[3]);
    s.perspective.col = std::stoi(f[4]);
    s.perspective.ring = ring_for_cell(s.perspective.row, s.perspective.col);
    s.rotation_label = rotation_label_from_string(f[5]);
    s.ground_truth.theta_deg = std::stod(f[6]);
    s.ground_truth.ratio_y = std::stod(f[7]);
    s.placed_theta = s.ground_truth.theta_deg;
    s.image = read_ppm((fs::path(root) / s.rel_path).string());
    s.ground_truth.ratio_x =
        s.ground_truth.ratio_y * static_cast<double>(s.image.w) / s.image.h;
    max_class = std::max(max_class, s.class_id);
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) {
    throw std::runtime_error("load_dataset: manifest has no samples");
  }
  ds.num_classes = max_class + 1;
  ds.image_size = ds.samples.front().image.w;
  return ds;
}

uint64_t dataset_test_hash(const Dataset& ds) {
  uint64_t total = 0;
  for (const auto& s : ds.samples) {
    if (s.split != Split::Test) continue;
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    auto feed = [&h](uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 1099511628211ULL;
      }
    };
    feed(static_cast<uint64_t>(s.class_id));
    feed(static_cast<uint64_t>(s.perspective.row) * 8 + s.perspective.col);
    feed(static_cast<uint64_t>(s.rotation_label));
    for (uint8_t p : s.image.pix) {
      h ^= p;
      h *= 1099511628211ULL;
    }
    total ^= h;
  }
  return total;
}

}  // namespace pcblab
