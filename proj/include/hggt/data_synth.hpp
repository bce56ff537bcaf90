// SPDX-License-Identifier: Apache-2.0
//
// Procedural multi-view hand scenes: random articulated hand at the world
// origin, cameras on a spherical shell looking at the wrist, toy skeleton
// rendering (bone strokes plus Gaussian joint blobs over seeded noise).
#pragma once

#include "hggt/camera.hpp"
#include "hggt/hand_model.hpp"
#include "hggt/sample.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hggt {

struct GeneratorConfig {
  int image_size = 112;
  int views_min = 2;
  int views_max = 10;
  double radius_min = 0.3;  // m
  double radius_max = 0.8;
  double fov_min_deg = 40.0;
  double fov_max_deg = 70.0;
  double flex_max = 1.2;       // rad, per finger joint, toward the palm
  double flex_min = -0.1;
  double spread_max = 0.25;    // rad, base joints only
  double twist_max = 0.08;     // rad, along the bone
  double thumb_flex_max = 0.8;
  double shape_max = 1.0;      // |beta_i| bound
  // Wrist orientation in the world; cameras already cover the sphere.
  double wrist_rot_max = 0.4;
  int min_visible_joints = 15;
  double visible_margin = 0.05;  // central 90 % of the image
  int max_attempts = 100;
  // Rendering.
  double blob_sigma = 2.0;  // px
  double bone_width = 1.2;  // px, stroke half-width
  int noise_amplitude = 40;
  // Single-view truncation: probability of dropping MANO / 3D supervision.
  double single_drop_mano = 0.0;
  double single_drop_joints3d = 0.0;

  void validate() const {
    if (image_size < 8) throw std::invalid_argument("image_size too small");
    if (views_min < 1 || views_max < views_min) throw std::invalid_argument("need 1 <= views_min <= views_max");
    if (!(radius_min > 0 && radius_max >= radius_min)) throw std::invalid_argument("bad camera radius range");
    if (!(fov_min_deg > 0 && fov_max_deg >= fov_min_deg && fov_max_deg < 180)) throw std::invalid_argument("bad fov range");
    if (min_visible_joints < 0 || min_visible_joints > kNumJoints) throw std::invalid_argument("bad min_visible_joints");
    if (!(visible_margin >= 0 && visible_margin < 0.5)) throw std::invalid_argument("bad visible_margin");
    if (max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
    if (!(blob_sigma > 0)) throw std::invalid_argument("blob_sigma must be positive");
    if (noise_amplitude < 0 || noise_amplitude > 255) throw std::invalid_argument("noise_amplitude outside [0, 255]");
    for (double p : {single_drop_mano, single_drop_joints3d}) {
      if (!(p >= 0 && p <= 1)) throw std::invalid_argument("drop probabilities must lie in [0, 1]");
    }
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GeneratorConfig, image_size, views_min, views_max, radius_min,
                                                radius_max, fov_min_deg, fov_max_deg, flex_max, flex_min, spread_max,
                                                twist_max, thumb_flex_max, shape_max, wrist_rot_max,
                                                min_visible_joints, visible_margin, max_attempts, blob_sigma,
                                                bone_width, noise_amplitude, single_drop_mano, single_drop_joints3d)

struct VisibilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// Independent stream per (seed, index).
inline Rng make_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x48474754u};
  return Rng(seq);
}

namespace detail {

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline Vec3 unit_sphere(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const Vec3 v(n(rng), n(rng), n(rng));
    if (v.norm() > 1e-9) return v.normalized();
  }
}

// World-to-camera rotation for a camera at `eye` looking at `target`, rolled
// about the optical axis. Rows are the camera axes in world coordinates.
inline Mat3 look_at(const Vec3& eye, const Vec3& target, double roll) {
  const Vec3 z = (target - eye).normalized();
  Vec3 up = std::abs(z.z()) < 0.95 ? Vec3::UnitZ() : Vec3::UnitX();
  Vec3 x = up.cross(z).normalized();
  Vec3 y = z.cross(x);
  const double c = std::cos(roll), s = std::sin(roll);
  const Vec3 xr = c * x + s * y;
  const Vec3 yr = -s * x + c * y;
  Mat3 r;
  r.row(0) = xr.transpose();
  r.row(1) = yr.transpose();
  r.row(2) = z.transpose();
  return r;
}

}  // namespace detail

// Random articulation: per finger, flexion about the in-palm axis orthogonal
// to that finger, spread about the palm normal at the base joint, and a small
// twist about the bone.
inline PoseVec sample_articulation(Rng& rng, const HandTemplate& tpl, const GeneratorConfig& cfg) {
  using detail::uniform;
  PoseVec theta = PoseVec::Zero();
  const auto slots = tpl.rotation_slots();
  const Vec3 normal = Vec3::UnitZ();
  for (int f = 0; f < 5; ++f) {
    const int base = 1 + 4 * f;
    const Vec3 dir = (tpl.rest_joints.row(base + 1) - tpl.rest_joints.row(base)).transpose().normalized();
    const Vec3 flex_axis = dir.cross(normal).normalized();
    const double fmax = f == 0 ? cfg.thumb_flex_max : cfg.flex_max;
    for (int k = 0; k < 3; ++k) {
      const int slot = slots[static_cast<std::size_t>(base + k)];
      Vec3 w = uniform(rng, cfg.flex_min, fmax) * flex_axis + uniform(rng, -cfg.twist_max, cfg.twist_max) * dir;
      if (k == 0) w += uniform(rng, -cfg.spread_max, cfg.spread_max) * normal;
      theta.segment<3>(3 * slot) = w;
    }
  }
  return theta;
}

inline int count_visible(const Projection& p, int size, double margin) {
  const double lo = margin * size, hi = (1.0 - margin) * size;
  int n = 0;
  for (Eigen::Index i = 0; i < p.pixels.rows(); ++i) {
    const double u = p.pixels(i, 0), v = p.pixels(i, 1);
    if (p.depths[i] > 0 && std::isfinite(u) && std::isfinite(v) && u >= lo && u <= hi && v >= lo && v <= hi) ++n;
  }
  return n;
}

// One multi-view sample without images. All geometry is expressed in the
// first camera's frame. Throws VisibilityError when a view cannot satisfy the
// visibility rule within max_attempts draws.
inline Annotation sample_scene(std::uint64_t seed, std::uint64_t index, const GeneratorConfig& cfg,
                               const HandTemplate& tpl) {
  using detail::uniform;
  cfg.validate();
  Rng rng = make_rng(seed, index);
  const int views = std::uniform_int_distribution<int>(cfg.views_min, cfg.views_max)(rng);

  HandParams world;
  world.theta = sample_articulation(rng, tpl, cfg);
  world.theta.head<3>() = uniform(rng, 0.0, cfg.wrist_rot_max) * detail::unit_sphere(rng);
  for (int i = 0; i < kNumShape; ++i) world.beta[i] = uniform(rng, -cfg.shape_max, cfg.shape_max);
  const HandGeometry world_geo = forward(world, tpl, false);
  const Vec3 target = world.trans;

  const double deg = std::numbers::pi / 180.0;
  std::vector<CameraEncoding> absolute;
  for (int s = 0; s < views; ++s) {
    bool ok = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !ok; ++attempt) {
      const Vec3 eye = target + uniform(rng, cfg.radius_min, cfg.radius_max) * detail::unit_sphere(rng);
      const Mat3 r = detail::look_at(eye, target, uniform(rng, -std::numbers::pi, std::numbers::pi));
      const double fov = uniform(rng, cfg.fov_min_deg, cfg.fov_max_deg) * deg;
      const CameraEncoding cam = CameraEncoding::from_rt(r, -r * eye, Vec2(fov, fov));
      const auto k = fov_to_intrinsics(cam.f, cfg.image_size, cfg.image_size);
      if (count_visible(project(world_geo.joints, k, cam), cfg.image_size, cfg.visible_margin) >=
          cfg.min_visible_joints) {
        absolute.push_back(cam);
        ok = true;
      }
    }
    if (!ok) {
      throw VisibilityError("sample " + std::to_string(index) + ": view " + std::to_string(s) +
                            " has too few visible joints after " + std::to_string(cfg.max_attempts) + " attempts");
    }
  }

  Annotation a;
  a.sample_id = "s" + std::to_string(index);
  a.width = a.height = cfg.image_size;
  a.cameras = relative_to_first(absolute);
  // Move the hand into the first camera frame. The wrist sits at the origin
  // of the hand's local frame, so only the global rotation and translation
  // change.
  const Mat3 r0 = absolute[0].rotation();
  a.hand = world;
  a.hand.theta.head<3>() = matrix_to_axis_angle(r0 * axis_angle_to_matrix(world.theta.head<3>()));
  a.hand.trans = r0 * world.trans + absolute[0].T;
  a.joints3d = forward(a.hand, tpl, false).joints;
  for (int s = 0; s < views; ++s) {
    const auto k = fov_to_intrinsics(a.cameras[static_cast<std::size_t>(s)].f, a.width, a.height);
    a.joints2d.push_back(project(a.joints3d, k, a.cameras[static_cast<std::size_t>(s)]).pixels);
  }
  a.flags.has_mano = a.flags.has_joints3d = a.flags.has_joints2d = true;
  a.flags.is_multiview = views > 1;
  return a;
}

// ---- rendering -------------------------------------------------------------

using Rgb = std::array<double, 3>;

inline Rgb finger_color(int joint) {
  static const std::array<Rgb, 6> colors{Rgb{230, 230, 230}, Rgb{255, 60, 60},  Rgb{60, 230, 60},
                                         Rgb{70, 110, 255},  Rgb{250, 220, 40}, Rgb{230, 60, 230}};
  return joint == 0 ? colors[0] : colors[static_cast<std::size_t>(1 + (joint - 1) / 4)];
}

inline Image noise_background(int width, int height, int amplitude, Rng& rng) {
  Image img(width, height);
  std::uniform_int_distribution<int> d(0, amplitude);
  for (auto& px : img.rgb) px = static_cast<std::uint8_t>(d(rng));
  return img;
}

namespace detail {

struct FloatImage {
  int width, height;
  std::vector<double> px;
  explicit FloatImage(const Image& im) : width(im.width), height(im.height), px(im.rgb.begin(), im.rgb.end()) {}
  void blend(int x, int y, const Rgb& c, double alpha) {
    double* p = &px[(static_cast<std::size_t>(y) * width + x) * 3];
    for (int k = 0; k < 3; ++k) p[k] = (1 - alpha) * p[k] + alpha * c[static_cast<std::size_t>(k)];
  }
  [[nodiscard]] Image to_image() const {
    Image out(width, height);
    for (std::size_t i = 0; i < px.size(); ++i) out.rgb[i] = static_cast<std::uint8_t>(std::clamp(std::lround(px[i]), 0L, 255L));
    return out;
  }
};

inline void draw_segment(FloatImage& img, const Vec2& a, const Vec2& b, const Rgb& color, double half_width) {
  const double pad = half_width + 1.0;
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - pad)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + pad)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - pad)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + pad)));
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      // Pixel centers sit at integer coordinates.
      const Vec2 p(x, y);
      const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
      const double d = (p - (a + t * ab)).norm();
      const double alpha = 0.7 * std::clamp(half_width + 0.5 - d, 0.0, 1.0);
      if (alpha > 0) img.blend(x, y, color, alpha);
    }
  }
}

inline void draw_blob(FloatImage& img, const Vec2& c, const Rgb& color, double sigma) {
  const double r = 3.0 * sigma;
  const int x0 = std::max(0, static_cast<int>(std::floor(c.x() - r)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(c.x() + r)));
  const int y0 = std::max(0, static_cast<int>(std::floor(c.y() - r)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(c.y() + r)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double d2 = (Vec2(x, y) - c).squaredNorm();
      img.blend(x, y, color, std::exp(-d2 / (2 * sigma * sigma)));
    }
  }
}

}  // namespace detail

// Draws a skeleton given per-joint pixels and camera depths. Joints with
// non-positive depth are omitted together with their bones. Elements are
// painted far to near.
inline Image render_skeleton(const Points2& pixels, const Eigen::VectorXd& depths, const std::vector<int>& parents,
                             const GeneratorConfig& cfg, Rng& rng) {
  detail::FloatImage img(noise_background(cfg.image_size, cfg.image_size, cfg.noise_amplitude, rng));
  struct Item {
    double depth;
    int joint;
    bool bone;
  };
  std::vector<Item> items;
  const auto ok = [&](int j) {
    return depths[j] > kMinProjectionDepth && std::isfinite(pixels(j, 0)) && std::isfinite(pixels(j, 1));
  };
  for (int j = 0; j < pixels.rows(); ++j) {
    if (!ok(j)) continue;
    items.push_back({depths[j], j, false});
    const int p = j < static_cast<int>(parents.size()) ? parents[static_cast<std::size_t>(j)] : -1;
    if (p >= 0 && ok(p)) items.push_back({0.5 * (depths[j] + depths[p]), j, true});
  }
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.depth > b.depth; });
  for (const auto& it : items) {
    const Vec2 c = pixels.row(it.joint).transpose();
    if (it.bone) {
      const Vec2 a = pixels.row(parents[static_cast<std::size_t>(it.joint)]).transpose();
      detail::draw_segment(img, a, c, finger_color(it.joint), cfg.bone_width);
    } else {
      detail::draw_blob(img, c, finger_color(it.joint), cfg.blob_sigma);
    }
  }
  return img.to_image();
}

inline Image rasterize_view(const HandGeometry& geo, const CameraEncoding& cam, const std::vector<int>& parents,
                            const GeneratorConfig& cfg, Rng& rng) {
  const auto k = fov_to_intrinsics(cam.f, cfg.image_size, cfg.image_size);
  const Projection p = project(geo.joints, k, cam);
  return render_skeleton(p.pixels, p.depths, parents, cfg, rng);
}

// Full sample with images; rendering noise comes from its own stream so the
// geometry of sample i does not depend on rendering settings.
inline MultiViewSample generate_sample(std::uint64_t seed, std::uint64_t index, const GeneratorConfig& cfg,
                                       const HandTemplate& tpl) {
  MultiViewSample s;
  s.annot = sample_scene(seed, index, cfg, tpl);
  Rng render_rng = make_rng(seed ^ 0x9e3779b97f4a7c15ull, index);
  HandGeometry geo;
  geo.joints = s.annot.joints3d;
  for (const auto& cam : s.annot.cameras) s.views.push_back(rasterize_view(geo, cam, tpl.parents, cfg, render_rng));
  return s;
}

}  // namespace hggt
