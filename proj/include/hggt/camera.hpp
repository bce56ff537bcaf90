// SPDX-License-Identifier: Apache-2.0
//
// Camera encoding [T, q, f], FoV intrinsics and pinhole projection.
#pragma once

#include "hggt/rotation.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace hggt {

// World-to-camera pose relative to view 1, plus horizontal/vertical FoV.
// p_cam = R(q) * p + T.
struct CameraEncoding {
  Vec3 T = Vec3::Zero();
  Vec4 q = Vec4(1, 0, 0, 0);  // (w, x, y, z)
  Vec2 f = Vec2(std::numbers::pi / 3, std::numbers::pi / 3);

  [[nodiscard]] Mat3 rotation() const { return quat_to_rotmat(q); }

  [[nodiscard]] std::array<double, 9> to_array() const {
    return {T[0], T[1], T[2], q[0], q[1], q[2], q[3], f[0], f[1]};
  }

  static CameraEncoding from_array(const std::array<double, 9>& a) {
    CameraEncoding c;
    c.T = Vec3(a[0], a[1], a[2]);
    c.q = Vec4(a[3], a[4], a[5], a[6]);
    c.f = Vec2(a[7], a[8]);
    return c;
  }

  static CameraEncoding from_rt(const Mat3& r, const Vec3& t, const Vec2& fov) {
    CameraEncoding c;
    c.T = t;
    c.q = rotmat_to_quat(r);
    c.f = fov;
    return c;
  }

  [[nodiscard]] bool is_identity_pose(double tol = 0.0) const {
    return T.cwiseAbs().maxCoeff() <= tol && std::abs(q[0] - 1.0) <= tol && q.tail<3>().cwiseAbs().maxCoeff() <= tol;
  }
};

struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
};

inline void check_fov(const Vec2& f) {
  for (int i = 0; i < 2; ++i) {
    if (!(f[i] > 0.0 && f[i] < std::numbers::pi)) throw std::invalid_argument("field of view outside (0, pi)");
  }
}

inline Intrinsics fov_to_intrinsics(const Vec2& f, int width, int height) {
  check_fov(f);
  if (width <= 0 || height <= 0) throw std::invalid_argument("image size must be positive");
  Intrinsics k;
  k.width = width;
  k.height = height;
  k.fx = (width / 2.0) / std::tan(f[0] / 2.0);
  k.fy = (height / 2.0) / std::tan(f[1] / 2.0);
  k.cx = width / 2.0;
  k.cy = height / 2.0;
  return k;
}

inline Vec2 intrinsics_to_fov(const Intrinsics& k) {
  if (!(k.fx > 0 && k.fy > 0)) throw std::invalid_argument("focal lengths must be positive");
  return {2.0 * std::atan((k.width / 2.0) / k.fx), 2.0 * std::atan((k.height / 2.0) / k.fy)};
}

struct Projection {
  Eigen::Matrix<double, Eigen::Dynamic, 2> pixels;
  Eigen::VectorXd depths;
};

inline constexpr double kMinProjectionDepth = 1e-8;

// Points are rows of an N x 3 matrix. Pixels of points with |z| below
// kMinProjectionDepth are NaN; their depths are still reported.
inline Projection project(const Eigen::Matrix<double, Eigen::Dynamic, 3>& points, const Intrinsics& k,
                          const CameraEncoding& pose) {
  const Mat3 r = pose.rotation();
  Projection out;
  out.pixels.resize(points.rows(), 2);
  out.depths.resize(points.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Vec3 pc = r * points.row(i).transpose() + pose.T;
    out.depths[i] = pc.z();
    if (std::abs(pc.z()) < kMinProjectionDepth) {
      out.pixels.row(i).setConstant(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    out.pixels(i, 0) = k.fx * pc.x() / pc.z() + k.cx;
    out.pixels(i, 1) = k.fy * pc.y() / pc.z() + k.cy;
  }
  return out;
}

// Re-expresses absolute world-to-camera poses relative to the first view:
// output[s] maps first-camera coordinates to view-s coordinates.
inline std::vector<CameraEncoding> relative_to_first(const std::vector<CameraEncoding>& poses) {
  if (poses.empty()) throw std::invalid_argument("relative_to_first: empty pose list");
  const Mat3 r0 = poses[0].rotation();
  const Vec3 t0 = poses[0].T;
  std::vector<CameraEncoding> out;
  out.reserve(poses.size());
  for (std::size_t s = 0; s < poses.size(); ++s) {
    if (s == 0) {
      CameraEncoding id;
      id.f = poses[0].f;
      out.push_back(id);
      continue;
    }
    const Mat3 rs = poses[s].rotation() * r0.transpose();
    const Vec3 ts = poses[s].T - rs * t0;
    out.push_back(CameraEncoding::from_rt(rs, ts, poses[s].f));
  }
  return out;
}

namespace ad {

// 1x2 FoV -> 1x2 focal lengths in pixels.
template <typename T>
Var<T> fov_to_focal(const Var<T>& f, int width, int height) {
  if (f.rows() != 1 || f.cols() != 2) throw std::invalid_argument("fov_to_focal: expected 1x2 input");
  const T half[2] = {T(width) / T(2), T(height) / T(2)};
  Mat<T> out(1, 2);
  for (int i = 0; i < 2; ++i) out(0, i) = half[i] / std::tan(f.value()(0, i) / T(2));
  const int jf = f.id();
  return f.tape()->push(std::move(out), {f}, [jf, w = half[0], h = half[1]](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    const Mat<T>& fv = t.value(jf);
    const T hs[2] = {w, h};
    Mat<T>& gf = t.grad_ref(jf);
    for (int i = 0; i < 2; ++i) {
      const T s = std::sin(fv(0, i) / T(2));
      gf(0, i) += g(0, i) * (-hs[i] / (T(2) * s * s));
    }
  });
}

// N x 3 camera-frame points -> N x 2 pixels. Rows with |z| under the
// minimum depth come out NaN and pass no gradient.
template <typename T>
Var<T> perspective(const Var<T>& pc, const Var<T>& focal, T cx, T cy) {
  detail::check_same_tape(pc, focal);
  if (pc.cols() != 3 || focal.rows() != 1 || focal.cols() != 2) throw std::invalid_argument("perspective: bad shapes");
  const Mat<T>& p = pc.value();
  const T fx = focal.value()(0, 0), fy = focal.value()(0, 1);
  Mat<T> out(p.rows(), 2);
  for (Index i = 0; i < p.rows(); ++i) {
    const T z = p(i, 2);
    if (std::abs(z) < T(kMinProjectionDepth)) {
      out.row(i).setConstant(std::numeric_limits<T>::quiet_NaN());
      continue;
    }
    out(i, 0) = fx * p(i, 0) / z + cx;
    out(i, 1) = fy * p(i, 1) / z + cy;
  }
  const int ip = pc.id(), jf = focal.id();
  return pc.tape()->push(std::move(out), {pc, focal}, [ip, jf](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    const Mat<T>& p = t.value(ip);
    const T fx = t.value(jf)(0, 0), fy = t.value(jf)(0, 1);
    const bool gp = t.requires_grad(ip), gf = t.requires_grad(jf);
    T dfx = 0, dfy = 0;
    Mat<T>* dp = gp ? &t.grad_ref(ip) : nullptr;
    for (Index i = 0; i < p.rows(); ++i) {
      const T z = p(i, 2);
      if (std::abs(z) < T(kMinProjectionDepth)) continue;
      const T gu = g(i, 0), gv = g(i, 1);
      const T iz = T(1) / z;
      if (dp) {
        (*dp)(i, 0) += gu * fx * iz;
        (*dp)(i, 1) += gv * fy * iz;
        (*dp)(i, 2) += -(gu * fx * p(i, 0) + gv * fy * p(i, 1)) * iz * iz;
      }
      dfx += gu * p(i, 0) * iz;
      dfy += gv * p(i, 1) * iz;
    }
    if (gf) {
      Mat<T>& gfo = t.grad_ref(jf);
      gfo(0, 0) += dfx;
      gfo(0, 1) += dfy;
    }
  });
}

template <typename T>
struct ProjectedVars {
  Var<T> pixels;  // N x 2
  Var<T> camera_points;  // N x 3, depth in column 2
};

// Tape version of project(): points N x 3 in the first-camera frame, a camera
// given by its translation (1x3), quaternion (1x4) and FoV (1x2).
template <typename T>
ProjectedVars<T> project(const Var<T>& points, const Var<T>& trans, const Var<T>& quat, const Var<T>& fov, int width,
                         int height) {
  const Var<T> r = quat_to_rotmat(quat);
  const Var<T> pc = add_rowvec(matmul_nt(points, r), trans);
  const Var<T> focal = fov_to_focal(fov, width, height);
  return {perspective(pc, focal, T(width) / T(2), T(height) / T(2)), pc};
}

}  // namespace ad
}  // namespace hggt
