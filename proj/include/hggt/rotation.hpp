// SPDX-License-Identifier: Apache-2.0
//
// SO(3) helpers: axis-angle (Rodrigues), quaternions, geodesic distance.
// Each map exists as a plain double-precision function and as a tape op.
#pragma once

#include "hggt/autodiff.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hggt {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

inline Mat3 skew(const Vec3& w) {
  Mat3 k;
  k << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return k;
}

namespace detail {

// Coefficients of R = I + a K + b K^2 as functions of s = |w|^2, together
// with their derivatives in s. Below the threshold the Taylor series is used.
template <typename T>
struct RodriguesCoeffs {
  T a, b, da, db;
};

template <typename T>
inline RodriguesCoeffs<T> rodrigues_coeffs(T s) {
  const T series_below = sizeof(T) >= 8 ? T(1e-4) : T(1e-2);
  if (s < series_below) {
    return {T(1) - s / T(6) + s * s / T(120) - s * s * s / T(5040),
            T(0.5) - s / T(24) + s * s / T(720) - s * s * s / T(40320),
            T(-1) / T(6) + s / T(60) - s * s / T(1680),
            T(-1) / T(24) + s / T(360) - s * s / T(13440)};
  }
  const T th = std::sqrt(s);
  const T sn = std::sin(th), cs = std::cos(th);
  return {sn / th, (T(1) - cs) / s, (th * cs - sn) / (T(2) * th * s), (th * sn - T(2) * (T(1) - cs)) / (T(2) * s * s)};
}

}  // namespace detail

// Rodrigues map from an axis-angle vector to a rotation matrix.
inline Mat3 axis_angle_to_matrix(const Vec3& w) {
  if (!w.allFinite()) throw std::invalid_argument("axis_angle_to_matrix: non-finite input");
  const auto c = detail::rodrigues_coeffs(w.squaredNorm());
  const Mat3 k = skew(w);
  return Mat3::Identity() + c.a * k + c.b * (k * k);
}

// Inverse of axis_angle_to_matrix, angle in [0, pi].
inline Vec3 matrix_to_axis_angle(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

// Rotation matrix of a (w, x, y, z) quaternion; the input is normalized.
inline Mat3 quat_to_rotmat(const Vec4& q) {
  const double n = q.squaredNorm();
  if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("quat_to_rotmat: zero or non-finite quaternion");
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y),  //
      2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x),   //
      2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z;
  return r / n;
}

// Unit quaternion (w, x, y, z) with w >= 0.
inline Vec4 rotmat_to_quat(const Mat3& r) {
  const Eigen::Quaterniond qe(r);
  Vec4 q(qe.w(), qe.x(), qe.y(), qe.z());
  q.normalize();
  if (q[0] < 0) q = -q;
  return q;
}

inline Vec4 canonical_quat(const Vec4& q) {
  Vec4 u = q.normalized();
  if (u[0] < 0) u = -u;
  return u;
}

inline bool is_rotation(const Mat3& r, double tol = 1e-4) {
  return r.allFinite() && (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

// Angle of R1^T R2 in [0, pi]. atan2 of the skew and trace parts instead of
// acos of the clamped trace keeps full precision near zero.
inline double geodesic_distance(const Mat3& r1, const Mat3& r2) {
  if (!is_rotation(r1) || !is_rotation(r2)) throw std::invalid_argument("geodesic_distance: input is not a rotation");
  const Mat3 r = r1.transpose() * r2;
  const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  const double s = 0.5 * Vec3(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)).norm();
  return std::atan2(s, c);
}

inline Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
inline Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
inline Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

namespace ad {

// Rodrigues map, 1x3 axis-angle -> 3x3 rotation.
template <typename T>
Var<T> rodrigues(const Var<T>& w) {
  if (w.rows() != 1 || w.cols() != 3) throw std::invalid_argument("rodrigues: expected 1x3 input");
  const T x = w.value()(0, 0), y = w.value()(0, 1), z = w.value()(0, 2);
  if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
    throw std::invalid_argument("rodrigues: non-finite input");
  }
  const T s = x * x + y * y + z * z;
  const auto c = hggt::detail::rodrigues_coeffs(s);
  Eigen::Matrix<T, 3, 3, Eigen::RowMajor> k;
  k << T(0), -z, y, z, T(0), -x, -y, x, T(0);
  const Eigen::Matrix<T, 3, 3, Eigen::RowMajor> k2 = k * k;
  Mat<T> out = Eigen::Matrix<T, 3, 3, Eigen::RowMajor>::Identity() + c.a * k + c.b * k2;
  const int iw = w.id();
  return w.tape()->push(std::move(out), {w}, [iw, c, k, k2](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    const Eigen::Matrix<T, 3, 1> om = t.value(iw).row(0).transpose();
    const T gk = (g.array() * k.array()).sum();
    const T gk2 = (g.array() * k2.array()).sum();
    const T tr = g.trace();
    const Eigen::Matrix<T, 3, 1> gw = g * om;
    const Eigen::Matrix<T, 3, 1> gtw = g.transpose() * om;
    const T ge[3] = {g(2, 1) - g(1, 2), g(0, 2) - g(2, 0), g(1, 0) - g(0, 1)};
    Mat<T>& gi = t.grad_ref(iw);
    for (int i = 0; i < 3; ++i) {
      gi(0, i) += T(2) * om(i) * c.da * gk + c.a * ge[i] + T(2) * om(i) * c.db * gk2 +
                  c.b * (gw(i) + gtw(i) - T(2) * om(i) * tr);
    }
  });
}

// 1x4 (w, x, y, z) quaternion -> 3x3 rotation; the map is invariant to the
// quaternion's scale, so unnormalized inputs are accepted.
template <typename T>
Var<T> quat_to_rotmat(const Var<T>& q) {
  if (q.rows() != 1 || q.cols() != 4) throw std::invalid_argument("quat_to_rotmat: expected 1x4 input");
  const T w = q.value()(0, 0), x = q.value()(0, 1), y = q.value()(0, 2), z = q.value()(0, 3);
  const T n = w * w + x * x + y * y + z * z;
  if (!(n > T(0)) || !std::isfinite(n)) throw std::invalid_argument("quat_to_rotmat: zero or non-finite quaternion");
  Mat<T> out(3, 3);
  out << w * w + x * x - y * y - z * z, T(2) * (x * y - w * z), T(2) * (x * z + w * y),  //
      T(2) * (x * y + w * z), w * w - x * x + y * y - z * z, T(2) * (y * z - w * x),     //
      T(2) * (x * z - w * y), T(2) * (y * z + w * x), w * w - x * x - y * y + z * z;
  out /= n;
  const int iq = q.id();
  return q.tape()->push(std::move(out), {q}, [iq, n](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    const Mat<T>& r = t.value(self);
    const T w = t.value(iq)(0, 0), x = t.value(iq)(0, 1), y = t.value(iq)(0, 2), z = t.value(iq)(0, 3);
    // Derivatives of the unnormalized quadratic form M(q), one 3x3 per component.
    Eigen::Matrix<T, 3, 3, Eigen::RowMajor> dw, dx, dy, dz;
    dw << w, -z, y, z, w, -x, -y, x, w;
    dx << x, y, z, y, -x, -w, z, w, -x;
    dy << -y, x, w, x, y, z, -w, z, -y;
    dz << -z, -w, x, w, -z, y, x, y, z;
    const T gr = (g.array() * r.array()).sum();
    const T comps[4] = {w, x, y, z};
    const T gm[4] = {(g.array() * dw.array()).sum(), (g.array() * dx.array()).sum(), (g.array() * dy.array()).sum(),
                     (g.array() * dz.array()).sum()};
    Mat<T>& gq = t.grad_ref(iq);
    for (int i = 0; i < 4; ++i) gq(0, i) += (T(2) * gm[i] - T(2) * comps[i] * gr) / n;
  });
}

// Squared geodesic angle between two rotations, 1x1 output. Where the cosine
// had to be clamped the gradient is zero.
template <typename T>
Var<T> geodesic_sq(const Var<T>& r1, const Var<T>& r2) {
  detail::check_same_tape(r1, r2);
  if (r1.rows() != 3 || r1.cols() != 3 || r2.rows() != 3 || r2.cols() != 3) {
    throw std::invalid_argument("geodesic_sq: expected 3x3 inputs");
  }
  const T raw = ((r1.value().array() * r2.value().array()).sum() - T(1)) / T(2);
  const bool clamped = raw >= T(1) || raw <= T(-1);
  const T c = std::clamp(raw, T(-1), T(1));
  const T th = std::acos(c);
  Mat<T> out(1, 1);
  out(0, 0) = th * th;
  T dcoef = T(0);  // d(theta^2)/dc
  if (!clamped) {
    if (th < T(1e-4)) {
      dcoef = T(-2) * (T(1) + th * th / T(6));
    } else {
      dcoef = T(-2) * th / std::max(std::sin(th), T(1e-9));
    }
  }
  const int i1 = r1.id(), i2 = r2.id();
  return r1.tape()->push(std::move(out), {r1, r2}, [i1, i2, dcoef](Tape<T>& t, int self) {
    const T g = t.grad(self)(0, 0) * dcoef / T(2);
    if (t.requires_grad(i1)) t.grad_ref(i1) += g * t.value(i2);
    if (t.requires_grad(i2)) t.grad_ref(i2) += g * t.value(i1);
  });
}

}  // namespace ad
}  // namespace hggt
