// SPDX-License-Identifier: Apache-2.0
//
// Differentiable parametric hand with the MANO parameter interface
// (48 pose, 10 shape, 3 translation) driving a 21-joint skeleton and a
// linear-blend-skinned mesh.
//
// Joint order: 0 = wrist, then per finger (thumb, index, middle, ring, pinky)
// four joints base -> tip, i.e. finger f occupies joints 1 + 4f .. 4 + 4f.
// theta holds one axis-angle triple per non-leaf joint in joint order; the
// first triple is the global orientation. theta = 0 is the template's own
// rest pose (flat hand, fingers along +y, palm facing +z).
#pragma once

#include "hggt/array_store.hpp"
#include "hggt/autodiff.hpp"
#include "hggt/rotation.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hggt {

inline constexpr int kNumJoints = 21;
inline constexpr int kNumPose = 48;
inline constexpr int kNumShape = 10;
inline constexpr int kNumRotJoints = 16;
inline constexpr int kNumHandOutputs = kNumPose + kNumShape + 3;

using PoseVec = Eigen::Matrix<double, kNumPose, 1>;
using ShapeVec = Eigen::Matrix<double, kNumShape, 1>;
using JointMat = Eigen::Matrix<double, Eigen::Dynamic, 3>;  // kNumJoints x 3 for joints; V x 3 for vertices

struct HandParams {
  PoseVec theta = PoseVec::Zero();
  ShapeVec beta = ShapeVec::Zero();
  Vec3 trans = Vec3::Zero();

  [[nodiscard]] bool all_finite() const { return theta.allFinite() && beta.allFinite() && trans.allFinite(); }

  [[nodiscard]] Vec3 global_orient() const { return theta.head<3>(); }
};

struct HandGeometry {
  JointMat joints;    // 21 x 3, first-camera frame, meters
  JointMat vertices;  // V x 3
};

struct HandTemplate {
  ad::Mat<double> rest_joints;  // 21 x 3
  std::vector<int> parents;     // parents[0] == -1
  ad::Mat<double> shape_basis;  // 63 x 10, row 3j + c holds d(bone_j[c])/d(beta)
  ad::Mat<double> rest_vertices;  // V x 3
  ad::Mat<double> skin_weights;   // V x 21

  [[nodiscard]] int joint_count() const { return static_cast<int>(rest_joints.rows()); }
  [[nodiscard]] int vertex_count() const { return static_cast<int>(rest_vertices.rows()); }

  // Joint j's offset from its parent in the rest pose (row 0 is the root position).
  [[nodiscard]] ad::Mat<double> rest_bones() const {
    ad::Mat<double> b = rest_joints;
    for (int j = 1; j < joint_count(); ++j) b.row(j) = rest_joints.row(j) - rest_joints.row(parents[j]);
    return b;
  }

  // Index into theta (in triples) of each joint's local rotation, -1 for leaves.
  [[nodiscard]] std::vector<int> rotation_slots() const {
    std::vector<bool> has_child(static_cast<std::size_t>(joint_count()), false);
    for (int j = 1; j < joint_count(); ++j) has_child[static_cast<std::size_t>(parents[j])] = true;
    std::vector<int> slot(static_cast<std::size_t>(joint_count()), -1);
    int next = 0;
    for (int j = 0; j < joint_count(); ++j) {
      if (j == 0 || has_child[static_cast<std::size_t>(j)]) slot[static_cast<std::size_t>(j)] = next++;
    }
    return slot;
  }

  // ancestors(j, k) = 1 if k is j or an ancestor of j.
  [[nodiscard]] ad::Mat<double> ancestors() const {
    ad::Mat<double> a = ad::Mat<double>::Zero(joint_count(), joint_count());
    for (int j = 0; j < joint_count(); ++j) {
      for (int k = j; k >= 0; k = parents[k]) a(j, k) = 1.0;
    }
    return a;
  }

  void validate() const {
    if (rest_joints.rows() != kNumJoints || rest_joints.cols() != 3) {
      throw std::invalid_argument("hand template needs 21 x 3 rest joints");
    }
    if (static_cast<int>(parents.size()) != kNumJoints || parents[0] != -1) {
      throw std::invalid_argument("hand template parents must have 21 entries with parents[0] = -1");
    }
    for (int j = 1; j < kNumJoints; ++j) {
      if (parents[j] < 0 || parents[j] >= j) throw std::invalid_argument("hand template parents do not form a tree");
    }
    int rot = 0;
    for (int s : rotation_slots()) rot += s >= 0 ? 1 : 0;
    if (rot != kNumRotJoints) throw std::invalid_argument("hand template must have 16 articulated joints");
    const ad::Mat<double> bones = rest_bones();
    for (int j = 1; j < kNumJoints; ++j) {
      if (!(bones.row(j).norm() > 0.0)) throw std::invalid_argument("hand template has a zero-length bone");
    }
    if (shape_basis.rows() != 3 * kNumJoints || shape_basis.cols() != kNumShape) {
      throw std::invalid_argument("hand template shape basis must be 63 x 10");
    }
    if (rest_vertices.cols() != 3 || rest_vertices.rows() < 1) throw std::invalid_argument("bad rest vertices");
    if (skin_weights.rows() != rest_vertices.rows() || skin_weights.cols() != kNumJoints) {
      throw std::invalid_argument("skin weights must be V x 21");
    }
    for (Eigen::Index v = 0; v < skin_weights.rows(); ++v) {
      if (skin_weights.row(v).minCoeff() < 0.0 || std::abs(skin_weights.row(v).sum() - 1.0) > 1e-6) {
        throw std::invalid_argument("skin weight row " + std::to_string(v) + " is not convex");
      }
    }
    if (!rest_joints.allFinite() || !shape_basis.allFinite() || !rest_vertices.allFinite()) {
      throw std::invalid_argument("hand template contains non-finite values");
    }
  }
};

struct TemplateConfig {
  // Bone lengths (meters) per finger, base segment first.
  std::array<std::array<double, 3>, 5> segment_lengths{{{0.035, 0.032, 0.028},
                                                        {0.040, 0.025, 0.020},
                                                        {0.045, 0.028, 0.022},
                                                        {0.042, 0.026, 0.021},
                                                        {0.032, 0.020, 0.018}}};
  // Non-zero: lengths are jittered by up to +-10 % with this seed.
  std::uint64_t seed = 0;
  int ring_vertices = 8;
  int tip_vertices = 6;
};

namespace detail {

inline void orthonormal_frame(const Vec3& u, Vec3& v, Vec3& w) {
  v = u.cross(Vec3::UnitZ());
  if (v.norm() < 1e-6) v = u.cross(Vec3::UnitX());
  v.normalize();
  w = u.cross(v).normalized();
}

}  // namespace detail

inline HandTemplate build_toy_template(const TemplateConfig& cfg = {}) {
  if (cfg.ring_vertices < 3 || cfg.tip_vertices < 3) throw std::invalid_argument("template rings need >= 3 vertices");
  auto lengths = cfg.segment_lengths;
  if (cfg.seed != 0) {
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> jitter(0.9, 1.1);
    for (auto& finger : lengths)
      for (double& l : finger) l *= jitter(rng);
  }
  for (const auto& finger : lengths)
    for (double l : finger)
      if (!(l > 0.0)) throw std::invalid_argument("segment lengths must be positive");

  const std::array<Vec3, 5> base{Vec3(0.022, 0.018, 0.0), Vec3(0.025, 0.085, 0.0), Vec3(0.004, 0.090, 0.0),
                                 Vec3(-0.014, 0.085, 0.0), Vec3(-0.030, 0.074, 0.0)};
  const std::array<Vec3, 5> dir{Vec3(1.0, 1.0, 0.0).normalized(), Vec3(0.10, 1.0, 0.0).normalized(), Vec3::UnitY(),
                                Vec3(-0.08, 1.0, 0.0).normalized(), Vec3(-0.18, 1.0, 0.0).normalized()};

  HandTemplate t;
  t.rest_joints = ad::Mat<double>::Zero(kNumJoints, 3);
  t.parents.assign(kNumJoints, 0);
  t.parents[0] = -1;
  for (int f = 0; f < 5; ++f) {
    Vec3 p = base[f];
    const int j0 = 1 + 4 * f;
    t.rest_joints.row(j0) = p.transpose();
    t.parents[j0] = 0;
    for (int k = 0; k < 3; ++k) {
      p += lengths[f][k] * dir[f];
      t.rest_joints.row(j0 + k + 1) = p.transpose();
      t.parents[j0 + k + 1] = j0 + k;
    }
  }

  // Shape directions act on bone offsets: global scale, finger length,
  // palm width, per-finger length, thumb spread, palm length.
  const ad::Mat<double> bones = t.rest_bones();
  t.shape_basis = ad::Mat<double>::Zero(3 * kNumJoints, kNumShape);
  for (int j = 1; j < kNumJoints; ++j) {
    const bool palm = t.parents[j] == 0;
    const int finger = (j - 1) / 4;
    const Eigen::RowVector3d b = bones.row(j);
    for (int c = 0; c < 3; ++c) {
      const int r = 3 * j + c;
      t.shape_basis(r, 0) = 0.10 * b[c];
      if (!palm) t.shape_basis(r, 1) = 0.08 * b[c];
      if (palm && c == 0) t.shape_basis(r, 2) = 0.10 * b[c];
      if (!palm) t.shape_basis(r, 3 + finger) = 0.06 * b[c];
      if (palm && c == 1) t.shape_basis(r, 9) = 0.10 * b[c];
    }
    if (finger == 0 && palm) t.shape_basis(3 * j + 0, 8) = 0.004;
  }

  // Tube mesh: one ring at the middle of each bone, a cap around each tip and
  // a small wrist ring.
  const int v_count = 20 * cfg.ring_vertices + 5 * cfg.tip_vertices + 4;
  t.rest_vertices.setZero(v_count, 3);
  t.skin_weights.setZero(v_count, kNumJoints);
  int v = 0;
  const auto radius_for = [&](int j) {
    const int k = (j - 1) % 4;
    return k == 0 ? 0.009 : k == 1 ? 0.008 : k == 2 ? 0.007 : 0.006;
  };
  for (int j = 1; j < kNumJoints; ++j) {
    const int p = t.parents[j];
    const Vec3 a = t.rest_joints.row(p).transpose();
    const Vec3 b = t.rest_joints.row(j).transpose();
    const Vec3 u = (b - a).normalized();
    Vec3 e1, e2;
    detail::orthonormal_frame(u, e1, e2);
    const double r = radius_for(j);
    for (int k = 0; k < cfg.ring_vertices; ++k, ++v) {
      const double phi = 2.0 * std::numbers::pi * k / cfg.ring_vertices;
      const Vec3 x = 0.5 * (a + b) + r * (std::cos(phi) * e1 + std::sin(phi) * e2);
      t.rest_vertices.row(v) = x.transpose();
      t.skin_weights(v, p) = 0.8;
      t.skin_weights(v, j) += 0.2;
    }
  }
  for (int f = 0; f < 5; ++f) {
    const int tip = 4 + 4 * f;
    const Vec3 b = t.rest_joints.row(tip).transpose();
    const Vec3 u = (b - t.rest_joints.row(tip - 1).transpose()).normalized();
    Vec3 e1, e2;
    detail::orthonormal_frame(u, e1, e2);
    for (int k = 0; k < cfg.tip_vertices; ++k, ++v) {
      const double phi = 2.0 * std::numbers::pi * k / cfg.tip_vertices;
      const Vec3 x = b + 0.002 * u + 0.004 * (std::cos(phi) * e1 + std::sin(phi) * e2);
      t.rest_vertices.row(v) = x.transpose();
      t.skin_weights(v, tip - 1) = 0.3;
      t.skin_weights(v, tip) = 0.7;
    }
  }
  const std::array<Vec3, 4> wrist{Vec3(0.02, 0, 0), Vec3(-0.02, 0, 0), Vec3(0, 0, 0.01), Vec3(0, 0, -0.01)};
  for (const Vec3& x : wrist) {
    t.rest_vertices.row(v) = x.transpose();
    t.skin_weights(v, 0) = 1.0;
    ++v;
  }
  t.validate();
  return t;
}

inline void save_template(const HandTemplate& t, const std::string& path) {
  ArrayStore store;
  store.meta["kind"] = "hand_template";
  store.put("rest_joints", t.rest_joints);
  std::vector<std::int64_t> parents(t.parents.begin(), t.parents.end());
  store.put_ints("parents", parents);
  store.put("shape_basis", t.shape_basis);
  store.put("rest_vertices", t.rest_vertices);
  store.put("skin_weights", t.skin_weights);
  store.save(path);
}

// Loads a template asset (toy or MANO-compatible, e.g. 778 vertices).
inline HandTemplate load_template(const std::string& path) {
  const ArrayStore store = ArrayStore::load(path);
  HandTemplate t;
  t.rest_joints = store.get<double>("rest_joints", kNumJoints, 3);
  const auto parents = store.get_ints("parents");
  t.parents.assign(parents.begin(), parents.end());
  t.shape_basis = store.get<double>("shape_basis", 3 * kNumJoints, kNumShape);
  t.rest_vertices = store.get<double>("rest_vertices", -1, 3);
  t.skin_weights = store.get<double>("skin_weights", t.rest_vertices.rows(), kNumJoints);
  t.validate();
  return t;
}

namespace ad {

template <typename T>
struct HandParamVars {
  Var<T> theta;  // 1 x 48
  Var<T> beta;   // 1 x 10
  Var<T> trans;  // 1 x 3
};

template <typename T>
struct HandGeometryVars {
  Var<T> joints;    // 21 x 3
  Var<T> vertices;  // V x 3, invalid unless requested
};

// Applies per-vertex blended 3x4 transforms (rows of M, row-major 3x4 each)
// to the rows of v.
template <typename T>
Var<T> blend_apply(const Var<T>& m, const Var<T>& v) {
  detail::check_same_tape(m, v);
  if (m.cols() != 12 || v.cols() != 3 || m.rows() != v.rows()) throw std::invalid_argument("blend_apply: bad shapes");
  const Mat<T>& mv = m.value();
  const Mat<T>& vv = v.value();
  Mat<T> out(vv.rows(), 3);
  for (Index i = 0; i < vv.rows(); ++i) {
    for (int a = 0; a < 3; ++a) {
      out(i, a) = mv(i, 4 * a) * vv(i, 0) + mv(i, 4 * a + 1) * vv(i, 1) + mv(i, 4 * a + 2) * vv(i, 2) + mv(i, 4 * a + 3);
    }
  }
  const int im = m.id(), iv = v.id();
  return m.tape()->push(std::move(out), {m, v}, [im, iv](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    const Mat<T>& mv = t.value(im);
    const Mat<T>& vv = t.value(iv);
    Mat<T>* dm = t.requires_grad(im) ? &t.grad_ref(im) : nullptr;
    Mat<T>* dv = t.requires_grad(iv) ? &t.grad_ref(iv) : nullptr;
    for (Index i = 0; i < g.rows(); ++i) {
      for (int a = 0; a < 3; ++a) {
        const T ga = g(i, a);
        if (dm) {
          for (int b = 0; b < 3; ++b) (*dm)(i, 4 * a + b) += ga * vv(i, b);
          (*dm)(i, 4 * a + 3) += ga;
        }
        if (dv) {
          for (int b = 0; b < 3; ++b) (*dv)(i, b) += ga * mv(i, 4 * a + b);
        }
      }
    }
  });
}

// Forward kinematics plus optional linear blend skinning on the tape.
template <typename T>
HandGeometryVars<T> hand_forward(const HandParamVars<T>& p, const HandTemplate& tpl, bool with_vertices = true) {
  Tape<T>& tape = *p.theta.tape();
  if (p.theta.rows() != 1 || p.theta.cols() != kNumPose || p.beta.rows() != 1 || p.beta.cols() != kNumShape ||
      p.trans.rows() != 1 || p.trans.cols() != 3) {
    throw std::invalid_argument("hand_forward: parameter shapes must be 1x48, 1x10, 1x3");
  }
  if (!p.theta.value().allFinite() || !p.beta.value().allFinite() || !p.trans.value().allFinite()) {
    throw std::invalid_argument("hand_forward: non-finite parameters");
  }
  const int nj = tpl.joint_count();
  const std::vector<int> slots = tpl.rotation_slots();

  const Var<T> basis_t = tape.constant(tpl.shape_basis.transpose().cast<T>());
  const Var<T> shape_offsets = reshape(matmul(p.beta, basis_t), nj, 3);
  const Var<T> bones = add(tape.constant(tpl.rest_bones().cast<T>()), shape_offsets);

  std::vector<Var<T>> local(kNumRotJoints);
  for (int s = 0; s < kNumRotJoints; ++s) local[s] = rodrigues(slice_cols(p.theta, 3 * s, 3));

  std::vector<Var<T>> world_rot(static_cast<std::size_t>(nj));
  std::vector<Var<T>> world_pos(static_cast<std::size_t>(nj));
  world_rot[0] = local[0];
  world_pos[0] = add(matmul_nt(slice_rows(bones, 0, 1), world_rot[0]), p.trans);
  for (int j = 1; j < nj; ++j) {
    const int par = tpl.parents[j];
    world_pos[j] = add(world_pos[par], matmul_nt(slice_rows(bones, j, 1), world_rot[par]));
    world_rot[j] = slots[j] >= 0 ? matmul(world_rot[par], local[slots[j]]) : world_rot[par];
  }
  HandGeometryVars<T> out;
  out.joints = concat_rows(std::span<const Var<T>>(world_pos));
  if (!with_vertices) return out;

  // Shape-adjusted rest joints J(beta) and the skinning transforms
  // A_j = [R_j | p_j - R_j J_j(beta)].
  const Var<T> rest_shaped = matmul(tape.constant(tpl.ancestors().template cast<T>()), bones);
  std::vector<Var<T>> transforms;
  transforms.reserve(static_cast<std::size_t>(nj));
  for (int j = 0; j < nj; ++j) {
    const Var<T> offset = sub(world_pos[j], matmul_nt(slice_rows(rest_shaped, j, 1), world_rot[j]));
    transforms.push_back(reshape(concat_cols({world_rot[j], transpose(offset)}), 1, 12));
  }
  const Var<T> weights = tape.constant(tpl.skin_weights.cast<T>());
  const Var<T> blended = matmul(weights, concat_rows(std::span<const Var<T>>(transforms)));
  const Var<T> shape_disp = matmul(weights, sub(rest_shaped, tape.constant(tpl.rest_joints.cast<T>())));
  const Var<T> rest_verts = add(tape.constant(tpl.rest_vertices.cast<T>()), shape_disp);
  out.vertices = blend_apply(blended, rest_verts);
  return out;
}

template <typename T>
HandParamVars<T> hand_params_on(Tape<T>& tape, const HandParams& p, bool as_leaves) {
  auto mk = [&](const auto& v) {
    Mat<T> m = v.transpose().template cast<T>();
    return as_leaves ? tape.leaf(std::move(m)) : tape.constant(std::move(m));
  };
  return {mk(p.theta), mk(p.beta), mk(p.trans)};
}

}  // namespace ad

// Double-precision evaluation without gradient recording.
inline HandGeometry forward(const HandParams& params, const HandTemplate& tpl, bool with_vertices = true) {
  if (!params.all_finite()) throw std::invalid_argument("forward: non-finite hand parameters");
  ad::Tape<double> tape(false);
  const auto vars = ad::hand_params_on(tape, params, false);
  const auto g = ad::hand_forward(vars, tpl, with_vertices);
  HandGeometry out;
  out.joints = g.joints.value();
  if (with_vertices) out.vertices = g.vertices.value();
  return out;
}

}  // namespace hggt
