// SPDX-License-Identifier: Apache-2.0
//
// Training objective: hand loss with availability indicators, multi-view
// camera loss, reprojection consistency with a negative depth penalty, and
// the stage-weighted sum over refinement blocks.
//
//   total = sum_l gamma^(L-l) (lambda_hand hand_l + lambda_cam cam_l)
//         + lambda_proj (w_reproj reproj_L + w_neg neg_L)
//
// Every ||.||^2 term is averaged over its points (views, joints or vector
// entries); per-point norms are summed over coordinates.
#pragma once

#include "hggt/autodiff.hpp"
#include "hggt/camera.hpp"
#include "hggt/hand_model.hpp"
#include "hggt/network.hpp"
#include "hggt/sample.hpp"

#include <json.hpp>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace hggt {

struct LossConfig {
  double gamma = 0.6;
  double lambda_hand = 1.0;
  double lambda_cam = 5.0;
  double lambda_proj = 1.0;
  double w_pose = 0.1;
  double w_shape = 0.05;
  double w_joints3d = 5.0;
  double w_reproj_single = 1.0;
  double w_reproj_multi = 10.0;
  double w_neg_depth = 1.0;
  double reproj_cap = 1e4;  // px^2, per-joint ceiling

  void validate() const {
    for (double w : {lambda_hand, lambda_cam, lambda_proj, w_pose, w_shape, w_joints3d, w_reproj_single,
                     w_reproj_multi, w_neg_depth}) {
      if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be >= 0");
    }
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
    if (!(reproj_cap > 0.0)) throw std::invalid_argument("reproj_cap must be positive");
  }

  // gamma^(L-l) for l = 1..L.
  [[nodiscard]] std::vector<double> stage_weights(int blocks) const {
    std::vector<double> w(static_cast<std::size_t>(blocks));
    for (int l = 0; l < blocks; ++l) w[static_cast<std::size_t>(l)] = std::pow(gamma, blocks - 1 - l);
    return w;
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossConfig, gamma, lambda_hand, lambda_cam, lambda_proj, w_pose,
                                                w_shape, w_joints3d, w_reproj_single, w_reproj_multi, w_neg_depth,
                                                reproj_cap)

// Scalar breakdown for logging.
struct BlockLossReport {
  double stage_weight = 0;
  double hand = 0, cam = 0;
  double hand_pose = 0, hand_shape = 0, hand_j3d = 0;
  double cam_T = 0, cam_R = 0, cam_f = 0;
};

struct LossReport {
  double total = 0;
  // Final-block terms (unweighted means).
  double hand_pose = 0, hand_shape = 0, hand_j3d = 0;
  double cam_T = 0, cam_R = 0, cam_f = 0;
  double reproj = 0, neg_depth = 0;
  double reproj_weight = 0;
  // Samples whose projection term used the single- resp. multi-view weight.
  int single_view_samples = 0, multi_view_samples = 0;
  std::vector<BlockLossReport> blocks;

  LossReport& operator+=(const LossReport& o);
  void scale(double s);
};

inline LossReport& LossReport::operator+=(const LossReport& o) {
  total += o.total;
  hand_pose += o.hand_pose;
  hand_shape += o.hand_shape;
  hand_j3d += o.hand_j3d;
  cam_T += o.cam_T;
  cam_R += o.cam_R;
  cam_f += o.cam_f;
  reproj += o.reproj;
  neg_depth += o.neg_depth;
  reproj_weight += o.reproj_weight;
  single_view_samples += o.single_view_samples;
  multi_view_samples += o.multi_view_samples;
  if (blocks.empty()) blocks.resize(o.blocks.size());
  for (std::size_t l = 0; l < o.blocks.size() && l < blocks.size(); ++l) {
    auto& b = blocks[l];
    const auto& c = o.blocks[l];
    b.stage_weight = c.stage_weight;
    b.hand += c.hand;
    b.cam += c.cam;
    b.hand_pose += c.hand_pose;
    b.hand_shape += c.hand_shape;
    b.hand_j3d += c.hand_j3d;
    b.cam_T += c.cam_T;
    b.cam_R += c.cam_R;
    b.cam_f += c.cam_f;
  }
  return *this;
}

inline void LossReport::scale(double s) {
  total *= s;
  hand_pose *= s;
  hand_shape *= s;
  hand_j3d *= s;
  cam_T *= s;
  cam_R *= s;
  cam_f *= s;
  reproj *= s;
  neg_depth *= s;
  reproj_weight *= s;
  for (auto& b : blocks) {
    b.hand *= s;
    b.cam *= s;
    b.hand_pose *= s;
    b.hand_shape *= s;
    b.hand_j3d *= s;
    b.cam_T *= s;
    b.cam_R *= s;
    b.cam_f *= s;
  }
}

inline nlohmann::json to_json(const LossReport& r) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : r.blocks) {
    blocks.push_back({{"stage_weight", b.stage_weight}, {"hand", b.hand}, {"cam", b.cam}, {"hand_pose", b.hand_pose},
                      {"hand_shape", b.hand_shape}, {"hand_j3d", b.hand_j3d}, {"cam_T", b.cam_T}, {"cam_R", b.cam_R},
                      {"cam_f", b.cam_f}});
  }
  return {{"total", r.total},
          {"hand_pose", r.hand_pose},
          {"hand_shape", r.hand_shape},
          {"hand_j3d", r.hand_j3d},
          {"cam_T", r.cam_T},
          {"cam_R", r.cam_R},
          {"cam_f", r.cam_f},
          {"reproj", r.reproj},
          {"neg_depth", r.neg_depth},
          {"reproj_weight", r.reproj_weight},
          {"single_view_samples", r.single_view_samples},
          {"multi_view_samples", r.multi_view_samples},
          {"blocks", blocks}};
}

namespace ad {

// Per-row squared distance to a fixed target, min(|pred_i - target_i|^2, cap).
// Non-finite predictions contribute the cap. Capped rows pass no gradient.
template <typename T>
Var<T> capped_sq_dist_rows(const Var<T>& pred, const Mat<T>& target, T cap) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw std::invalid_argument("capped_sq_dist_rows: shape mismatch");
  }
  const Mat<T>& p = pred.value();
  Mat<T> out(p.rows(), 1);
  std::vector<bool> live(static_cast<std::size_t>(p.rows()));
  for (Index i = 0; i < p.rows(); ++i) {
    const T d = (p.row(i) - target.row(i)).squaredNorm();
    const bool ok = std::isfinite(d) && d < cap;
    live[static_cast<std::size_t>(i)] = ok;
    out(i, 0) = ok ? d : cap;
  }
  const int ip = pred.id();
  return pred.tape()->push(std::move(out), {pred}, [ip, target, live = std::move(live)](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    const Mat<T>& p = t.value(ip);
    Mat<T>& gp = t.grad_ref(ip);
    for (Index i = 0; i < p.rows(); ++i) {
      if (!live[static_cast<std::size_t>(i)]) continue;
      gp.row(i) += T(2) * g(i, 0) * (p.row(i) - target.row(i));
    }
  });
}

template <typename T>
Var<T> zero_scalar(Tape<T>& tape) {
  return tape.constant(Mat<T>::Zero(1, 1));
}

template <typename T>
Var<T> mean_of(std::span<const Var<T>> xs) {
  return scale(add_n(xs), T(1) / static_cast<T>(xs.size()));
}

template <typename T>
Var<T> root_relative(const Var<T>& joints) {
  return add_rowvec(joints, scale(slice_rows(joints, 0, 1), T(-1)));
}

template <typename T>
struct HandLossTerms {
  Var<T> pose, shape, joints3d;  // unweighted means; exact zero when gated off
  Var<T> total;                  // w_pose pose + w_shape shape + w_j3d joints3d
};

// pred_joints and gt joints are absolute; both are made root-relative here.
template <typename T>
HandLossTerms<T> hand_loss(const HandParamVars<T>& pred, const Var<T>& pred_joints, const HandParams& gt,
                           const JointMat& gt_joints, const SupervisionFlags& flags, const LossConfig& cfg) {
  Tape<T>& tape = *pred.theta.tape();
  if (pred_joints.rows() != gt_joints.rows() || pred_joints.cols() != 3) {
    throw std::invalid_argument("hand_loss: joint shape mismatch");
  }
  HandLossTerms<T> out;
  if (flags.has_mano) {
    out.pose = mean(square(sub(pred.theta, tape.constant(gt.theta.transpose().cast<T>()))));
    out.shape = mean(square(sub(pred.beta, tape.constant(gt.beta.transpose().cast<T>()))));
  } else {
    out.pose = zero_scalar(tape);
    out.shape = zero_scalar(tape);
  }
  if (flags.has_joints3d) {
    Mat<T> gt_rr = gt_joints.cast<T>();
    gt_rr.rowwise() -= gt_rr.row(0).eval();
    const Var<T> diff = sub(root_relative(pred_joints), tape.constant(std::move(gt_rr)));
    out.joints3d = mean(row_sum(square(diff)));
  } else {
    out.joints3d = zero_scalar(tape);
  }
  const Var<T> parts[] = {scale(out.pose, T(cfg.w_pose)), scale(out.shape, T(cfg.w_shape)),
                          scale(out.joints3d, T(cfg.w_joints3d))};
  out.total = add_n(std::span<const Var<T>>(parts));
  return out;
}

template <typename T>
struct CameraLossTerms {
  Var<T> trans, rot, fov;  // means over views
  Var<T> total;            // trans + rot + fov (lambda_cam applied by the caller)
};

// Zero for single-view samples.
template <typename T>
CameraLossTerms<T> camera_loss(Tape<T>& tape, const std::vector<CameraVars<T>>& pred,
                               const std::vector<CameraEncoding>& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("camera_loss: view count mismatch");
  CameraLossTerms<T> out;
  if (pred.size() <= 1) {
    out.trans = out.rot = out.fov = out.total = zero_scalar(tape);
    return out;
  }
  std::vector<Var<T>> tr, rot, fov;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    const Mat<T> gt_t = gt[s].T.transpose().cast<T>();
    const Mat<T> gt_f = gt[s].f.transpose().cast<T>();
    const Mat<T> gt_r = gt[s].rotation().cast<T>();
    tr.push_back(sum(square(sub(pred[s].trans, tape.constant(gt_t)))));
    rot.push_back(geodesic_sq(quat_to_rotmat(pred[s].quat), tape.constant(gt_r)));
    fov.push_back(sum(square(sub(pred[s].fov, tape.constant(gt_f)))));
  }
  out.trans = mean_of(std::span<const Var<T>>(tr));
  out.rot = mean_of(std::span<const Var<T>>(rot));
  out.fov = mean_of(std::span<const Var<T>>(fov));
  const Var<T> parts[] = {out.trans, out.rot, out.fov};
  out.total = add_n(std::span<const Var<T>>(parts));
  return out;
}

template <typename T>
struct ReprojectionTerms {
  Var<T> reproj;    // mean squared pixel distance over S J
  Var<T> weighted;  // reproj times the single- or multi-view weight
  Var<T> depths;    // (S J) x 1 camera-frame depths
  double weight = 0;
};

template <typename T>
ReprojectionTerms<T> reprojection_loss(const Var<T>& pred_joints, const std::vector<CameraVars<T>>& pred_cams,
                                       const std::vector<Points2>& gt_joints2d, int width, int height,
                                       const SupervisionFlags& flags, const LossConfig& cfg) {
  if (pred_cams.size() != gt_joints2d.size()) throw std::invalid_argument("reprojection_loss: view count mismatch");
  if (pred_cams.empty()) throw std::invalid_argument("reprojection_loss: no views");
  Tape<T>& tape = *pred_joints.tape();
  std::vector<Var<T>> dists, depths;
  for (std::size_t s = 0; s < pred_cams.size(); ++s) {
    if (gt_joints2d[s].rows() != pred_joints.rows()) throw std::invalid_argument("reprojection_loss: joint count mismatch");
    const auto proj = project(pred_joints, pred_cams[s].trans, pred_cams[s].quat, pred_cams[s].fov, width, height);
    dists.push_back(capped_sq_dist_rows(proj.pixels, Mat<T>(gt_joints2d[s].cast<T>()), T(cfg.reproj_cap)));
    depths.push_back(slice_cols(proj.camera_points, 2, 1));
  }
  ReprojectionTerms<T> out;
  out.depths = concat_rows(std::span<const Var<T>>(depths));
  out.weight = pred_cams.size() > 1 ? cfg.w_reproj_multi : cfg.w_reproj_single;
  if (flags.has_joints2d) {
    out.reproj = mean(concat_rows(std::span<const Var<T>>(dists)));
  } else {
    out.reproj = zero_scalar(tape);
  }
  out.weighted = scale(out.reproj, T(out.weight));
  return out;
}

// mean over entries of max(0, -z)^2.
template <typename T>
Var<T> negative_depth_penalty(const Var<T>& depths) {
  return mean(neg_part_sq(depths));
}

template <typename T>
struct TotalLoss {
  Var<T> total;
  std::vector<HandLossTerms<T>> hand;     // per block
  std::vector<CameraLossTerms<T>> cam;    // per block
  ReprojectionTerms<T> reproj;            // final block
  Var<T> neg_depth;                       // final block
  Var<T> projection;                      // w_reproj reproj + w_neg neg (before lambda_proj)
  std::vector<double> stage_weights;
  bool multi_view = false;

  [[nodiscard]] LossReport report() const;
};

template <typename T>
LossReport TotalLoss<T>::report() const {
  LossReport r;
  r.total = static_cast<double>(total.item());
  for (std::size_t l = 0; l < hand.size(); ++l) {
    BlockLossReport b;
    b.stage_weight = stage_weights[l];
    b.hand = hand[l].total.item();
    b.cam = cam[l].total.item();
    b.hand_pose = hand[l].pose.item();
    b.hand_shape = hand[l].shape.item();
    b.hand_j3d = hand[l].joints3d.item();
    b.cam_T = cam[l].trans.item();
    b.cam_R = cam[l].rot.item();
    b.cam_f = cam[l].fov.item();
    r.blocks.push_back(b);
  }
  const auto& last = r.blocks.back();
  r.hand_pose = last.hand_pose;
  r.hand_shape = last.hand_shape;
  r.hand_j3d = last.hand_j3d;
  r.cam_T = last.cam_T;
  r.cam_R = last.cam_R;
  r.cam_f = last.cam_f;
  r.reproj = reproj.reproj.item();
  r.neg_depth = neg_depth.item();
  r.reproj_weight = reproj.weight;
  (multi_view ? r.multi_view_samples : r.single_view_samples) = 1;
  return r;
}

// Stage-weighted objective for one sample. The projection terms only see the
// final block.
template <typename T>
TotalLoss<T> total_loss(const SampleOutput<T>& output, const Annotation& gt, const LossConfig& cfg,
                        const HandTemplate& tpl, int expected_blocks = -1) {
  const int blocks = static_cast<int>(output.per_block.size());
  if (blocks == 0) throw std::invalid_argument("total_loss: no block outputs");
  if (expected_blocks >= 0 && blocks != expected_blocks) throw std::invalid_argument("total_loss: block count mismatch");
  for (const auto& b : output.per_block) {
    if (static_cast<int>(b.cameras.size()) != gt.views()) throw std::invalid_argument("total_loss: view count mismatch");
  }
  Tape<T>& tape = *output.per_block[0].hand.theta.tape();
  TotalLoss<T> out;
  out.stage_weights = cfg.stage_weights(blocks);
  out.multi_view = gt.views() > 1;
  std::vector<Var<T>> parts;
  Var<T> final_joints;
  for (int l = 0; l < blocks; ++l) {
    const auto& bo = output.per_block[static_cast<std::size_t>(l)];
    const auto geo = hand_forward(bo.hand, tpl, false);
    if (l == blocks - 1) final_joints = geo.joints;
    out.hand.push_back(hand_loss(bo.hand, geo.joints, gt.hand, gt.joints3d, gt.flags, cfg));
    out.cam.push_back(camera_loss(tape, bo.cameras, gt.cameras));
    const T w = static_cast<T>(out.stage_weights[static_cast<std::size_t>(l)]);
    parts.push_back(scale(out.hand.back().total, w * T(cfg.lambda_hand)));
    parts.push_back(scale(out.cam.back().total, w * T(cfg.lambda_cam)));
  }
  out.reproj = reprojection_loss(final_joints, output.per_block.back().cameras, gt.joints2d, gt.width, gt.height,
                                 gt.flags, cfg);
  out.neg_depth = negative_depth_penalty(out.reproj.depths);
  const Var<T> proj_parts[] = {out.reproj.weighted, scale(out.neg_depth, T(cfg.w_neg_depth))};
  out.projection = add_n(std::span<const Var<T>>(proj_parts));
  parts.push_back(scale(out.projection, T(cfg.lambda_proj)));
  out.total = add_n(std::span<const Var<T>>(parts));
  return out;
}

}  // namespace ad
}  // namespace hggt
