// SPDX-License-Identifier: Apache-2.0
#include "hggt/data_synth.hpp"
#include "hggt/losses.hpp"

#include "oracles.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace hggt;
using namespace hggt::testing;

namespace {

const HandTemplate& tpl() {
  static const HandTemplate t = build_toy_template();
  return t;
}

Annotation scene(std::uint64_t index, int views = -1) {
  GeneratorConfig g;
  if (views > 0) g.views_min = g.views_max = views;
  return sample_scene(77, index, g, tpl());
}

}  // namespace

TEST(HandLoss, MatchesOracle) {
  std::mt19937_64 rng(101);
  const LossConfig cfg;
  for (int t = 0; t < 20; ++t) {
    const Annotation gt = scene(t);
    const BlockPrediction pred = perturb(gt, rng, 0.3);
    const Eigen::MatrixXd pj = MatD(gt.joints3d) + random_mat(rng, 21, 3, -0.02, 0.02);
    for (int mask = 0; mask < 4; ++mask) {
      SupervisionFlags f = gt.flags;
      f.has_mano = mask & 1;
      f.has_joints3d = mask & 2;
      ad::Tape<double> tape(false);
      const auto h = ad::hand_loss(hand_leaves(tape, pred.hand), tape.constant(pj), gt.hand, gt.joints3d, f, cfg);
      const auto o = oracle_hand(pred.hand, pj, gt.hand, gt.joints3d, f, cfg);
      EXPECT_NEAR(h.pose.item(), o.pose, 1e-6);
      EXPECT_NEAR(h.shape.item(), o.shape, 1e-6);
      EXPECT_NEAR(h.joints3d.item(), o.j3d, 1e-6);
      EXPECT_NEAR(h.total.item(), o.total, 1e-6);
    }
  }
}

TEST(HandLoss, ZeroAtGroundTruth) {
  const Annotation gt = scene(1);
  ad::Tape<double> tape(false);
  const auto h =
      ad::hand_loss(hand_leaves(tape, gt.hand), tape.constant(MatD(gt.joints3d)), gt.hand, gt.joints3d, gt.flags, {});
  EXPECT_EQ(h.total.item(), 0.0);
}

TEST(HandLoss, GatedTermsAreExactZeroWithZeroGradient) {
  std::mt19937_64 rng(102);
  const Annotation gt = scene(2);
  const BlockPrediction pred = perturb(gt, rng, 0.5);
  SupervisionFlags f = gt.flags;
  f.has_mano = f.has_joints3d = false;
  ad::Tape<double> tape;
  const auto hv = hand_leaves(tape, pred.hand);
  const auto joints = ad::hand_forward(hv, tpl(), false).joints;
  const auto h = ad::hand_loss(hv, joints, gt.hand, gt.joints3d, f, {});
  EXPECT_EQ(h.total.item(), 0.0);
  tape.backward(h.total);
  EXPECT_EQ(hv.theta.grad().norm(), 0.0);
  EXPECT_EQ(hv.beta.grad().norm(), 0.0);
  EXPECT_EQ(hv.trans.grad().norm(), 0.0);

  // Toggling the MANO flag alone moves only the pose and shape parts.
  f.has_mano = true;
  ad::Tape<double> t2;
  const auto hv2 = hand_leaves(t2, pred.hand);
  const auto h2 = ad::hand_loss(hv2, ad::hand_forward(hv2, tpl(), false).joints, gt.hand, gt.joints3d, f, {});
  const auto o = oracle_hand(pred.hand, forward(pred.hand, tpl(), false).joints, gt.hand, gt.joints3d, f, {});
  EXPECT_NEAR(h2.total.item(), o.total, 1e-9);
  EXPECT_EQ(h2.joints3d.item(), 0.0);
  t2.backward(h2.total);
  EXPECT_GT(hv2.theta.grad().norm(), 0.0);
}

TEST(HandLoss, ShapeMismatchRejected) {
  const Annotation gt = scene(3);
  ad::Tape<double> tape(false);
  EXPECT_THROW(ad::hand_loss(hand_leaves(tape, gt.hand), tape.constant(MatD::Zero(20, 3)), gt.hand, gt.joints3d,
                             gt.flags, {}),
               std::invalid_argument);
}

TEST(CameraLoss, MatchesOracle) {
  std::mt19937_64 rng(103);
  for (int t = 0; t < 20; ++t) {
    const Annotation gt = scene(100 + t);
    const BlockPrediction pred = perturb(gt, rng, 0.3);
    ad::Tape<double> tape(false);
    std::vector<ad::CameraVars<double>> cv;
    for (const auto& c : pred.cameras) cv.push_back(camera_leaves(tape, c));
    const auto c = ad::camera_loss(tape, cv, gt.cameras);
    const auto o = oracle_camera(pred.cameras, gt.cameras);
    EXPECT_NEAR(c.trans.item(), o.trans, 1e-6);
    EXPECT_NEAR(c.rot.item(), o.rot, 1e-6);
    EXPECT_NEAR(c.fov.item(), o.fov, 1e-6);
    EXPECT_NEAR(c.total.item(), o.total, 1e-6);
  }
}

TEST(CameraLoss, TranslationOffsetTwoViews) {
  const Annotation gt = scene(4, 2);
  auto pred = gt.cameras;
  pred[1].T += Vec3(1, 0, 0);
  ad::Tape<double> tape(false);
  std::vector<ad::CameraVars<double>> cv;
  for (const auto& c : pred) cv.push_back(camera_leaves(tape, c));
  const auto c = ad::camera_loss(tape, cv, gt.cameras);
  EXPECT_NEAR(c.trans.item(), 0.5, 1e-12);
  EXPECT_EQ(c.rot.item(), 0.0);
  EXPECT_EQ(c.fov.item(), 0.0);
}

TEST(CameraLoss, NegatedQuaternionHasZeroRotationError) {
  const Annotation gt = scene(5, 3);
  auto pred = gt.cameras;
  pred[1].q = -pred[1].q;
  ad::Tape<double> tape(false);
  std::vector<ad::CameraVars<double>> cv;
  for (const auto& c : pred) cv.push_back(camera_leaves(tape, c));
  EXPECT_EQ(ad::camera_loss(tape, cv, gt.cameras).rot.item(), 0.0);
}

TEST(CameraLoss, SingleViewIsZero) {
  const Annotation gt = scene(6, 1);
  std::mt19937_64 rng(104);
  const BlockPrediction pred = perturb(gt, rng, 0.5, false);
  ad::Tape<double> tape;
  std::vector<ad::CameraVars<double>> cv{camera_leaves(tape, pred.cameras[0])};
  const auto c = ad::camera_loss(tape, cv, gt.cameras);
  EXPECT_EQ(c.total.item(), 0.0);
  EXPECT_THROW(ad::camera_loss(tape, cv, scene(7, 2).cameras), std::invalid_argument);
}

TEST(ReprojectionLoss, MatchesOracle) {
  std::mt19937_64 rng(105);
  const LossConfig cfg;
  for (int t = 0; t < 20; ++t) {
    const Annotation gt = scene(200 + t);
    const BlockPrediction pred = perturb(gt, rng, 0.05);
    const Eigen::MatrixXd pj = MatD(gt.joints3d) + random_mat(rng, 21, 3, -0.01, 0.01);
    ad::Tape<double> tape(false);
    std::vector<ad::CameraVars<double>> cv;
    for (const auto& c : pred.cameras) cv.push_back(camera_leaves(tape, c));
    const auto r = ad::reprojection_loss(tape.constant(pj), cv, gt.joints2d, gt.width, gt.height, gt.flags, cfg);
    const auto o = oracle_reproj(pj, pred.cameras, gt.joints2d, gt.width, gt.height, gt.flags, cfg);
    EXPECT_NEAR(r.reproj.item(), o.reproj, 1e-6 * std::max(1.0, o.reproj));
    EXPECT_NEAR(r.weighted.item(), o.weighted, 1e-6 * std::max(1.0, o.weighted));
    EXPECT_NEAR(ad::negative_depth_penalty(r.depths).item(), o.neg, 1e-6);
  }
}

TEST(ReprojectionLoss, GroundTruthIsZero) {
  for (int t = 0; t < 10; ++t) {
    const Annotation gt = scene(300 + t);
    ad::Tape<double> tape(false);
    std::vector<ad::CameraVars<double>> cv;
    for (const auto& c : gt.cameras) cv.push_back(camera_leaves(tape, c));
    const auto r =
        ad::reprojection_loss(tape.constant(MatD(gt.joints3d)), cv, gt.joints2d, gt.width, gt.height, gt.flags, {});
    EXPECT_LT(r.reproj.item(), 1e-6);
  }
}

TEST(ReprojectionLoss, UnitPixelShiftGivesOne) {
  const Annotation gt = scene(8);
  auto shifted = gt.joints2d;
  for (auto& v : shifted) v.col(0).array() += 1.0;
  ad::Tape<double> tape(false);
  std::vector<ad::CameraVars<double>> cv;
  for (const auto& c : gt.cameras) cv.push_back(camera_leaves(tape, c));
  const auto r = ad::reprojection_loss(tape.constant(MatD(gt.joints3d)), cv, shifted, gt.width, gt.height, gt.flags, {});
  EXPECT_NEAR(r.reproj.item(), 1.0, 1e-6);
}

TEST(ReprojectionLoss, MultiViewWeightIsTenTimesSingle) {
  // Two copies of the same view against one.
  const Annotation gt = scene(9);
  auto shifted = gt.joints2d[0];
  shifted.array() += 0.7;
  ad::Tape<double> tape(false);
  const auto cam = camera_leaves(tape, gt.cameras[0]);
  const auto j = tape.constant(MatD(gt.joints3d));
  const auto one = ad::reprojection_loss(j, {cam}, {shifted}, gt.width, gt.height, gt.flags, {});
  const auto two = ad::reprojection_loss(j, {cam, cam}, {shifted, shifted}, gt.width, gt.height, gt.flags, {});
  EXPECT_NEAR(two.weighted.item() / one.weighted.item(), 10.0, 1e-12);
}

TEST(ReprojectionLoss, NonFiniteProjectionIsCapped) {
  const Annotation gt = scene(10, 1);
  MatD pj = MatD(gt.joints3d);
  pj.row(3) << 0, 0, 0;  // on the camera centre
  ad::Tape<double> tape;
  const auto cam = camera_leaves(tape, gt.cameras[0]);
  const auto j = tape.leaf(pj);
  const LossConfig cfg;
  const auto r = ad::reprojection_loss(j, {cam}, gt.joints2d, gt.width, gt.height, gt.flags, cfg);
  EXPECT_TRUE(std::isfinite(r.reproj.item()));
  EXPECT_NEAR(r.reproj.item(), cfg.reproj_cap / 21.0, 1e-6);
  tape.backward(r.reproj);
  EXPECT_TRUE(j.grad().allFinite());
  EXPECT_EQ(j.grad().row(3).norm(), 0.0);
}

TEST(ReprojectionLoss, GatedByTwoDimensionalFlag) {
  std::mt19937_64 rng(106);
  const Annotation gt = scene(11);
  const BlockPrediction pred = perturb(gt, rng, 0.2);
  SupervisionFlags f = gt.flags;
  f.has_joints2d = false;
  ad::Tape<double> tape;
  const auto j = tape.leaf(MatD(gt.joints3d));
  std::vector<ad::CameraVars<double>> cv;
  for (const auto& c : pred.cameras) cv.push_back(camera_leaves(tape, c));
  const auto r = ad::reprojection_loss(j, cv, gt.joints2d, gt.width, gt.height, f, {});
  EXPECT_EQ(r.weighted.item(), 0.0);
  tape.backward(r.weighted);
  EXPECT_EQ(j.grad().norm(), 0.0);
}

TEST(NegativeDepth, Examples) {
  ad::Tape<double> tape(false);
  MatD d = MatD::Constant(42, 1, 0.5);
  EXPECT_EQ(ad::negative_depth_penalty(tape.constant(d)).item(), 0.0);
  d(17, 0) = -2.0;
  EXPECT_NEAR(ad::negative_depth_penalty(tape.constant(d)).item(), 4.0 / 42.0, 1e-15);
  // Monotone nonincreasing in every depth.
  std::mt19937_64 rng(107);
  MatD r = random_mat(rng, 42, 1, -1, 1);
  double prev = ad::negative_depth_penalty(tape.constant(r)).item();
  for (int k = 0; k < 42; ++k) {
    r(k, 0) += 0.3;
    const double now = ad::negative_depth_penalty(tape.constant(r)).item();
    EXPECT_LE(now, prev);
    prev = now;
  }
}

TEST(TotalLoss, StageWeights) {
  LossConfig cfg;
  const auto w = cfg.stage_weights(4);
  ASSERT_EQ(w.size(), 4u);
  EXPECT_NEAR(w[0], 0.216, 1e-15);
  EXPECT_NEAR(w[1], 0.36, 1e-15);
  EXPECT_NEAR(w[2], 0.6, 1e-15);
  EXPECT_EQ(w[3], 1.0);
  cfg.gamma = 1.0;
  for (double x : cfg.stage_weights(4)) EXPECT_EQ(x, 1.0);
}

TEST(TotalLoss, MatchesOracleAndReportsParts) {
  std::mt19937_64 rng(108);
  const LossConfig cfg;
  for (int t = 0; t < 20; ++t) {
    const Annotation gt = scene(400 + t);
    std::vector<BlockPrediction> blocks;
    for (int l = 0; l < 4; ++l) blocks.push_back(perturb(gt, rng, 0.05));
    ad::Tape<double> tape(false);
    const auto loss = ad::total_loss(output_on(tape, blocks), gt, cfg, tpl(), 4);
    const double o = oracle_total(blocks, gt, cfg, tpl());
    EXPECT_NEAR(loss.total.item(), o, 1e-6 * std::max(1.0, o));
    const LossReport rep = loss.report();
    ASSERT_EQ(rep.blocks.size(), 4u);
    double recomb = 0;
    for (const auto& b : rep.blocks) recomb += b.stage_weight * (cfg.lambda_hand * b.hand + cfg.lambda_cam * b.cam);
    recomb += cfg.lambda_proj * (rep.reproj * rep.reproj_weight + cfg.w_neg_depth * rep.neg_depth);
    EXPECT_NEAR(rep.total, recomb, 1e-6 * std::max(1.0, o));
    for (double v : {rep.hand_pose, rep.hand_shape, rep.hand_j3d, rep.cam_T, rep.cam_R, rep.cam_f, rep.reproj,
                     rep.neg_depth}) {
      EXPECT_GE(v, 0.0);
    }
  }
}

TEST(TotalLoss, GroundTruthGivesZero) {
  const Annotation gt = scene(12);
  BlockPrediction b;
  b.hand = gt.hand;
  b.cameras = gt.cameras;
  ad::Tape<double> tape(false);
  const auto rep = ad::total_loss(output_on(tape, {b, b, b, b}), gt, {}, tpl()).report();
  EXPECT_LT(rep.total, 1e-6);
  EXPECT_EQ(rep.hand_pose, 0.0);
  EXPECT_EQ(rep.cam_T, 0.0);
}

TEST(TotalLoss, ProjectionOnlySeesFinalBlock) {
  std::mt19937_64 rng(109);
  const Annotation gt = scene(13);
  std::vector<BlockPrediction> blocks;
  for (int l = 0; l < 4; ++l) blocks.push_back(perturb(gt, rng, 0.05));
  ad::Tape<double> tape;
  const auto out = output_on(tape, blocks);
  const auto base = ad::total_loss(out, gt, {}, tpl());
  tape.backward(base.projection);
  for (int l = 0; l < 3; ++l) {
    const auto& bo = out.per_block[static_cast<std::size_t>(l)];
    EXPECT_EQ(bo.hand.theta.grad().norm(), 0.0);
    EXPECT_EQ(bo.hand.trans.grad().norm(), 0.0);
    for (const auto& c : bo.cameras) EXPECT_EQ(c.trans.grad().norm() + c.quat.grad().norm(), 0.0);
  }
  EXPECT_GT(out.per_block[3].hand.trans.grad().norm(), 0.0);

  // Perturbing intermediate blocks leaves the projection term unchanged but
  // moves the total.
  auto moved = blocks;
  for (int l = 0; l < 3; ++l) moved[static_cast<std::size_t>(l)] = perturb(gt, rng, 0.3);
  ad::Tape<double> t2(false);
  const auto other = ad::total_loss(output_on(t2, moved), gt, {}, tpl());
  EXPECT_EQ(other.projection.item(), base.projection.item());
  EXPECT_NE(other.total.item(), base.total.item());
}

TEST(TotalLoss, QuaternionSignInvariant) {
  std::mt19937_64 rng(110);
  const Annotation gt = scene(14);
  std::vector<BlockPrediction> blocks;
  for (int l = 0; l < 4; ++l) blocks.push_back(perturb(gt, rng, 0.1));
  auto flipped = blocks;
  for (auto& b : flipped)
    for (auto& c : b.cameras) c.q = -c.q;
  ad::Tape<double> t1(false), t2(false);
  EXPECT_EQ(ad::total_loss(output_on(t1, blocks), gt, {}, tpl()).total.item(),
            ad::total_loss(output_on(t2, flipped), gt, {}, tpl()).total.item());
}

TEST(TotalLoss, BlockCountMismatchRejected) {
  const Annotation gt = scene(15);
  BlockPrediction b;
  b.hand = gt.hand;
  b.cameras = gt.cameras;
  ad::Tape<double> tape(false);
  EXPECT_THROW(ad::total_loss(output_on(tape, {b, b, b}), gt, {}, tpl(), 4), std::invalid_argument);
  b.cameras.pop_back();
  EXPECT_THROW(ad::total_loss(output_on(tape, {b}), gt, {}, tpl()), std::invalid_argument);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(111);
  for (int t = 0; t < 5; ++t) {
    const Annotation gt = scene(500 + t, 3);
    std::vector<BlockPrediction> blocks;
    for (int l = 0; l < 2; ++l) blocks.push_back(perturb(gt, rng, 0.05));
    // Inputs: per block theta, beta, trans, then per view T, q, f.
    std::vector<MatD> in;
    for (const auto& b : blocks) {
      in.push_back(b.hand.theta.transpose());
      in.push_back(b.hand.beta.transpose());
      in.push_back(b.hand.trans.transpose());
      for (const auto& c : b.cameras) {
        in.push_back(c.T.transpose());
        in.push_back(c.q.transpose());
        in.push_back(c.f.transpose());
      }
    }
    const int per_block = 3 + 3 * gt.views();
    const auto r = grad_check(
        [&](auto&, const auto& v) {
          ad::SampleOutput<double> out;
          for (int l = 0; l < 2; ++l) {
            const int o = l * per_block;
            ad::BlockOutput<double> bo;
            bo.hand = {v[o], v[o + 1], v[o + 2]};
            for (int s = 0; s < gt.views(); ++s) bo.cameras.push_back({v[o + 3 + 3 * s], v[o + 4 + 3 * s], v[o + 5 + 3 * s]});
            out.per_block.push_back(bo);
          }
          return ad::total_loss(out, gt, {}, tpl()).total;
        },
        in);
    EXPECT_LT(r.max_rel_error, 1e-4);
  }
}

TEST(LossTerms, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(112);
  for (int t = 0; t < 10; ++t) {
    const Annotation gt = scene(600 + t, 3);
    const BlockPrediction p = perturb(gt, rng, 0.05);
    const std::vector<MatD> hand_in{p.hand.theta.transpose(), p.hand.beta.transpose(), p.hand.trans.transpose()};
    const auto rh = grad_check(
        [&](auto&, const auto& v) {
          const ad::HandParamVars<double> h{v[0], v[1], v[2]};
          return ad::hand_loss(h, ad::hand_forward(h, tpl(), false).joints, gt.hand, gt.joints3d, gt.flags, {}).total;
        },
        hand_in);
    EXPECT_LT(rh.max_rel_error, 1e-4);

    std::vector<MatD> cam_in;
    for (const auto& c : p.cameras) {
      cam_in.push_back(c.T.transpose());
      cam_in.push_back(c.q.transpose());
      cam_in.push_back(c.f.transpose());
    }
    auto cams_of = [&](const auto& v, int off) {
      std::vector<ad::CameraVars<double>> cv;
      for (int s = 0; s < gt.views(); ++s) cv.push_back({v[off + 3 * s], v[off + 3 * s + 1], v[off + 3 * s + 2]});
      return cv;
    };
    const auto rc = grad_check(
        [&](auto& tape, const auto& v) { return ad::camera_loss(tape, cams_of(v, 0), gt.cameras).total; }, cam_in);
    EXPECT_LT(rc.max_rel_error, 1e-4);

    std::vector<MatD> proj_in{MatD(gt.joints3d) + random_mat(rng, 21, 3, -0.01, 0.01)};
    proj_in.insert(proj_in.end(), cam_in.begin(), cam_in.end());
    const auto rr = grad_check(
        [&](auto&, const auto& v) {
          return ad::reprojection_loss(v[0], cams_of(v, 1), gt.joints2d, gt.width, gt.height, gt.flags, {}).weighted;
        },
        proj_in);
    EXPECT_LT(rr.max_rel_error, 1e-4);

    // A camera pushed partly behind the hand so the depth penalty is live.
    std::vector<MatD> depth_in{random_mat(rng, 21, 3, -0.1, 0.1), MatD::Zero(1, 3), (MatD(1, 4) << 1, 0, 0, 0).finished(),
                               MatD::Constant(1, 2, 1.0)};
    depth_in[1](0, 2) = 0.02;
    const auto rn = grad_check(
        [&](auto&, const auto& v) {
          return ad::negative_depth_penalty(ad::slice_cols(ad::project(v[0], v[1], v[2], v[3], 112, 112).camera_points, 2, 1));
        },
        depth_in);
    EXPECT_LT(rn.max_rel_error, 1e-4);
  }
}
