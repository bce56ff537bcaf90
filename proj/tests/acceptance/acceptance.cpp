// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks, one line per criterion:
//   hggt_acceptance [--only N] [--work DIR]
#include "hggt/cli.hpp"

#include "oracles.hpp"
#include "test_support.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <sys/wait.h>

using namespace hggt;
using namespace hggt::testing;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects named sub-checks; the criterion passes when all of them do.
class Checks {
 public:
  void add(const std::string& what, bool ok, const std::string& value = {}) {
    if (!ok) pass_ = false;
    if (!text_.empty()) text_ += "; ";
    text_ += what + (value.empty() ? "" : " " + value) + (ok ? "" : " [FAILED]");
  }
  void note(const std::string& what) {
    if (!text_.empty()) text_ += "; ";
    text_ += "(" + what + ")";
  }
  [[nodiscard]] Outcome done() const { return {pass_, text_}; }

 private:
  bool pass_ = true;
  std::string text_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const HandTemplate& tpl() {
  static const HandTemplate t = build_toy_template();
  return t;
}

Annotation scene(std::uint64_t index, int views = -1) {
  GeneratorConfig g;
  if (views > 0) g.views_min = g.views_max = views;
  return sample_scene(4242, index, g, tpl());
}

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  return Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized().toRotationMatrix();
}

std::vector<ad::CameraVars<double>> cams_of(const std::vector<Var<double>>& v, int offset, int views) {
  std::vector<ad::CameraVars<double>> cv;
  for (int s = 0; s < views; ++s) cv.push_back({v[offset + 3 * s], v[offset + 3 * s + 1], v[offset + 3 * s + 2]});
  return cv;
}

std::vector<MatD> camera_inputs(const std::vector<CameraEncoding>& cams) {
  std::vector<MatD> in;
  for (const auto& c : cams) {
    in.push_back(c.T.transpose());
    in.push_back(c.q.transpose());
    in.push_back(c.f.transpose());
  }
  return in;
}

// ---- 1 ----------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1001);
  double worst_fwd = 0, worst_proj = 0, worst_hand = 0, worst_cam = 0, worst_reproj = 0, worst_neg = 0;
  for (int t = 0; t < 10; ++t) {
    const Annotation gt = scene(100 + t, 3);
    const BlockPrediction p = perturb(gt, rng, 0.05);
    const std::vector<MatD> hand_in{p.hand.theta.transpose(), p.hand.beta.transpose(), p.hand.trans.transpose()};
    worst_fwd = std::max(worst_fwd, grad_check(
                                        [](auto&, const auto& v) {
                                          const auto g = ad::hand_forward(ad::HandParamVars<double>{v[0], v[1], v[2]}, tpl(), true);
                                          return ad::add(contract(g.joints, 3), contract(g.vertices, 4));
                                        },
                                        hand_in)
                                        .max_rel_error);

    std::vector<MatD> proj_in{MatD(gt.joints3d) + random_mat(rng, 21, 3, -0.01, 0.01)};
    const auto cam_in = camera_inputs(p.cameras);
    proj_in.insert(proj_in.end(), cam_in.begin() + 3, cam_in.begin() + 6);  // view 1
    worst_proj = std::max(
        worst_proj,
        grad_check([](auto&, const auto& v) { return contract(ad::project(v[0], v[1], v[2], v[3], 112, 96).pixels); },
                   proj_in)
            .max_rel_error);

    worst_hand = std::max(worst_hand, grad_check(
                                          [&](auto&, const auto& v) {
                                            const ad::HandParamVars<double> h{v[0], v[1], v[2]};
                                            return ad::hand_loss(h, ad::hand_forward(h, tpl(), false).joints, gt.hand,
                                                                 gt.joints3d, gt.flags, {})
                                                .total;
                                          },
                                          hand_in)
                                          .max_rel_error);
    const int s = gt.views();
    worst_cam = std::max(worst_cam, grad_check(
                                        [&](auto& tape, const auto& v) {
                                          return ad::camera_loss(tape, cams_of(v, 0, s), gt.cameras).total;
                                        },
                                        cam_in)
                                        .max_rel_error);
    std::vector<MatD> rep_in{proj_in[0]};
    rep_in.insert(rep_in.end(), cam_in.begin(), cam_in.end());
    worst_reproj = std::max(worst_reproj, grad_check(
                                              [&](auto&, const auto& v) {
                                                return ad::reprojection_loss(v[0], cams_of(v, 1, s), gt.joints2d,
                                                                             gt.width, gt.height, gt.flags, {})
                                                    .weighted;
                                              },
                                              rep_in)
                                              .max_rel_error);
    // Camera close enough that part of the hand lies behind it.
    std::vector<MatD> depth_in{random_mat(rng, 21, 3, -0.1, 0.1), MatD::Zero(1, 3),
                               (MatD(1, 4) << 1, 0.1 * t, 0, 0).finished(), MatD::Constant(1, 2, 1.0)};
    depth_in[1](0, 2) = 0.02;
    worst_neg = std::max(worst_neg, grad_check(
                                        [](auto&, const auto& v) {
                                          return ad::negative_depth_penalty(ad::slice_cols(
                                              ad::project(v[0], v[1], v[2], v[3], 112, 112).camera_points, 2, 1));
                                        },
                                        depth_in)
                                        .max_rel_error);
  }
  const double secs = seconds_since(t0);
  Checks c;
  c.add("forward", worst_fwd <= 1e-4, fmt("%.1e", worst_fwd));
  c.add("project", worst_proj <= 1e-4, fmt("%.1e", worst_proj));
  c.add("hand_loss", worst_hand <= 1e-4, fmt("%.1e", worst_hand));
  c.add("camera_loss", worst_cam <= 1e-4, fmt("%.1e", worst_cam));
  c.add("reprojection_loss", worst_reproj <= 1e-4, fmt("%.1e", worst_reproj));
  c.add("negative_depth", worst_neg <= 1e-4, fmt("%.1e", worst_neg));
  c.add("runtime", secs < 120, fmt("%.1f s", secs));
  return c.done();
}

// ---- 2 ----------------------------------------------------------------------

Outcome loss_oracles() {
  std::mt19937_64 rng(1002);
  const LossConfig cfg;
  double err_hand = 0, err_cam = 0, err_rep = 0, err_neg = 0;
  for (int t = 0; t < 20; ++t) {
    const Annotation gt = scene(200 + t);
    const BlockPrediction p = perturb(gt, rng, 0.2);
    ad::Tape<double> tape(false);
    const MatD pj = MatD(gt.joints3d) + random_mat(rng, 21, 3, -0.02, 0.02);
    const auto h = ad::hand_loss(hand_leaves(tape, p.hand), tape.constant(pj), gt.hand, gt.joints3d, gt.flags, cfg);
    const auto oh = oracle_hand(p.hand, pj, gt.hand, gt.joints3d, gt.flags, cfg);
    err_hand = std::max({err_hand, std::abs(h.total.item() - oh.total), std::abs(h.pose.item() - oh.pose),
                         std::abs(h.shape.item() - oh.shape), std::abs(h.joints3d.item() - oh.j3d)});
    std::vector<ad::CameraVars<double>> cv;
    for (const auto& c : p.cameras) cv.push_back(camera_leaves(tape, c));
    const auto cl = ad::camera_loss(tape, cv, gt.cameras);
    err_cam = std::max(err_cam, std::abs(cl.total.item() - oracle_camera(p.cameras, gt.cameras).total));
    const auto rl = ad::reprojection_loss(tape.constant(pj), cv, gt.joints2d, gt.width, gt.height, gt.flags, cfg);
    const auto orc = oracle_reproj(pj, p.cameras, gt.joints2d, gt.width, gt.height, gt.flags, cfg);
    err_rep = std::max({err_rep, std::abs(rl.reproj.item() - orc.reproj), std::abs(rl.weighted.item() - orc.weighted)});
    // Depth penalty with part of the hand pushed behind view 0.
    MatD behind = pj;
    behind.col(2).array() -= std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto rb = ad::reprojection_loss(tape.constant(behind), cv, gt.joints2d, gt.width, gt.height, gt.flags, cfg);
    const auto ob = oracle_reproj(behind, p.cameras, gt.joints2d, gt.width, gt.height, gt.flags, cfg);
    err_neg = std::max(err_neg, std::abs(ad::negative_depth_penalty(rb.depths).item() - ob.neg));
  }

  // Gating: with a flag off the term is exactly zero and passes no gradient.
  bool gating = true;
  for (int t = 0; t < 5; ++t) {
    const Annotation gt = scene(300 + t, 3);
    const BlockPrediction p = perturb(gt, rng, 0.2);
    SupervisionFlags off = gt.flags;
    off.has_mano = off.has_joints3d = off.has_joints2d = false;
    ad::Tape<double> tape;
    const auto hv = hand_leaves(tape, p.hand);
    const auto joints = ad::hand_forward(hv, tpl(), false).joints;
    std::vector<ad::CameraVars<double>> cv;
    for (const auto& c : p.cameras) cv.push_back(camera_leaves(tape, c));
    const auto h = ad::hand_loss(hv, joints, gt.hand, gt.joints3d, off, cfg);
    const auto r = ad::reprojection_loss(joints, cv, gt.joints2d, gt.width, gt.height, off, cfg);
    const Var<double> terms[] = {h.pose, h.shape, h.joints3d, r.reproj, r.weighted};
    for (const auto& v : terms) gating &= v.item() == 0.0;
    tape.backward(ad::add_n(std::span<const Var<double>>(terms)));
    gating &= hv.theta.grad().norm() == 0.0 && hv.beta.grad().norm() == 0.0 && hv.trans.grad().norm() == 0.0;
    for (const auto& c : cv) gating &= c.trans.grad().norm() == 0.0 && c.quat.grad().norm() == 0.0 && c.fov.grad().norm() == 0.0;
  }
  Checks c;
  c.add("hand_loss", err_hand <= 1e-6, fmt("%.1e", err_hand));
  c.add("camera_loss", err_cam <= 1e-6, fmt("%.1e", err_cam));
  c.add("reprojection_loss", err_rep <= 1e-6, fmt("%.1e", err_rep));
  c.add("negative_depth", err_neg <= 1e-6, fmt("%.1e", err_neg));
  c.add("gating exact with zero gradient", gating);
  return c.done();
}

// ---- 3 ----------------------------------------------------------------------

Outcome stage_schedule() {
  const auto w = LossConfig{}.stage_weights(4);
  const double ref[] = {0.216, 0.36, 0.6, 1.0};
  double dev = 0;
  for (int l = 0; l < 4; ++l) dev = std::max(dev, std::abs(w[static_cast<std::size_t>(l)] - ref[l]));
  Checks c;
  char buf[160];
  std::snprintf(buf, sizeof buf, "(%.17g, %.17g, %.17g, %.17g)", w[0], w[1], w[2], w[3]);
  c.add("weights", w.size() == 4 && dev <= 1e-15, buf);

  std::mt19937_64 rng(1003);
  bool unchanged = true, zero_grad = true, total_moves = true, final_moves = true;
  for (int t = 0; t < 10; ++t) {
    const Annotation gt = scene(400 + t, 4);
    std::vector<BlockPrediction> blocks;
    for (int l = 0; l < 4; ++l) blocks.push_back(perturb(gt, rng, 0.05));
    ad::Tape<double> tape;
    const auto out = output_on(tape, blocks);
    const auto base = ad::total_loss(out, gt, {}, tpl(), 4);
    tape.backward(base.projection);
    for (int l = 0; l < 3; ++l) {
      const auto& bo = out.per_block[static_cast<std::size_t>(l)];
      zero_grad &= bo.hand.theta.grad().norm() == 0.0 && bo.hand.beta.grad().norm() == 0.0 &&
                   bo.hand.trans.grad().norm() == 0.0;
      for (const auto& cam : bo.cameras) zero_grad &= cam.trans.grad().norm() + cam.quat.grad().norm() + cam.fov.grad().norm() == 0.0;
    }
    auto moved = blocks;
    for (int l = 0; l < 3; ++l) moved[static_cast<std::size_t>(l)] = perturb(gt, rng, 0.3);
    ad::Tape<double> t2(false);
    const auto other = ad::total_loss(output_on(t2, moved), gt, {}, tpl(), 4);
    unchanged &= other.projection.item() == base.projection.item();
    total_moves &= other.total.item() != base.total.item();
    auto last = blocks;
    last[3] = perturb(gt, rng, 0.3);
    ad::Tape<double> t3(false);
    final_moves &= ad::total_loss(output_on(t3, last), gt, {}, tpl(), 4).projection.item() != base.projection.item();
  }
  c.add("projection unchanged by blocks 1-3", unchanged);
  c.add("zero projection gradient into blocks 1-3", zero_grad);
  c.add("total still depends on blocks 1-3", total_moves);
  c.add("projection depends on block 4", final_moves);
  return c.done();
}

// ---- 4 ----------------------------------------------------------------------

Outcome geometry() {
  std::mt19937_64 rng(1004);
  bool cover = true;
  for (int t = 0; t < 20; ++t) {
    const Annotation gt = scene(500 + t, 3);
    std::vector<BlockPrediction> blocks;
    for (int l = 0; l < 4; ++l) blocks.push_back(perturb(gt, rng, 0.1, false));
    auto flipped = blocks;
    for (auto& b : flipped) {
      for (auto& cam : b.cameras) cam.q = -cam.q;
    }
    Annotation gt_flipped = gt;
    for (auto& cam : gt_flipped.cameras) cam.q = -cam.q;
    ad::Tape<double> t1(false), t2(false), t3(false);
    const double a = ad::total_loss(output_on(t1, blocks), gt, {}, tpl()).total.item();
    const double b = ad::total_loss(output_on(t2, flipped), gt, {}, tpl()).total.item();
    const double g = ad::total_loss(output_on(t3, blocks), gt_flipped, {}, tpl()).total.item();
    cover &= a == b && a == g;
  }
  double self = 0, sym = 0, tri_violation = -1e9, min_distinct = 1e9;
  for (int t = 0; t < 100; ++t) {
    const Mat3 a = random_rotation(rng), b = random_rotation(rng), c = random_rotation(rng);
    self = std::max(self, geodesic_distance(a, a));
    sym = std::max(sym, std::abs(geodesic_distance(a, b) - geodesic_distance(b, a)));
    min_distinct = std::min(min_distinct, geodesic_distance(a, b));
    tri_violation =
        std::max(tri_violation, geodesic_distance(a, b) - geodesic_distance(a, c) - geodesic_distance(c, b));
  }
  double exact = 0;
  bool beats_search = true;
  for (int t = 0; t < 20; ++t) {
    const Cloud gt = random_mat(rng, 21, 3, -0.1, 0.1);
    Similarity s;
    s.scale = std::uniform_real_distribution<double>(0.3, 3.0)(rng);
    s.rotation = random_rotation(rng);
    s.translation = random_mat(rng, 3, 1);
    exact = std::max(exact, (procrustes_align(s.apply(gt), gt) - gt).cwiseAbs().maxCoeff());
    const Cloud noisy = gt + random_mat(rng, 21, 3, -0.02, 0.02);
    const double pa = (procrustes_align(noisy, gt) - gt).squaredNorm();
    for (int k = 0; k < 200; ++k) {
      Similarity r;
      r.scale = std::uniform_real_distribution<double>(0.5, 1.5)(rng);
      r.rotation = k % 2 ? random_rotation(rng) : axis_angle_to_matrix(random_mat(rng, 3, 1, -0.2, 0.2));
      r.translation = random_mat(rng, 3, 1, -0.05, 0.05);
      beats_search &= pa <= (r.apply(noisy) - gt).squaredNorm();
    }
  }
  Checks c;
  c.add("quaternion double cover exact", cover);
  c.add("symmetric", sym <= 1e-12, fmt("%.1e", sym));
  c.add("d(a,a)", self <= 1e-9, fmt("%.1e", self));
  c.add("d(a,b) > 0 for a != b", min_distinct > 1e-9, fmt("min %.3f", min_distinct));
  c.add("triangle", tri_violation <= 1e-6, fmt("max excess %.1e", tri_violation));
  c.add("procrustes exact", exact <= 1e-6, fmt("%.1e", exact));
  c.add("procrustes <= random search", beats_search);
  return c.done();
}

// ---- 5 ----------------------------------------------------------------------

Outcome data_consistency(const fs::path& work) {
  GeneratorConfig g;
  double worst = 0;
  std::vector<MultiViewSample> samples;
  for (int i = 0; i < 50; ++i) {
    MultiViewSample s = generate_sample(5005, static_cast<std::uint64_t>(i), g, tpl());
    const Annotation& a = s.annot;
    ad::Tape<double> tape(false);
    const auto hv = ad::hand_params_on(tape, a.hand, false);
    std::vector<ad::CameraVars<double>> cv;
    for (const auto& c : a.cameras) cv.push_back(camera_leaves(tape, c));
    const auto r = ad::reprojection_loss(ad::hand_forward(hv, tpl(), false).joints, cv, a.joints2d, a.width, a.height,
                                         a.flags, {});
    worst = std::max(worst, r.reproj.item());
    if (i < 10) samples.push_back(std::move(s));
  }
  const fs::path dir = work / "c5_dataset";
  fs::remove_all(dir);
  write_dataset(samples, dir, json(g), 5005);
  const Dataset ds = read_dataset(dir);
  double rt = 0;
  bool images = ds.samples.size() == samples.size();
  for (std::size_t i = 0; images && i < samples.size(); ++i) {
    const auto& a = samples[i].annot;
    const auto& b = ds.samples[i].annot;
    images &= a.sample_id == b.sample_id && a.views() == b.views() && samples[i].views == ds.samples[i].views;
    if (!images) break;
    rt = std::max({rt, (a.hand.theta - b.hand.theta).cwiseAbs().maxCoeff(),
                   (a.hand.beta - b.hand.beta).cwiseAbs().maxCoeff(), (a.hand.trans - b.hand.trans).cwiseAbs().maxCoeff(),
                   (a.joints3d - b.joints3d).cwiseAbs().maxCoeff()});
    for (int s = 0; s < a.views(); ++s) {
      rt = std::max({rt, (a.joints2d[s] - b.joints2d[s]).cwiseAbs().maxCoeff(),
                     (a.cameras[s].T - b.cameras[s].T).cwiseAbs().maxCoeff(),
                     (a.cameras[s].q - b.cameras[s].q).cwiseAbs().maxCoeff(),
                     (a.cameras[s].f - b.cameras[s].f).cwiseAbs().maxCoeff()});
    }
  }
  Checks c;
  c.add("reprojection of generated samples (50)", worst <= 1e-6, fmt("max %.1e px^2", worst));
  c.add("round trip", images && rt <= 1e-9, fmt("max %.1e", rt));
  return c.done();
}

// ---- 6 ----------------------------------------------------------------------

Outcome batching() {
  bool formula = true;
  std::string list;
  for (int s = 1; s <= 10; ++s) {
    const int b = batch_for_views(32, s);
    formula &= b == 32 / s && b * s <= 32;
    list += (s > 1 ? "," : "") + std::to_string(b);
  }
  const BatchSchedule sched = build_schedule(32, 2, 10, 500, 6006);
  bool alternate = true, budget = true;
  for (int i = 0; i < sched.spans(); ++i) {
    const auto span = sched.span_at(i);
    for (std::size_t k = 0; k < span.size(); ++k) {
      alternate &= span[k].source == (k % 2 == 0 ? Source::single : Source::multi);
      budget &= span[k].batch * span[k].views <= 32 && span[k].batch == 32 / span[k].views;
    }
  }
  Checks c;
  c.add("B = floor(32/S), S=1..10", formula, "(" + list + ")");
  c.add("schedule within budget", budget);
  c.add("spans alternate single/multi", alternate);
  return c.done();
}

// ---- 7 / 8: training ----------------------------------------------------------

struct Recipe {
  ModelConfig model;
  TrainConfig train;
  LossConfig loss;
};

struct EvalResult {
  MetricReport metrics;
  double max_rot_deg = 0;  // views 2.. only
};

EvalResult evaluate(const Model<float>& model, const std::vector<MultiViewSample>& samples) {
  const auto preds = cli::predict_all(model, samples, 8);
  MetricAccumulator acc;
  EvalResult r;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& a = samples[i].annot;
    const HandGeometry geo = forward(preds[i].hand, tpl(), true);
    acc.add_joints(geo.joints, a.joints3d);
    acc.add_vertices(geo.vertices, forward(a.hand, tpl(), true).vertices);
    for (int s = 1; s < a.views(); ++s) {
      r.max_rot_deg = std::max(r.max_rot_deg, geodesic_distance(preds[i].cameras[static_cast<std::size_t>(s)].rotation(),
                                                                a.cameras[static_cast<std::size_t>(s)].rotation()) *
                                                  180.0 / std::numbers::pi);
    }
  }
  r.metrics = acc.report();
  return r;
}

// Trains and returns the per-span total losses; progress goes to the log file.
std::vector<double> train(Model<float>& model, const Recipe& rc, const std::vector<MultiViewSample>& pool,
                          const fs::path& log_path) {
  Trainer<float> trainer(model, tpl(), rc.train, rc.loss);
  std::ofstream log(log_path);
  std::vector<double> losses;
  const auto t0 = std::chrono::steady_clock::now();
  while (trainer.step() < rc.train.total_steps) {
    const SpanReport r = trainer.train_next(pool);
    losses.push_back(r.loss.total);
    log << to_json(r).dump() << '\n';
    if (trainer.step() % 100 == 0) {
      std::cout << "  step " << trainer.step() << "/" << rc.train.total_steps << " loss " << r.loss.total << " ("
                << std::lround(seconds_since(t0)) << " s)" << std::endl;
    }
  }
  return losses;
}

double window_mean(const std::vector<double>& v, int centre, int half) {
  double acc = 0;
  int n = 0;
  for (int i = std::max(0, centre - half); i <= std::min(static_cast<int>(v.size()) - 1, centre + half); ++i, ++n) acc += v[static_cast<std::size_t>(i)];
  return acc / n;
}

// Overfit recipe. The 3D, camera and 2D targets are all available here, and
// the pixel-scale reprojection term swamps the others at this size, so it is
// switched off; see the README.
Recipe overfit_recipe() {
  Recipe r;
  r.model.embed_dim = 64;
  r.model.aggregator_depth = 2;
  r.model.head_hidden = 64;
  r.train.total_steps = 2000;
  r.train.n_img = 16;
  r.train.views_min = 2;
  r.train.views_max = 4;
  r.train.lr_peak = 7e-4;
  r.train.weight_decay = 0.0;
  r.train.seed = 3;
  r.train.checkpoint_every = 0;
  r.loss.lambda_proj = 0.0;
  return r;
}

Outcome overfit(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  GeneratorConfig g;
  g.views_min = g.views_max = 4;
  std::vector<MultiViewSample> data;
  for (int i = 0; i < 8; ++i) data.push_back(generate_sample(2024, static_cast<std::uint64_t>(i), g, tpl()));
  const Recipe rc = overfit_recipe();
  Model<float> model(rc.model, 1);
  const auto losses = train(model, rc, data, work / "c7_train_log.jsonl");
  const EvalResult e = evaluate(model, data);
  const double secs = seconds_since(t0);
  Checks c;
  c.add("RR-MPJPE < 10 mm", e.metrics.rr_mpjpe < 10.0, fmt("%.2f", e.metrics.rr_mpjpe));
  c.add("PA-MPJPE < 5 mm", e.metrics.pa_mpjpe < 5.0, fmt("%.2f", e.metrics.pa_mpjpe));
  c.add("views 2-4 rotation < 10 deg", e.max_rot_deg < 10.0, fmt("max %.2f", e.max_rot_deg));
  const double early = window_mean(losses, 9, 5), later = window_mean(losses, 499, 5);
  c.note("smoothed loss at step 500 is " + fmt("%.1f%%", 100 * later / early) + " of step 10");
  std::cout << "  overfit runtime " << std::lround(secs) << " s on this machine\n";
  return c.done();
}

Outcome generalization(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  GeneratorConfig g;
  std::vector<MultiViewSample> train_set, held_out;
  for (int i = 0; i < 2000; ++i) train_set.push_back(generate_sample(8008, static_cast<std::uint64_t>(i), g, tpl()));
  for (int i = 0; i < 200; ++i) held_out.push_back(generate_sample(8009, static_cast<std::uint64_t>(i), g, tpl()));
  Recipe rc;
  rc.train.seed = 8;
  rc.train.checkpoint_every = 0;
  Model<float> model(rc.model, rc.train.seed);
  const EvalResult before = evaluate(model, held_out);
  train(model, rc, train_set, work / "c8_train_log.jsonl");
  const EvalResult after = evaluate(model, held_out);
  std::cout << "  generalization runtime " << std::lround(seconds_since(t0)) << " s on this machine\n";
  Checks c;
  c.add("PA-MPJPE finite", std::isfinite(after.metrics.pa_mpjpe));
  c.add("PA-MPJPE <= 50% of untrained", after.metrics.pa_mpjpe <= 0.5 * before.metrics.pa_mpjpe,
        fmt("%.2f", after.metrics.pa_mpjpe) + " vs " + fmt("%.2f", before.metrics.pa_mpjpe));
  c.add("PCK-AUC@50 > 0.3", after.metrics.auc_j > 0.3, fmt("%.3f", after.metrics.auc_j));
  return c.done();
}

// ---- 9 ----------------------------------------------------------------------

double trapezoid_auc(const std::vector<double>& e, double max_t, int steps) {
  std::vector<double> y;
  for (int k = 0; k < steps; ++k) {
    const double tau = max_t * k / (steps - 1);
    int c = 0;
    for (double v : e) c += v <= tau;
    y.push_back(static_cast<double>(c) / static_cast<double>(e.size()));
  }
  double area = 0;
  for (int k = 0; k + 1 < steps; ++k) area += (max_t / (steps - 1)) * (y[k] + y[k + 1]) / 2;
  return area / max_t;
}

Outcome metric_self_tests() {
  std::mt19937_64 rng(1009);
  MetricAccumulator gt_acc;
  for (int t = 0; t < 20; ++t) {
    const Annotation a = scene(900 + t, 1);
    gt_acc.add_joints(a.joints3d, a.joints3d);
    const Cloud v = forward(a.hand, tpl(), true).vertices;
    gt_acc.add_vertices(v, v);
  }
  const MetricReport g = gt_acc.report();
  const double zero = std::max({g.rr_mpjpe, g.pa_mpjpe, g.rr_mpvpe, g.pa_mpvpe});
  double invariance = 0, auc = 0;
  for (int t = 0; t < 20; ++t) {
    const Cloud gt = random_mat(rng, 21, 3, -0.1, 0.1);
    const Cloud pred = gt + random_mat(rng, 21, 3, -0.02, 0.02);
    Similarity s;
    s.scale = std::uniform_real_distribution<double>(0.3, 3.0)(rng);
    s.rotation = random_rotation(rng);
    s.translation = random_mat(rng, 3, 1);
    invariance = std::max(invariance, std::abs(position_error(procrustes_align(s.apply(pred), gt), gt) -
                                               position_error(procrustes_align(pred, gt), gt)));
    std::vector<double> e;
    std::exponential_distribution<double> ex(1.0 / 15.0);
    for (int i = 0; i < 300; ++i) e.push_back(ex(rng));
    for (double tau : {20.0, 50.0}) auc = std::max(auc, std::abs(pck_auc(e, tau) - trapezoid_auc(e, tau, 100)));
  }
  Checks c;
  c.add("GT errors zero", zero <= 1e-9, fmt("max %.1e mm", zero));
  c.add("GT AUC 1", g.auc_j == 1.0 && g.auc_v == 1.0);
  c.add("PA invariant under similarity", invariance <= 1e-6, fmt("%.1e mm", invariance));
  c.add("AUC = trapezoid oracle", auc <= 1e-9, fmt("%.1e", auc));
  return c.done();
}

// ---- 10 ---------------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(HGGT_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism(const fs::path& work) {
  const fs::path dir = work / "c10";
  fs::remove_all(dir);
  fs::create_directories(dir);
  json cfg;
  cfg["train"] = {{"total_steps", 100}, {"checkpoint_every", 50}, {"n_img", 8}, {"views_max", 4}, {"seed", 10}};
  cfg["model"] = {{"embed_dim", 64}, {"aggregator_depth", 2}, {"refine_blocks", 2}, {"head_hidden", 64}};
  cfg["generator"] = {{"views_max", 4}};
  const fs::path cfg_path = dir / "run.json";
  std::ofstream(cfg_path) << cfg.dump(2);
  const std::string base = "--config " + cfg_path.string();
  Checks c;
  const fs::path data = dir / "data";
  c.add("gen-data", run_cli("gen-data " + base + " --out " + data.string() + " --num 32 --seed 10", dir / "gen.txt") == 0);
  const auto train = [&](const std::string& name, const std::string& extra) {
    return run_cli("train " + base + " --data " + data.string() + " --out " + (dir / name).string() + extra,
                   dir / (name + ".txt"));
  };
  c.add("run a", train("a", "") == 0);
  c.add("run b", train("b", "") == 0);
  const std::string log_a = read_file_bytes(dir / "a" / cli::kTrainLog);
  c.add("identical loss logs", log_a == read_file_bytes(dir / "b" / cli::kTrainLog));
  std::size_t lines = 0;
  for (char ch : log_a) lines += ch == '\n';
  c.add("log covers 100 steps", lines == 100, std::to_string(lines) + " lines");
  fs::copy(dir / "a", dir / "r", fs::copy_options::recursive);
  fs::remove(dir / "r" / cli::kFinalCheckpoint);
  c.add("resume", train("r", " --resume " + (dir / "r" / "checkpoints" / "step_000050.ckpt").string()) == 0);
  c.add("resumed log identical", read_file_bytes(dir / "r" / cli::kTrainLog) == log_a);
  c.add("resumed weights identical",
        read_file_bytes(dir / "r" / cli::kFinalCheckpoint) == read_file_bytes(dir / "a" / cli::kFinalCheckpoint));
  return c.done();
}

const char* const kNames[] = {"",
                              "gradient suite",
                              "loss formula oracles",
                              "stage-weight schedule",
                              "geometry invariants",
                              "data/loss consistency",
                              "batching contract",
                              "overfit convergence",
                              "generalization smoke",
                              "metric self-tests",
                              "determinism"};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int only = 0;
  std::string work = "acceptance_work";
  app.add_option("--only", only, "Run a single criterion (1-10)")->check(CLI::Range(1, 10));
  app.add_option("--work", work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const std::function<Outcome()> run[] = {
      nullptr,
      gradient_suite,
      loss_oracles,
      stage_schedule,
      geometry,
      [&] { return data_consistency(work); },
      batching,
      [&] { return overfit(work); },
      [&] { return generalization(work); },
      metric_self_tests,
      [&] { return determinism(work); },
  };
  int failed = 0;
  for (int k = 1; k <= 10; ++k) {
    if (only != 0 && k != only) continue;
    Outcome o;
    try {
      o = run[k]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << k << " (" << kNames[k] << "): " << o.detail
              << std::endl;
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
