// SPDX-License-Identifier: Apache-2.0
//
// Root-relative and Procrustes-aligned position errors, PCK and its AUC.
#pragma once

#include "hggt/hand_model.hpp"

#include <Eigen/SVD>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace hggt {

using Cloud = Eigen::Matrix<double, Eigen::Dynamic, 3>;

inline Cloud root_relative(const Cloud& points, int root_index = 0) {
  if (root_index < 0 || root_index >= points.rows()) throw std::out_of_range("root_relative: root index out of range");
  Cloud out = points;
  out.rowwise() -= points.row(root_index);
  return out;
}

struct Similarity {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  [[nodiscard]] Cloud apply(const Cloud& p) const {
    Cloud out = (scale * (p * rotation.transpose())).eval();
    out.rowwise() += translation.transpose();
    return out;
  }
};

// Least-squares similarity (or rigid, with_scale = false) transform taking
// pred onto gt.
inline Similarity procrustes_fit(const Cloud& pred, const Cloud& gt, bool with_scale = true) {
  if (pred.rows() != gt.rows()) throw std::invalid_argument("procrustes: point count mismatch");
  if (pred.rows() < 3) throw std::invalid_argument("procrustes: need at least 3 points");
  if (!pred.allFinite() || !gt.allFinite()) throw std::invalid_argument("procrustes: non-finite input");
  const Eigen::RowVector3d mp = pred.colwise().mean();
  const Eigen::RowVector3d mg = gt.colwise().mean();
  const Cloud xp = pred.rowwise() - mp;
  const Cloud xg = gt.rowwise() - mg;
  const double var_p = xp.squaredNorm();
  const double var_g = xg.squaredNorm();
  if (var_p < 1e-20 || var_g < 1e-20) throw std::invalid_argument("procrustes: degenerate point cloud");

  const Mat3 cov = xg.transpose() * xp;  // sum_i g_i p_i^T
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2, 2) = -1;
  Similarity s;
  s.rotation = svd.matrixU() * d * svd.matrixV().transpose();
  s.scale = with_scale ? (svd.singularValues().asDiagonal() * d).trace() / var_p : 1.0;
  s.translation = mg.transpose() - s.scale * s.rotation * mp.transpose();
  return s;
}

inline Cloud procrustes_align(const Cloud& pred, const Cloud& gt, bool with_scale = true) {
  return procrustes_fit(pred, gt, with_scale).apply(pred);
}

inline std::vector<double> point_errors_mm(const Cloud& pred, const Cloud& gt) {
  if (pred.rows() != gt.rows()) throw std::invalid_argument("position_error: shape mismatch");
  std::vector<double> e(static_cast<std::size_t>(pred.rows()));
  for (Eigen::Index i = 0; i < pred.rows(); ++i) e[static_cast<std::size_t>(i)] = 1000.0 * (pred.row(i) - gt.row(i)).norm();
  return e;
}

// Mean Euclidean distance in millimetres (inputs in metres).
inline double position_error(const Cloud& pred, const Cloud& gt) {
  if (pred.rows() == 0) throw std::invalid_argument("position_error: empty cloud");
  const auto e = point_errors_mm(pred, gt);
  double acc = 0;
  for (double v : e) acc += v;
  return acc / static_cast<double>(e.size());
}

// Threshold comparisons ignore round-off below this (mm); without it an
// aligned copy of the ground truth misses the tau = 0 point.
inline constexpr double kPckTolerance = 1e-9;

// Fraction of errors <= tau.
inline double pck(const std::vector<double>& errors, double tau) {
  if (errors.empty()) throw std::invalid_argument("pck: empty error list");
  std::size_t n = 0;
  for (double e : errors) n += e <= tau + kPckTolerance ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(errors.size());
}

// Normalised trapezoidal area under PCK(tau) for `steps` uniform thresholds
// in [0, max_threshold].
inline double pck_auc(std::vector<double> errors, double max_threshold, int steps = 100) {
  if (errors.empty()) throw std::invalid_argument("pck_auc: empty error list");
  if (!(max_threshold > 0)) throw std::invalid_argument("pck_auc: max_threshold must be positive");
  if (steps < 2) throw std::invalid_argument("pck_auc: steps must be >= 2");
  std::sort(errors.begin(), errors.end());
  const double n = static_cast<double>(errors.size());
  auto frac = [&](double tau) {
    return static_cast<double>(std::upper_bound(errors.begin(), errors.end(), tau + kPckTolerance) - errors.begin()) / n;
  };
  double area = 0;
  double prev = frac(0.0);
  for (int k = 1; k < steps; ++k) {
    const double cur = frac(max_threshold * k / (steps - 1));
    area += 0.5 * (prev + cur);
    prev = cur;
  }
  return area / (steps - 1);
}

struct MetricConfig {
  double auc_joint_threshold = 50.0;   // mm
  double auc_vertex_threshold = 20.0;  // mm
  int auc_steps = 100;
  bool pa_with_scale = true;
  int root_index = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MetricConfig, auc_joint_threshold, auc_vertex_threshold, auc_steps,
                                                pa_with_scale, root_index)

struct MetricReport {
  int samples = 0;
  double rr_mpjpe = 0, rr_mpvpe = 0, pa_mpjpe = 0, pa_mpvpe = 0;
  double auc_j = 0, auc_v = 0;
  double auc_j_threshold = 0, auc_v_threshold = 0;
  bool has_vertices = false;
};

inline nlohmann::json to_json(const MetricReport& r) {
  return {{"samples", r.samples},         {"rr_mpjpe_mm", r.rr_mpjpe},  {"pa_mpjpe_mm", r.pa_mpjpe},
          {"rr_mpvpe_mm", r.rr_mpvpe},    {"pa_mpvpe_mm", r.pa_mpvpe},  {"auc_j", r.auc_j},
          {"auc_v", r.auc_v},             {"auc_j_threshold_mm", r.auc_j_threshold},
          {"auc_v_threshold_mm", r.auc_v_threshold}, {"has_vertices", r.has_vertices}};
}

// Accumulates per-point errors over a dataset. AUC is computed on the pooled
// errors; MPJPE/MPVPE are means over samples of per-sample means.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(MetricConfig cfg = {}) : cfg_(cfg) {}

  void add_joints(const Cloud& pred, const Cloud& gt) {
    if (pred.rows() != gt.rows()) throw std::invalid_argument("metrics: joint count mismatch");
    add(pred, gt, rr_j_, pa_j_, pooled_j_);
    ++samples_;
  }

  void add_vertices(const Cloud& pred, const Cloud& gt) {
    if (pred.rows() != gt.rows()) throw std::invalid_argument("metrics: vertex count mismatch");
    add(pred, gt, rr_v_, pa_v_, pooled_v_);
  }

  [[nodiscard]] MetricReport report() const {
    if (samples_ == 0) throw std::invalid_argument("metrics: no samples");
    MetricReport r;
    r.samples = samples_;
    r.rr_mpjpe = mean(rr_j_);
    r.pa_mpjpe = mean(pa_j_);
    r.auc_j_threshold = cfg_.auc_joint_threshold;
    r.auc_v_threshold = cfg_.auc_vertex_threshold;
    r.auc_j = pck_auc(pooled_j_, cfg_.auc_joint_threshold, cfg_.auc_steps);
    r.has_vertices = !rr_v_.empty();
    if (r.has_vertices) {
      r.rr_mpvpe = mean(rr_v_);
      r.pa_mpvpe = mean(pa_v_);
      r.auc_v = pck_auc(pooled_v_, cfg_.auc_vertex_threshold, cfg_.auc_steps);
    }
    return r;
  }

 private:
  void add(const Cloud& pred, const Cloud& gt, std::vector<double>& rr, std::vector<double>& pa,
           std::vector<double>& pooled) const {
    const Cloud p = root_relative(pred, cfg_.root_index);
    const Cloud g = root_relative(gt, cfg_.root_index);
    rr.push_back(position_error(p, g));
    const Cloud aligned = procrustes_align(pred, gt, cfg_.pa_with_scale);
    const auto e = point_errors_mm(aligned, gt);
    double acc = 0;
    for (double v : e) acc += v;
    pa.push_back(acc / static_cast<double>(e.size()));
    pooled.insert(pooled.end(), e.begin(), e.end());
  }

  static double mean(const std::vector<double>& v) {
    double acc = 0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
  }

  MetricConfig cfg_;
  int samples_ = 0;
  std::vector<double> rr_j_, pa_j_, pooled_j_;
  std::vector<double> rr_v_, pa_v_, pooled_v_;
};

}  // namespace hggt
