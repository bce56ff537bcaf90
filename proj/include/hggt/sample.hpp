// SPDX-License-Identifier: Apache-2.0
//
// Multi-view training sample: images plus ground truth.
#pragma once

#include "hggt/camera.hpp"
#include "hggt/hand_model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace hggt {

using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2>;

struct SupervisionFlags {
  bool has_mano = true;
  bool has_joints3d = true;
  bool has_joints2d = true;
  bool is_multiview = false;
};

// 8-bit RGB image, row-major, interleaved channels.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  [[nodiscard]] std::uint8_t at(int x, int y, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool operator==(const Image&) const = default;
};

struct Annotation {
  std::string sample_id;
  int width = 0;
  int height = 0;
  HandParams hand;
  JointMat joints3d;                  // 21 x 3, first-camera frame, meters
  std::vector<Points2> joints2d;      // per view, 21 x 2 pixels
  std::vector<CameraEncoding> cameras;  // per view, cameras[0] is the identity pose
  SupervisionFlags flags;

  [[nodiscard]] int views() const { return static_cast<int>(cameras.size()); }
};

struct MultiViewSample {
  Annotation annot;
  std::vector<Image> views;
};

// Keeps the listed views (first entry must be 0 so the reference frame and
// the hand parameters stay valid) and refreshes the multi-view flag.
inline MultiViewSample select_views(const MultiViewSample& s, const std::vector<int>& keep) {
  if (keep.empty() || keep[0] != 0) throw std::invalid_argument("select_views: view 0 must be kept first");
  MultiViewSample out;
  out.annot = s.annot;
  out.annot.cameras.clear();
  out.annot.joints2d.clear();
  for (int v : keep) {
    if (v < 0 || v >= s.annot.views()) throw std::out_of_range("select_views: view index");
    out.annot.cameras.push_back(s.annot.cameras[static_cast<std::size_t>(v)]);
    out.annot.joints2d.push_back(s.annot.joints2d[static_cast<std::size_t>(v)]);
    if (!s.views.empty()) out.views.push_back(s.views[static_cast<std::size_t>(v)]);
  }
  out.annot.flags.is_multiview = keep.size() > 1;
  return out;
}

}  // namespace hggt
