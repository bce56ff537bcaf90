// SPDX-License-Identifier: Apache-2.0
//
// On-disk dataset layout:
//   DIR/manifest.json             schema_version, num_samples, generator, seed, samples[]
//   DIR/<sample_id>/view_000.png  8-bit RGB, one per view
//   DIR/<sample_id>/annot.json    joints2d, joints3d, cameras (9-vectors), theta, beta, trans, flags
#pragma once

#include "hggt/camera.hpp"
#include "hggt/image_io.hpp"
#include "hggt/sample.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace hggt {

inline constexpr int kDatasetSchemaVersion = 1;
inline constexpr double kLoadConsistencyTolerance = 1e-3;  // px

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Dataset {
  nlohmann::json manifest;
  std::vector<MultiViewSample> samples;
};

inline std::string view_filename(int s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "view_%03d.png", s);
  return buf;
}

inline nlohmann::json annotation_to_json(const Annotation& a) {
  using nlohmann::json;
  json j;
  j["sample_id"] = a.sample_id;
  j["width"] = a.width;
  j["height"] = a.height;
  j["views"] = a.views();
  j["theta"] = std::vector<double>(a.hand.theta.data(), a.hand.theta.data() + kNumPose);
  j["beta"] = std::vector<double>(a.hand.beta.data(), a.hand.beta.data() + kNumShape);
  j["trans"] = std::vector<double>(a.hand.trans.data(), a.hand.trans.data() + 3);
  json j3 = json::array();
  for (Eigen::Index i = 0; i < a.joints3d.rows(); ++i) j3.push_back({a.joints3d(i, 0), a.joints3d(i, 1), a.joints3d(i, 2)});
  j["joints3d"] = j3;
  json j2 = json::array();
  for (const auto& view : a.joints2d) {
    json v = json::array();
    for (Eigen::Index i = 0; i < view.rows(); ++i) v.push_back({view(i, 0), view(i, 1)});
    j2.push_back(v);
  }
  j["joints2d"] = j2;
  json cams = json::array();
  for (const auto& c : a.cameras) cams.push_back(c.to_array());
  j["cameras"] = cams;
  j["flags"] = {{"has_mano", a.flags.has_mano},
                {"has_joints3d", a.flags.has_joints3d},
                {"has_joints2d", a.flags.has_joints2d},
                {"is_multiview", a.flags.is_multiview}};
  return j;
}

namespace detail {

inline std::vector<double> read_vec(const nlohmann::json& j, const char* key, std::size_t n, const std::string& id) {
  if (!j.contains(key) || !j[key].is_array() || j[key].size() != n) {
    throw DatasetError("sample " + id + ": field '" + key + "' must be an array of " + std::to_string(n));
  }
  std::vector<double> v;
  for (const auto& e : j[key]) {
    if (!e.is_number()) throw DatasetError("sample " + id + ": field '" + key + "' has a non-numeric entry");
    v.push_back(e.get<double>());
  }
  return v;
}

inline Eigen::MatrixXd read_rows(const nlohmann::json& rows, Eigen::Index n, Eigen::Index cols, const std::string& id,
                                 const std::string& what) {
  if (!rows.is_array() || static_cast<Eigen::Index>(rows.size()) != n) {
    throw DatasetError("sample " + id + ": " + what + " must have " + std::to_string(n) + " rows");
  }
  Eigen::MatrixXd m(n, cols);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    if (!r.is_array() || static_cast<Eigen::Index>(r.size()) != cols) {
      throw DatasetError("sample " + id + ": " + what + " row " + std::to_string(i) + " must have " +
                         std::to_string(cols) + " entries");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!r[static_cast<std::size_t>(c)].is_number()) throw DatasetError("sample " + id + ": " + what + " is not numeric");
      m(i, c) = r[static_cast<std::size_t>(c)].get<double>();
    }
  }
  if (!m.allFinite()) throw DatasetError("sample " + id + ": " + what + " has non-finite values");
  return m;
}

}  // namespace detail

inline Annotation annotation_from_json(const nlohmann::json& j) {
  const std::string id = j.value("sample_id", std::string("<unnamed>"));
  try {
    Annotation a;
    a.sample_id = id;
    a.width = j.at("width").get<int>();
    a.height = j.at("height").get<int>();
    const int views = j.at("views").get<int>();
    if (views < 1) throw DatasetError("sample " + id + ": view count must be >= 1");
    if (a.width <= 0 || a.height <= 0) throw DatasetError("sample " + id + ": image size must be positive");
    const auto th = detail::read_vec(j, "theta", kNumPose, id);
    const auto be = detail::read_vec(j, "beta", kNumShape, id);
    const auto tr = detail::read_vec(j, "trans", 3, id);
    a.hand.theta = Eigen::Map<const PoseVec>(th.data());
    a.hand.beta = Eigen::Map<const ShapeVec>(be.data());
    a.hand.trans = Eigen::Map<const Vec3>(tr.data());
    if (!a.hand.all_finite()) throw DatasetError("sample " + id + ": non-finite hand parameters");
    a.joints3d = detail::read_rows(j.at("joints3d"), kNumJoints, 3, id, "joints3d");
    const auto& j2 = j.at("joints2d");
    const auto& cams = j.at("cameras");
    if (!j2.is_array() || static_cast<int>(j2.size()) != views) throw DatasetError("sample " + id + ": joints2d view count mismatch");
    if (!cams.is_array() || static_cast<int>(cams.size()) != views) throw DatasetError("sample " + id + ": camera count mismatch");
    for (int s = 0; s < views; ++s) {
      a.joints2d.push_back(detail::read_rows(j2[static_cast<std::size_t>(s)], kNumJoints, 2, id, "joints2d"));
      const auto& c = cams[static_cast<std::size_t>(s)];
      if (!c.is_array() || c.size() != 9) throw DatasetError("sample " + id + ": camera " + std::to_string(s) + " must be a 9-vector");
      std::array<double, 9> arr{};
      for (std::size_t k = 0; k < 9; ++k) arr[k] = c[k].get<double>();
      a.cameras.push_back(CameraEncoding::from_array(arr));
    }
    const auto& fl = j.at("flags");
    a.flags.has_mano = fl.at("has_mano").get<bool>();
    a.flags.has_joints3d = fl.at("has_joints3d").get<bool>();
    a.flags.has_joints2d = fl.at("has_joints2d").get<bool>();
    a.flags.is_multiview = fl.at("is_multiview").get<bool>();
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("sample " + id + ": malformed annotation: " + e.what());
  }
}

// Shape and geometry checks; throws DatasetError naming the sample.
inline void validate_annotation(const Annotation& a, double tol = kLoadConsistencyTolerance) {
  const std::string& id = a.sample_id;
  if (a.views() < 1 || static_cast<int>(a.joints2d.size()) != a.views()) throw DatasetError("sample " + id + ": view count mismatch");
  if (a.joints3d.rows() != kNumJoints) throw DatasetError("sample " + id + ": joints3d must be 21 x 3");
  if (a.flags.is_multiview != (a.views() > 1)) throw DatasetError("sample " + id + ": is_multiview flag disagrees with view count");
  if (!a.cameras[0].is_identity_pose(1e-9)) throw DatasetError("sample " + id + ": camera 0 is not the identity pose");
  for (int s = 0; s < a.views(); ++s) {
    const auto& cam = a.cameras[static_cast<std::size_t>(s)];
    if (!cam.T.allFinite() || !cam.q.allFinite() || std::abs(cam.q.norm() - 1.0) > 1e-6) {
      throw DatasetError("sample " + id + ": camera " + std::to_string(s) + " has an invalid quaternion");
    }
    Intrinsics k;
    try {
      k = fov_to_intrinsics(cam.f, a.width, a.height);
    } catch (const std::invalid_argument&) {
      throw DatasetError("sample " + id + ": camera " + std::to_string(s) + " has an invalid field of view");
    }
    const auto p = project(a.joints3d, k, cam);
    const double err = (p.pixels - a.joints2d[static_cast<std::size_t>(s)]).cwiseAbs().maxCoeff();
    if (!(err <= tol)) {
      throw DatasetError("sample " + id + ": view " + std::to_string(s) + " violates projection consistency (" +
                         std::to_string(err) + " px)");
    }
  }
}

inline void write_dataset(const std::vector<MultiViewSample>& samples, const std::filesystem::path& dir,
                          const nlohmann::json& generator, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["schema_version"] = kDatasetSchemaVersion;
  manifest["num_samples"] = samples.size();
  manifest["generator"] = generator;
  manifest["seed"] = seed;
  nlohmann::json ids = nlohmann::json::array();
  std::set<std::string> seen;
  for (const auto& s : samples) {
    if (!seen.insert(s.annot.sample_id).second) throw DatasetError("duplicate sample id " + s.annot.sample_id);
    if (static_cast<int>(s.views.size()) != s.annot.views()) throw DatasetError("sample " + s.annot.sample_id + ": image count mismatch");
    ids.push_back(s.annot.sample_id);
    const fs::path sd = dir / s.annot.sample_id;
    fs::create_directories(sd);
    for (int v = 0; v < s.annot.views(); ++v) write_png((sd / view_filename(v)).string(), s.views[static_cast<std::size_t>(v)]);
    std::ofstream out(sd / "annot.json");
    out << annotation_to_json(s.annot).dump(1) << '\n';
    if (!out) throw DatasetError("cannot write annotation for " + s.annot.sample_id);
  }
  manifest["samples"] = ids;
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(1) << '\n';
  if (!out) throw DatasetError("cannot write manifest in " + dir.string());
}

inline nlohmann::json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw DatasetError("cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("cannot parse " + p.string() + ": " + e.what());
  }
}

inline Dataset read_dataset(const std::filesystem::path& dir, bool load_images = true) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DatasetError("dataset directory not found: " + dir.string());
  Dataset ds;
  ds.manifest = read_json_file(dir / "manifest.json");
  const auto& m = ds.manifest;
  if (!m.contains("schema_version") || m["schema_version"] != kDatasetSchemaVersion) {
    throw DatasetError("unsupported dataset schema version in " + dir.string());
  }
  if (!m.contains("samples") || !m["samples"].is_array() || !m.contains("num_samples")) {
    throw DatasetError("manifest is missing the sample list");
  }
  const auto n = m["num_samples"].get<std::size_t>();
  std::size_t on_disk = 0;
  for (const auto& e : fs::directory_iterator(dir)) on_disk += e.is_directory() && fs::exists(e.path() / "annot.json") ? 1 : 0;
  if (m["samples"].size() != n || on_disk != n) {
    throw DatasetError("manifest lists " + std::to_string(n) + " samples but the directory holds " +
                       std::to_string(on_disk));
  }
  for (const auto& idj : m["samples"]) {
    const std::string id = idj.get<std::string>();
    const fs::path sd = dir / id;
    if (!fs::exists(sd / "annot.json")) throw DatasetError("sample " + id + ": missing annot.json");
    MultiViewSample s;
    s.annot = annotation_from_json(read_json_file(sd / "annot.json"));
    if (s.annot.sample_id != id) throw DatasetError("sample " + id + ": sample_id does not match its directory");
    validate_annotation(s.annot);
    if (load_images) {
      for (int v = 0; v < s.annot.views(); ++v) {
        const fs::path p = sd / view_filename(v);
        Image img;
        try {
          img = read_png(p.string());
        } catch (const ImageIoError& e) {
          throw DatasetError("sample " + id + ": " + e.what());
        }
        if (img.width != s.annot.width || img.height != s.annot.height) {
          throw DatasetError("sample " + id + ": " + p.filename().string() + " has the wrong size");
        }
        s.views.push_back(std::move(img));
      }
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace hggt
