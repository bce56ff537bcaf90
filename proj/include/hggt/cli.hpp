// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the `hggt` tool. Each command resolves its
// run config, prints it, writes it as config.json next to its artifacts and
// then runs. Errors surface as exceptions; exit_code_for() maps them.
#pragma once

#include "hggt/config.hpp"
#include "hggt/dataset_io.hpp"
#include "hggt/image_io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace hggt::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kConfigFile = "config.json";
inline constexpr const char* kTrainLog = "train_log.jsonl";
inline constexpr const char* kFinalCheckpoint = "final.ckpt";
inline constexpr const char* kPredictionFile = "prediction.json";

// ---- config resolution -----------------------------------------------------

inline json config_document(const std::optional<std::string>& path) {
  return path ? load_config_document(*path) : json::object();
}

inline void set_if(json& doc, const char* section, const char* key, const auto& value) {
  if (value) doc[section][key] = *value;
}

inline void echo_config(const RunConfig& cfg, const fs::path& dir, std::ostream& out,
                        const std::string& name = kConfigFile) {
  const json j = cfg;
  out << "resolved config:\n" << j.dump(2) << '\n';
  fs::create_directories(dir);
  std::ofstream f(dir / name);
  f << j.dump(2) << '\n';
  if (!f) throw DataError("cannot write " + (dir / name).string());
}

inline std::string template_digest(const nlohmann::json& manifest) {
  return manifest.contains("generator") && manifest["generator"].contains("hand_template")
             ? manifest["generator"]["hand_template"].dump()
             : std::string();
}

// ---- predictions -----------------------------------------------------------

inline json rows_to_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) r.push_back(m(i, c));
    a.push_back(r);
  }
  return a;
}

inline Eigen::MatrixXd rows_from_json(const json& a, Eigen::Index cols, const std::string& what) {
  if (!a.is_array()) throw DataError(what + " must be an array of rows");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(a.size()), cols);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_array() || static_cast<Eigen::Index>(a[i].size()) != cols) {
      throw DataError(what + ": row " + std::to_string(i) + " must hold " + std::to_string(cols) + " numbers");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!a[i][static_cast<std::size_t>(c)].is_number()) throw DataError(what + ": non-numeric entry");
      m(static_cast<Eigen::Index>(i), c) = a[i][static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

inline json prediction_to_json(const std::string& id, const BlockPrediction& b, const HandGeometry& geo) {
  json j;
  j["sample_id"] = id;
  j["theta"] = std::vector<double>(b.hand.theta.data(), b.hand.theta.data() + kNumPose);
  j["beta"] = std::vector<double>(b.hand.beta.data(), b.hand.beta.data() + kNumShape);
  j["trans"] = std::vector<double>(b.hand.trans.data(), b.hand.trans.data() + 3);
  json cams = json::array();
  for (const auto& c : b.cameras) cams.push_back(c.to_array());
  j["cameras"] = cams;
  j["joints3d"] = rows_to_json(geo.joints);
  if (geo.vertices.rows() > 0) j["vertices"] = rows_to_json(geo.vertices);
  return j;
}

struct PointPrediction {
  Eigen::MatrixXd joints, vertices;
};

inline PointPrediction prediction_from_json(const json& j, const std::string& id) {
  if (!j.is_object() || !j.contains("joints3d")) throw DataError("prediction " + id + ": missing joints3d");
  PointPrediction p;
  p.joints = rows_from_json(j["joints3d"], 3, "prediction " + id + " joints3d");
  if (j.contains("vertices")) p.vertices = rows_from_json(j["vertices"], 3, "prediction " + id + " vertices");
  return p;
}

// ---- gen-data --------------------------------------------------------------

struct GenDataOptions {
  std::optional<std::string> config;
  std::string out;
  int num = 0;
  std::optional<int> views_min, views_max, image_size;
  std::uint64_t seed = 0;
};

// Digest over every annotation and image, in manifest order.
inline std::string dataset_content_digest(const fs::path& dir, const json& ids) {
  std::string all;
  for (const auto& idj : ids) {
    const std::string id = idj.get<std::string>();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir / id)) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      all += id + "/" + f.filename().string() + '\n';
      all += sha256_hex(read_file_bytes(f)) + '\n';
    }
  }
  return sha256_hex(all);
}

// Returns the SHA-256 of the written manifest.
inline std::string cmd_gen_data(const GenDataOptions& o, std::ostream& out = std::cout) {
  if (o.out.empty()) throw UsageError("--out is required");
  if (o.num < 1) throw UsageError("--num must be >= 1");
  json doc = config_document(o.config);
  set_if(doc, "generator", "views_min", o.views_min);
  set_if(doc, "generator", "views_max", o.views_max);
  set_if(doc, "generator", "image_size", o.image_size);
  const RunConfig cfg = parse_run_config(doc);
  const fs::path dir = resolve_output(o.out);
  if (fs::exists(dir) && !fs::is_empty(dir) && !fs::exists(dir / "manifest.json")) {
    throw DataError("refusing to write a dataset into non-empty " + dir.string());
  }
  if (fs::exists(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_directory() && fs::exists(e.path() / "annot.json")) fs::remove_all(e.path());
    }
  }
  echo_config(cfg, dir, out);
  out << "gen-data: " << o.num << " samples, seed " << o.seed << " -> " << dir.string() << '\n';

  const HandTemplate tpl = build_toy_template(cfg.hand_template);
  std::vector<MultiViewSample> samples;
  samples.reserve(static_cast<std::size_t>(o.num));
  for (int i = 0; i < o.num; ++i) {
    try {
      samples.push_back(generate_sample(o.seed, static_cast<std::uint64_t>(i), cfg.generator, tpl));
    } catch (const VisibilityError& e) {
      throw DataError(std::string("gen-data: ") + e.what());
    }
  }
  const json gen_doc = {{"config", cfg.generator}, {"hand_template", cfg.hand_template}};
  write_dataset(samples, dir, gen_doc, o.seed);

  json manifest = read_json_file(dir / "manifest.json");
  manifest["content_sha256"] = dataset_content_digest(dir, manifest["samples"]);
  {
    std::ofstream f(dir / "manifest.json");
    f << manifest.dump(1) << '\n';
    if (!f) throw DataError("cannot rewrite manifest in " + dir.string());
  }
  const std::string hash = sha256_hex(read_file_bytes(dir / "manifest.json"));
  out << "manifest sha256: " << hash << '\n';
  return hash;
}

// ---- train -----------------------------------------------------------------

struct TrainOptions {
  std::optional<std::string> config, data, out, resume;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
};

inline Dataset load_dataset_checked(const std::string& path, const RunConfig& cfg) {
  if (path.empty()) throw UsageError("no dataset given (flag or config)");
  Dataset ds = read_dataset(path);
  if (ds.samples.empty()) throw DataError("dataset " + path + " is empty");
  const std::string want = json(cfg.hand_template).dump();
  const std::string have = template_digest(ds.manifest);
  if (!have.empty() && have != want) throw DataError("dataset " + path + " was generated with a different hand template");
  return ds;
}

inline void check_image_size(const std::vector<MultiViewSample>& samples, int size) {
  for (const auto& s : samples) {
    for (const auto& img : s.views) {
      if (img.width != size || img.height != size) {
        throw DataError("sample " + s.annot.sample_id + ": images are " + std::to_string(img.width) + "x" +
                        std::to_string(img.height) + ", model expects " + std::to_string(size));
      }
    }
  }
}

// Path of the log written by a training run into `dir`.
inline fs::path train_log_path(const fs::path& dir) { return dir / kTrainLog; }

inline void cmd_train(const TrainOptions& o, std::ostream& out = std::cout) {
  json doc = config_document(o.config);
  if (o.data) doc["train_data"] = *o.data;
  if (o.out) doc["output_dir"] = *o.out;
  set_if(doc, "train", "total_steps", o.steps);
  set_if(doc, "train", "seed", o.seed);
  const RunConfig cfg = parse_run_config(doc);
  if (o.resume && !fs::exists(*o.resume)) throw DataError("checkpoint not found: " + *o.resume);

  const Dataset ds = load_dataset_checked(cfg.train_data, cfg);
  check_image_size(ds.samples, cfg.model.image_size);
  int most_views = 0;
  for (const auto& s : ds.samples) most_views = std::max(most_views, s.annot.views());
  if (most_views < cfg.train.views_max) {
    throw DataError("no training sample has " + std::to_string(cfg.train.views_max) + " views (train.views_max)");
  }

  const fs::path dir = resolve_output(cfg.output_dir);
  echo_config(cfg, dir, out);
  const HandTemplate tpl = build_toy_template(cfg.hand_template);
  Model<float> model(cfg.model, cfg.train.seed);
  Trainer<float> trainer(model, tpl, cfg.train, cfg.loss, cfg.generator);
  if (o.resume) trainer.load_checkpoint(*o.resume);
  out << "train: " << model.parameter_count() << " parameters, " << ds.samples.size() << " samples, steps "
      << trainer.step() << " -> " << cfg.train.total_steps << '\n';

  // The log holds one line per span; keep what precedes the resumed step.
  std::vector<std::string> kept;
  if (o.resume && fs::exists(train_log_path(dir))) {
    std::ifstream in(train_log_path(dir));
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && json::parse(line).at("step").get<int>() < trainer.step()) kept.push_back(line);
    }
  }
  std::ofstream log(train_log_path(dir), std::ios::trunc);
  for (const auto& l : kept) log << l << '\n';

  const auto t0 = std::chrono::steady_clock::now();
  while (trainer.step() < cfg.train.total_steps) {
    const SpanReport r = trainer.train_next(ds.samples);
    const int done = trainer.step();
    if (done % cfg.log_every == 0 || done == cfg.train.total_steps) {
      log << to_json(r).dump() << '\n' << std::flush;
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out << "step " << done << "/" << cfg.train.total_steps << " loss " << r.loss.total << " lr " << r.lr << " ("
          << std::lround(secs) << " s)\n"
          << std::flush;
    }
    if (cfg.train.checkpoint_every > 0 && done % cfg.train.checkpoint_every == 0) {
      fs::create_directories(dir / "checkpoints");
      char name[32];
      std::snprintf(name, sizeof name, "step_%06d.ckpt", done);
      trainer.save_checkpoint((dir / "checkpoints" / name).string());
    }
  }
  if (!log) throw DataError("cannot write " + train_log_path(dir).string());
  trainer.save_checkpoint((dir / kFinalCheckpoint).string());
  out << "wrote " << (dir / kFinalCheckpoint).string() << '\n';
}

// ---- model loading ---------------------------------------------------------

// Config next to the checkpoint when none is given explicitly.
inline RunConfig config_for_checkpoint(const std::optional<std::string>& config, const std::optional<std::string>& ckpt) {
  if (config) return parse_run_config(load_config_document(*config));
  if (ckpt) {
    const fs::path beside = fs::path(*ckpt).parent_path() / kConfigFile;
    if (fs::exists(beside)) return parse_run_config(load_config_document(beside));
  }
  return parse_run_config(json::object());
}

inline std::unique_ptr<Model<float>> load_model(const std::string& ckpt, const RunConfig& cfg) {
  if (!fs::exists(ckpt)) throw DataError("checkpoint not found: " + ckpt);
  const ArrayStore store = ArrayStore::load(ckpt);
  ModelConfig mc = cfg.model;
  if (store.meta.contains("model_config")) mc = store.meta.at("model_config").get<ModelConfig>();
  auto model = std::make_unique<Model<float>>(mc, cfg.train.seed);
  model->load_from(store);
  return model;
}

// Final-block predictions in dataset order, batched by view count.
inline std::vector<BlockPrediction> predict_all(const Model<float>& model, const std::vector<MultiViewSample>& samples,
                                                int batch) {
  std::vector<BlockPrediction> preds(samples.size());
  std::map<int, std::vector<std::size_t>> by_views;
  for (std::size_t i = 0; i < samples.size(); ++i) by_views[samples[i].annot.views()].push_back(i);
  for (const auto& [views, idx] : by_views) {
    if (views > model.config().max_views) {
      throw DataError("sample with " + std::to_string(views) + " views exceeds model max_views");
    }
    for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch)) {
      std::vector<MultiViewSample> chunk;
      for (std::size_t k = start; k < std::min(idx.size(), start + static_cast<std::size_t>(batch)); ++k) {
        chunk.push_back(samples[idx[k]]);
      }
      const auto out = model.predict(to_image_batch(chunk, model.config().image_size));
      for (std::size_t k = 0; k < out.size(); ++k) preds[idx[start + k]] = out[k].final_block();
    }
  }
  return preds;
}

// ---- eval ------------------------------------------------------------------

struct EvalOptions {
  std::optional<std::string> config, checkpoint, data, predictions, out, save_predictions;
  bool gt_oracle = false;
  std::optional<double> auc_threshold, auc_vertex_threshold;
};

inline json cmd_eval(const EvalOptions& o, std::ostream& out = std::cout) {
  const int modes = (o.checkpoint ? 1 : 0) + (o.predictions ? 1 : 0) + (o.gt_oracle ? 1 : 0);
  if (modes != 1) throw UsageError("eval needs exactly one of --checkpoint, --predictions, --gt-oracle");
  json doc = config_document(o.config);
  if (!o.config && o.checkpoint) doc = json(config_for_checkpoint(std::nullopt, o.checkpoint));
  if (o.data) doc["eval_data"] = *o.data;
  set_if(doc, "metrics", "auc_joint_threshold", o.auc_threshold);
  set_if(doc, "metrics", "auc_vertex_threshold", o.auc_vertex_threshold);
  const RunConfig cfg = parse_run_config(doc);
  const std::string mode = o.checkpoint ? "checkpoint" : o.predictions ? "predictions" : "gt_oracle";

  const Dataset ds = [&] {
    if (cfg.eval_data.empty()) throw UsageError("no evaluation dataset given (flag or config)");
    if (mode != "checkpoint") return read_dataset(cfg.eval_data, false);
    return load_dataset_checked(cfg.eval_data, cfg);
  }();
  const fs::path report_path = o.out ? resolve_output(*o.out) : resolve_output(cfg.output_dir) / "eval.json";
  echo_config(cfg, report_path.parent_path(), out, "eval_config.json");
  const HandTemplate tpl = build_toy_template(cfg.hand_template);

  std::vector<PointPrediction> preds(ds.samples.size());
  if (mode == "checkpoint") {
    const auto model = load_model(*o.checkpoint, cfg);
    check_image_size(ds.samples, model->config().image_size);
    const auto blocks = predict_all(*model, ds.samples, cfg.eval_batch);
    if (o.save_predictions) fs::create_directories(resolve_output(*o.save_predictions));
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      HandGeometry geo;
      try {
        geo = forward(blocks[i].hand, tpl, true);
      } catch (const std::invalid_argument& e) {
        throw DataError("sample " + ds.samples[i].annot.sample_id + ": " + e.what());
      }
      preds[i] = {geo.joints, geo.vertices};
      if (o.save_predictions) {
        std::ofstream f(resolve_output(*o.save_predictions) / (ds.samples[i].annot.sample_id + ".json"));
        f << prediction_to_json(ds.samples[i].annot.sample_id, blocks[i], geo).dump(1) << '\n';
      }
    }
  } else if (mode == "predictions") {
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      const std::string& id = ds.samples[i].annot.sample_id;
      const fs::path p = fs::path(*o.predictions) / (id + ".json");
      if (!fs::exists(p)) throw DataError("no prediction for sample " + id + " in " + *o.predictions);
      preds[i] = prediction_from_json(read_json_file(p), id);
    }
  } else {
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      const auto& a = ds.samples[i].annot;
      preds[i].joints = a.joints3d;
      if (a.flags.has_mano) preds[i].vertices = forward(a.hand, tpl, true).vertices;
    }
  }

  MetricAccumulator acc(cfg.metrics);
  int skipped = 0;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& a = ds.samples[i].annot;
    if (!a.flags.has_joints3d) {
      ++skipped;
      continue;
    }
    if (preds[i].joints.rows() != a.joints3d.rows()) {
      throw DataError("sample " + a.sample_id + ": prediction has " + std::to_string(preds[i].joints.rows()) +
                      " joints, ground truth has " + std::to_string(a.joints3d.rows()));
    }
    acc.add_joints(preds[i].joints, a.joints3d);
    if (a.flags.has_mano && preds[i].vertices.rows() > 0) {
      const Eigen::MatrixXd gt_v = forward(a.hand, tpl, true).vertices;
      if (preds[i].vertices.rows() != gt_v.rows()) {
        throw DataError("sample " + a.sample_id + ": prediction has " + std::to_string(preds[i].vertices.rows()) +
                        " vertices, ground truth has " + std::to_string(gt_v.rows()));
      }
      acc.add_vertices(preds[i].vertices, gt_v);
    }
  }
  if (skipped == static_cast<int>(ds.samples.size())) throw DataError("no sample carries 3D joint ground truth");

  const MetricReport rep = acc.report();
  json report;
  report["mode"] = mode;
  report["dataset"] = cfg.eval_data;
  report["auc_j_threshold_mm"] = rep.auc_j_threshold;
  report["auc_v_threshold_mm"] = rep.auc_v_threshold;
  report["skipped_without_3d"] = skipped;
  report["metrics"] = to_json(rep);
  fs::create_directories(report_path.parent_path());
  std::ofstream f(report_path);
  f << report.dump(2) << '\n';
  if (!f) throw DataError("cannot write " + report_path.string());
  out << report.dump(2) << '\n';
  return report;
}

// ---- infer -----------------------------------------------------------------

struct InferOptions {
  std::optional<std::string> config;
  std::string checkpoint, images, out;
};

inline void draw_marker(Image& img, const Vec2& px, const Rgb& c) {
  const int u = static_cast<int>(std::lround(px[0])), v = static_cast<int>(std::lround(px[1]));
  for (const auto& [dx, dy] : {std::pair{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
    const int x = u + dx, y = v + dy;
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) continue;
    for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = static_cast<std::uint8_t>(c[static_cast<std::size_t>(ch)]);
  }
}

inline json cmd_infer(const InferOptions& o, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  if (o.checkpoint.empty() || o.images.empty() || o.out.empty()) {
    throw UsageError("infer needs --checkpoint, --images and --out");
  }
  const RunConfig cfg = config_for_checkpoint(o.config, o.checkpoint);
  if (!fs::is_directory(o.images)) throw DataError("image directory not found: " + o.images);
  const fs::path dir = resolve_output(o.out);
  echo_config(cfg, dir, out);

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(o.images)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  MultiViewSample scene;
  std::vector<std::string> names;
  for (const auto& f : files) {
    if (!has_png_signature(f.string())) {
      err << "warning: skipping non-image file " << f.string() << '\n';
      continue;
    }
    scene.views.push_back(read_png(f.string()));
    names.push_back(f.filename().string());
  }
  if (scene.views.empty()) throw DataError("no images in " + o.images);

  const auto model = load_model(o.checkpoint, cfg);
  const int size = model->config().image_size;
  if (static_cast<int>(scene.views.size()) > model->config().max_views) {
    throw DataError(std::to_string(scene.views.size()) + " views exceed model max_views");
  }
  for (std::size_t s = 0; s < scene.views.size(); ++s) {
    if (scene.views[s].width != size || scene.views[s].height != size) {
      throw DataError(names[s] + ": expected a " + std::to_string(size) + "x" + std::to_string(size) + " image");
    }
  }
  const BlockPrediction pred = model->predict(to_image_batch({scene}, size))[0].final_block();
  const HandTemplate tpl = build_toy_template(cfg.hand_template);
  const HandGeometry geo = forward(pred.hand, tpl, true);

  json j = prediction_to_json(fs::path(o.images).filename().string(), pred, geo);
  j["image_size"] = size;
  j["views"] = names;
  json j2 = json::array();
  for (std::size_t s = 0; s < scene.views.size(); ++s) {
    const Projection p = project(geo.joints, fov_to_intrinsics(pred.cameras[s].f, size, size), pred.cameras[s]);
    j2.push_back(rows_to_json(p.pixels));
    Image overlay = scene.views[s];
    for (Eigen::Index k = 0; k < p.pixels.rows(); ++k) {
      if (p.depths[k] > 0 && p.pixels.row(k).allFinite()) draw_marker(overlay, p.pixels.row(k).transpose(), finger_color(static_cast<int>(k)));
    }
    write_png((dir / ("overlay_" + fs::path(names[s]).stem().string() + ".png")).string(), overlay);
  }
  j["joints2d"] = j2;
  std::ofstream f(dir / kPredictionFile);
  f << j.dump(1) << '\n';
  if (!f) throw DataError("cannot write " + (dir / kPredictionFile).string());
  out << "infer: " << names.size() << " views -> " << (dir / kPredictionFile).string() << '\n';
  return j;
}

// ---- exit codes ------------------------------------------------------------

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e)) return kExitUsage;
  return kExitData;
}

}  // namespace hggt::cli
