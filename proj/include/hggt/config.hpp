// SPDX-License-Identifier: Apache-2.0
//
// Run configuration shared by the command-line tools: one JSON document with
// a section per module. Unknown keys are rejected at every level.
#pragma once

#include "hggt/data_synth.hpp"
#include "hggt/losses.hpp"
#include "hggt/metrics.hpp"
#include "hggt/network.hpp"
#include "hggt/trainer.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>

namespace hggt {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TemplateConfig, segment_lengths, seed, ring_vertices, tip_vertices)

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  GeneratorConfig generator;
  MetricConfig metrics;
  TemplateConfig hand_template;
  std::string train_data;
  std::string eval_data;
  std::string output_dir = "runs/default";
  int log_every = 1;   // spans per log line
  int eval_batch = 8;  // samples per forward pass during evaluation

  void validate() const {
    try {
      model.validate();
      loss.validate();
      train.validate();
      generator.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (train.views_max > model.max_views) throw ConfigError("train.views_max exceeds model.max_views");
    if (metrics.auc_joint_threshold <= 0 || metrics.auc_vertex_threshold <= 0 || metrics.auc_steps < 2) {
      throw ConfigError("bad metric thresholds");
    }
    if (log_every < 1 || eval_batch < 1) throw ConfigError("log_every and eval_batch must be >= 1");
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, model, loss, train, generator, metrics, hand_template,
                                                train_data, eval_data, output_dir, log_every, eval_batch)

namespace detail {

inline void reject_unknown(const nlohmann::json& given, const nlohmann::json& known, const std::string& where) {
  if (!given.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!known.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (known[key].is_object()) reject_unknown(value, known[key], path);
  }
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& doc) {
  detail::reject_unknown(doc, nlohmann::json(RunConfig{}), "");
  RunConfig c;
  try {
    c = doc.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config has a wrong value type: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json load_config_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse config file " + path.string() + ": " + e.what());
  }
}

// Relative output paths are placed under $HGGT_OUTPUT_ROOT when it is set.
inline std::filesystem::path resolve_output(const std::string& path) {
  const std::filesystem::path p(path);
  const char* root = std::getenv("HGGT_OUTPUT_ROOT");
  if (p.is_absolute() || root == nullptr || *root == '\0') return p;
  return std::filesystem::path(root) / p;
}

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

inline std::string read_file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace hggt
