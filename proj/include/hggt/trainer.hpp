// SPDX-License-Identifier: Apache-2.0
//
// Training loop: alternating single/multi-view micro-steps accumulated into
// one AdamW update per span, with checkpoints that carry the optimizer
// moments and the sampler state.
#pragma once

#include "hggt/array_store.hpp"
#include "hggt/losses.hpp"
#include "hggt/network.hpp"
#include "hggt/optim.hpp"
#include "hggt/schedule.hpp"

#include <json.hpp>

#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hggt {

struct TrainConfig {
  int total_steps = 2000;  // weight updates
  double warmup_fraction = 0.05;
  double lr_peak = 1e-4;
  double lr_floor_factor = 0.01;
  double weight_decay = 0.05;
  double clip_norm = 1.0;
  int accumulation = 4;
  int n_img = 16;
  int views_min = 2;  // multi-view micro-steps
  int views_max = 10;
  std::uint64_t seed = 0;
  int checkpoint_every = 500;  // 0 disables periodic checkpoints

  void validate() const {
    if (total_steps < 1) throw std::invalid_argument("total_steps must be >= 1");
    if (!(warmup_fraction > 0 && warmup_fraction < 1)) throw std::invalid_argument("warmup_fraction must lie in (0, 1)");
    if (!(lr_peak > 0) || !(lr_floor_factor >= 0 && lr_floor_factor <= 1)) throw std::invalid_argument("bad learning rate");
    if (!(weight_decay >= 0)) throw std::invalid_argument("weight_decay must be >= 0");
    if (!(clip_norm > 0)) throw std::invalid_argument("clip_norm must be positive");
    if (accumulation < 2) throw std::invalid_argument("accumulation must be >= 2");
    if (views_min < 2 || views_max < views_min) throw std::invalid_argument("multi-view range needs 2 <= min <= max");
    if (n_img < views_max) throw std::invalid_argument("n_img must be >= views_max");
    if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
  }

  [[nodiscard]] LrSchedule lr_schedule() const { return {total_steps, warmup_fraction, lr_peak, lr_floor_factor}; }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, total_steps, warmup_fraction, lr_peak, lr_floor_factor,
                                                weight_decay, clip_norm, accumulation, n_img, views_min, views_max,
                                                seed, checkpoint_every)

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SpanReport {
  int step = 0;  // index of the update this span produced
  double lr = 0;
  double grad_norm = 0;  // before clipping
  LossReport loss;       // mean over micro-steps
  std::optional<LossReport> single, multi;  // means over micro-steps of each source
  std::vector<MicroStep> micro;
};

inline nlohmann::json to_json(const SpanReport& r) {
  nlohmann::json j{{"step", r.step}, {"lr", r.lr}, {"grad_norm", r.grad_norm}, {"loss", to_json(r.loss)}};
  if (r.single) j["single"] = to_json(*r.single);
  if (r.multi) j["multi"] = to_json(*r.multi);
  nlohmann::json m = nlohmann::json::array();
  for (const auto& s : r.micro) m.push_back({{"source", to_string(s.source)}, {"views", s.views}, {"batch", s.batch}});
  j["micro_steps"] = m;
  return j;
}

template <typename T>
class Trainer {
 public:
  Trainer(Model<T>& model, const HandTemplate& tpl, TrainConfig cfg, LossConfig loss, GeneratorConfig gen = {})
      : model_(model),
        tpl_(tpl),
        cfg_(cfg),
        loss_(loss),
        gen_(gen),
        opt_(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay}),
        rng_(make_rng(cfg.seed, 0xba7c4ull)) {
    cfg_.validate();
    loss_.validate();
    schedule_ = build_schedule(cfg_.n_img, cfg_.views_min, cfg_.views_max, cfg_.total_steps, cfg_.seed, cfg_.accumulation);
  }

  [[nodiscard]] int step() const { return step_; }
  [[nodiscard]] const TrainConfig& config() const { return cfg_; }
  [[nodiscard]] const BatchSchedule& schedule() const { return schedule_; }
  [[nodiscard]] AdamW<T>& optimizer() { return opt_; }
  [[nodiscard]] Rng& rng() { return rng_; }

  // Mean loss over the batch, backpropagated with weight `scale` into the
  // parameter gradients.
  LossReport accumulate(const std::vector<MultiViewSample>& batch, double scale) {
    ad::Tape<T> tape;
    const auto outs = model_.forward(tape, to_image_batch(batch, model_.config().image_size));
    std::vector<ad::Var<T>> totals;
    LossReport rep;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto tl = ad::total_loss(outs[b], batch[b].annot, loss_, tpl_, model_.config().refine_blocks);
      totals.push_back(tl.total);
      rep += tl.report();
    }
    rep.scale(1.0 / static_cast<double>(batch.size()));
    rep.single_view_samples = rep.multi_view_samples = 0;
    (batch[0].annot.views() > 1 ? rep.multi_view_samples : rep.single_view_samples) = static_cast<int>(batch.size());
    const ad::Var<T> total = ad::scale(ad::add_n(std::span<const ad::Var<T>>(totals)),
                                       static_cast<T>(scale / static_cast<double>(batch.size())));
    if (!std::isfinite(static_cast<double>(total.item()))) throw TrainError("non-finite loss");
    tape.backward(total);
    return rep;
  }

  // One weight update from explicit micro-batches. Gradients are averaged over
  // the micro-batches, clipped, and applied with lr_at(step).
  SpanReport train_span(const std::vector<std::vector<MultiViewSample>>& micro) {
    if (micro.empty()) throw std::invalid_argument("train_span: no micro-batches");
    if (step_ >= cfg_.total_steps) throw std::out_of_range("train_span: schedule exhausted");
    SpanReport r;
    r.step = step_;
    r.lr = lr_at(step_, cfg_.lr_schedule());
    model_.zero_grad();
    LossReport single, multi;
    int n_single = 0, n_multi = 0;
    const double w = 1.0 / static_cast<double>(micro.size());
    for (std::size_t k = 0; k < micro.size(); ++k) {
      LossReport rep;
      try {
        rep = accumulate(micro[k], w);
      } catch (const std::exception& e) {
        model_.zero_grad();
        throw TrainError("step " + std::to_string(step_) + ", micro-step " + std::to_string(k) + ": " + e.what());
      }
      const bool is_multi = micro[k][0].annot.views() > 1;
      (is_multi ? multi : single) += rep;
      (is_multi ? n_multi : n_single) += 1;
      r.loss += rep;
      r.micro.push_back({is_multi ? Source::multi : Source::single, micro[k][0].annot.views(),
                         static_cast<int>(micro[k].size())});
    }
    r.loss.scale(w);
    r.loss.single_view_samples = single.single_view_samples;
    r.loss.multi_view_samples = multi.multi_view_samples;
    if (n_single) {
      single.scale(1.0 / n_single);
      r.single = single;
    }
    if (n_multi) {
      multi.scale(1.0 / n_multi);
      r.multi = multi;
    }
    r.grad_norm = clip_grad_norm(model_.parameters(), cfg_.clip_norm);
    if (!std::isfinite(r.grad_norm)) {
      model_.zero_grad();
      throw TrainError("step " + std::to_string(step_) + ": non-finite gradient norm");
    }
    opt_.step(model_.parameters(), r.lr);
    ++step_;
    return r;
  }

  // Next span from the schedule, with batches drawn from the pool.
  SpanReport train_next(const std::vector<MultiViewSample>& pool) {
    std::vector<std::vector<MultiViewSample>> micro;
    for (const auto& m : schedule_.span_at(step_)) {
      MicroStep eff = m;
      eff.batch = batch_for_views(cfg_.n_img, eff.views);
      micro.push_back(draw_batch(pool, eff, gen_, rng_));
    }
    return train_span(micro);
  }

  void save_checkpoint(const std::string& path) const {
    ArrayStore store;
    store.meta["kind"] = "checkpoint";
    store.meta["step"] = step_;
    store.meta["train_config"] = cfg_;
    store.meta["loss_config"] = loss_;
    std::ostringstream rs;
    rs << rng_;
    store.meta["rng"] = rs.str();
    model_.save_to(store);
    opt_.save_to(store, model_.parameters());
    store.save(path);
  }

  // Restores weights, optimizer moments, step and sampler state. The model
  // config must match; the training config may only differ in total_steps
  // and checkpoint_every.
  void load_checkpoint(const std::string& path) {
    const ArrayStore store = ArrayStore::load(path);
    if (store.meta.value("kind", std::string()) != "checkpoint") throw ArrayStoreError(path + " is not a checkpoint");
    model_.load_from(store);
    TrainConfig saved = store.meta.at("train_config").get<TrainConfig>();
    saved.total_steps = cfg_.total_steps;
    saved.checkpoint_every = cfg_.checkpoint_every;
    if (nlohmann::json(saved) != nlohmann::json(cfg_)) {
      throw ArrayStoreError("checkpoint training config does not match: " + store.meta.at("train_config").dump());
    }
    opt_.load_from(store, model_.parameters());
    step_ = store.meta.at("step").get<int>();
    std::istringstream rs(store.meta.at("rng").get<std::string>());
    rs >> rng_;
    if (!rs) throw ArrayStoreError("checkpoint has a corrupt sampler state");
  }

 private:
  Model<T>& model_;
  const HandTemplate& tpl_;
  TrainConfig cfg_;
  LossConfig loss_;
  GeneratorConfig gen_;
  AdamW<T> opt_;
  Rng rng_;
  BatchSchedule schedule_;
  int step_ = 0;
};

}  // namespace hggt
