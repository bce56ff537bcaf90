// SPDX-License-Identifier: Apache-2.0
//
// Mixed single/multi-view accumulation schedule with B = floor(N_img / S),
// and the sampler that turns micro-steps into concrete batches.
#pragma once

#include "hggt/data_synth.hpp"
#include "hggt/network.hpp"
#include "hggt/sample.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hggt {

enum class Source { single, multi };

inline const char* to_string(Source s) { return s == Source::single ? "single" : "multi"; }

struct MicroStep {
  Source source = Source::single;
  int views = 1;
  int batch = 1;
};

struct BatchSchedule {
  int n_img = 0;
  int span = 4;
  std::vector<MicroStep> steps;  // span-major

  [[nodiscard]] int spans() const { return static_cast<int>(steps.size()) / span; }
  [[nodiscard]] std::vector<MicroStep> span_at(int i) const {
    return {steps.begin() + static_cast<std::ptrdiff_t>(i) * span, steps.begin() + static_cast<std::ptrdiff_t>(i + 1) * span};
  }
};

inline int batch_for_views(int n_img, int views) {
  if (views < 1) throw std::invalid_argument("view count must be >= 1");
  if (n_img < views) throw std::invalid_argument("N_img must be >= the view count");
  return n_img / views;
}

// Even positions within a span are single-view, odd positions multi-view with
// S ~ U{views_min..views_max}.
inline MicroStep draw_micro_step(int position, int n_img, int views_min, int views_max, Rng& rng) {
  MicroStep m;
  if (position % 2 == 0) {
    m.source = Source::single;
    m.views = 1;
  } else {
    m.source = Source::multi;
    m.views = std::uniform_int_distribution<int>(views_min, views_max)(rng);
  }
  m.batch = batch_for_views(n_img, m.views);
  return m;
}

inline BatchSchedule build_schedule(int n_img, int views_min, int views_max, int spans, std::uint64_t seed,
                                    int span = 4) {
  if (views_min < 2 || views_max < views_min) throw std::invalid_argument("multi-view range needs 2 <= min <= max");
  if (n_img < views_max) throw std::invalid_argument("N_img is smaller than the largest view count");
  if (span < 2) throw std::invalid_argument("accumulation span must hold at least one single and one multi step");
  if (spans < 0) throw std::invalid_argument("span count must be >= 0");
  BatchSchedule s;
  s.n_img = n_img;
  s.span = span;
  Rng rng = make_rng(seed, 0x5c4edull);
  for (int i = 0; i < spans * span; ++i) s.steps.push_back(draw_micro_step(i % span, n_img, views_min, views_max, rng));
  return s;
}

// Keeps view 0 and views-1 other views chosen at random, in increasing order.
inline std::vector<int> choose_views(int available, int views, Rng& rng) {
  if (views < 1 || views > available) throw std::invalid_argument("cannot choose " + std::to_string(views) + " views");
  std::vector<int> others(static_cast<std::size_t>(available - 1));
  std::iota(others.begin(), others.end(), 1);
  std::shuffle(others.begin(), others.end(), rng);
  others.resize(static_cast<std::size_t>(views - 1));
  std::sort(others.begin(), others.end());
  std::vector<int> keep{0};
  keep.insert(keep.end(), others.begin(), others.end());
  return keep;
}

// Draws B distinct samples that have at least S views and cuts them down to S
// views. Single-view copies may lose MANO / 3D supervision.
inline std::vector<MultiViewSample> draw_batch(const std::vector<MultiViewSample>& pool, const MicroStep& m,
                                               const GeneratorConfig& gen, Rng& rng) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].annot.views() >= m.views) eligible.push_back(i);
  }
  if (eligible.empty()) throw std::invalid_argument("no sample has " + std::to_string(m.views) + " views");
  std::shuffle(eligible.begin(), eligible.end(), rng);
  std::vector<MultiViewSample> out;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int b = 0; b < m.batch; ++b) {
    // Wraps around when the pool is smaller than the batch.
    const auto& src = pool[eligible[static_cast<std::size_t>(b) % eligible.size()]];
    MultiViewSample s = select_views(src, choose_views(src.annot.views(), m.views, rng));
    if (m.source == Source::single) {
      if (u(rng) < gen.single_drop_mano) s.annot.flags.has_mano = false;
      if (u(rng) < gen.single_drop_joints3d) s.annot.flags.has_joints3d = false;
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline ImageBatch to_image_batch(const std::vector<MultiViewSample>& samples, int image_size) {
  if (samples.empty()) throw std::invalid_argument("to_image_batch: empty batch");
  ImageBatch b;
  b.batch = static_cast<int>(samples.size());
  b.views = static_cast<int>(samples[0].views.size());
  b.size = image_size;
  b.pixels.resize(static_cast<std::size_t>(b.batch) * b.views * image_size * image_size * 3);
  std::size_t o = 0;
  for (const auto& s : samples) {
    if (static_cast<int>(s.views.size()) != b.views) throw std::invalid_argument("to_image_batch: mixed view counts");
    for (const auto& img : s.views) {
      if (img.width != image_size || img.height != image_size) throw std::invalid_argument("to_image_batch: image size mismatch");
      for (std::uint8_t v : img.rgb) b.pixels[o++] = static_cast<float>(v) / 255.0f;
    }
  }
  return b;
}

}  // namespace hggt
