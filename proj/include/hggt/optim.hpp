// SPDX-License-Identifier: Apache-2.0
//
// AdamW with decoupled weight decay, global-norm clipping and the
// warmup + cosine learning-rate schedule.
#pragma once

#include "hggt/array_store.hpp"
#include "hggt/autodiff.hpp"

#include <cmath>
#include <deque>
#include <numbers>
#include <stdexcept>
#include <string>

namespace hggt {

struct LrSchedule {
  int total_steps = 2000;
  double warmup_fraction = 0.05;
  double peak = 1e-4;
  double floor_factor = 0.01;  // floor = peak * floor_factor

  [[nodiscard]] double floor() const { return peak * floor_factor; }
};

// Linear from floor to peak over the warmup, then cosine back to floor.
inline double lr_at(int step, const LrSchedule& s) {
  if (s.total_steps < 1) throw std::invalid_argument("lr_at: total_steps must be >= 1");
  if (step < 0 || step > s.total_steps) throw std::out_of_range("lr_at: step outside [0, total_steps]");
  const double lo = s.floor(), hi = s.peak;
  const double warm = s.warmup_fraction * s.total_steps;
  if (step < warm) return lo + (hi - lo) * (step / warm);
  const double rest = s.total_steps - warm;
  const double progress = rest > 0 ? (step - warm) / rest : 1.0;
  return lo + (hi - lo) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
double global_grad_norm(const std::deque<ad::Parameter<T>>& params) {
  double acc = 0;
  for (const auto& p : params) {
    if (p.grad.size() == 0) continue;
    acc += p.grad.template cast<double>().squaredNorm();
  }
  return std::sqrt(acc);
}

// Rescales all gradients so their global L2 norm is at most max_norm. Returns
// the norm before clipping.
template <typename T>
double clip_grad_norm(std::deque<ad::Parameter<T>>& params, double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip norm must be positive");
  const double n = global_grad_norm(params);
  if (n > max_norm) {
    const T s = static_cast<T>(max_norm / n);
    for (auto& p : params) p.grad *= s;
  }
  return n;
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  [[nodiscard]] const AdamWConfig& config() const { return cfg_; }
  [[nodiscard]] long long steps_taken() const { return t_; }

  void step(std::deque<ad::Parameter<T>>& params, double lr) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.push_back(ad::Mat<T>::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(ad::Mat<T>::Zero(p.value.rows(), p.value.cols()));
      }
    }
    if (m_.size() != params.size()) throw std::invalid_argument("AdamW: parameter count changed");
    ++t_;
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
    const T eps = static_cast<T>(cfg_.eps);
    const T lr_t = static_cast<T>(lr);
    const T decay = static_cast<T>(1.0 - lr * cfg_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
      auto& m = m_[i];
      auto& v = v_[i];
      m = b1 * m + (T(1) - b1) * p.grad;
      v = b2 * v + (T(1) - b2) * p.grad.cwiseProduct(p.grad);
      p.value *= decay;
      p.value.array() -= lr_t * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
  }

  void save_to(ArrayStore& store, const std::deque<ad::Parameter<T>>& params, const std::string& prefix = "adam/") const {
    store.meta["adam_steps"] = t_;
    for (std::size_t i = 0; i < m_.size(); ++i) {
      store.put(prefix + "m/" + params[i].name, m_[i]);
      store.put(prefix + "v/" + params[i].name, v_[i]);
    }
  }

  void load_from(const ArrayStore& store, const std::deque<ad::Parameter<T>>& params, const std::string& prefix = "adam/") {
    t_ = store.meta.value("adam_steps", 0LL);
    m_.clear();
    v_.clear();
    if (t_ == 0) return;
    for (const auto& p : params) {
      m_.push_back(store.get<T>(prefix + "m/" + p.name, p.value.rows(), p.value.cols()));
      v_.push_back(store.get<T>(prefix + "v/" + p.name, p.value.rows(), p.value.cols()));
    }
  }

 private:
  AdamWConfig cfg_;
  long long t_ = 0;
  std::deque<ad::Mat<T>> m_, v_;
};

}  // namespace hggt
