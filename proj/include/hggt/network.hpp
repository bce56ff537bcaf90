// SPDX-License-Identifier: Apache-2.0
//
// Toy-scale multi-view hand/camera transformer.
//
//   images -> patch embedding + learned positions
//          -> per view [camera token, register tokens, patch tokens]
//          -> alternating frame / global self-attention blocks
//          -> [hand tokens; camera tokens] cross-attend to image tokens in
//             L stacked refinement blocks
//          -> after every block: hand head (61 values) and camera head
//             (9 values per view)
#pragma once

#include "hggt/array_store.hpp"
#include "hggt/autodiff.hpp"
#include "hggt/camera.hpp"
#include "hggt/hand_model.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <deque>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hggt {

struct ModelConfig {
  int embed_dim = 128;
  int aggregator_depth = 4;  // frame/global block pairs
  int refine_blocks = 4;
  int heads = 4;
  int mlp_ratio = 4;
  int patch_size = 14;
  int image_size = 112;  // square input, pixels
  int hand_tokens = 4;
  int register_tokens = 4;
  int max_views = 10;
  int head_hidden = 128;
  double init_std = 0.02;
  double init_depth = 0.5;          // meters, initial hand translation z
  double init_fov = 55.0 * std::numbers::pi / 180.0;

  [[nodiscard]] int patches_per_side() const { return image_size / patch_size; }
  [[nodiscard]] int patches_per_view() const { return patches_per_side() * patches_per_side(); }
  [[nodiscard]] int patch_dim() const { return patch_size * patch_size * 3; }
  [[nodiscard]] int tokens_per_view() const { return 1 + register_tokens + patches_per_view(); }

  void validate() const {
    if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0) throw std::invalid_argument("embed_dim must be a positive multiple of heads");
    if (patch_size <= 0 || image_size <= 0 || image_size % patch_size != 0) {
      throw std::invalid_argument("image_size must be divisible by patch_size");
    }
    if (refine_blocks < 1) throw std::invalid_argument("refine_blocks must be >= 1");
    if (hand_tokens < 1) throw std::invalid_argument("hand_tokens must be >= 1");
    if (aggregator_depth < 0 || register_tokens < 0 || mlp_ratio < 1 || head_hidden < 1) {
      throw std::invalid_argument("invalid model widths");
    }
    if (max_views < 1) throw std::invalid_argument("max_views must be >= 1");
    if (!(init_fov > 0 && init_fov < std::numbers::pi)) throw std::invalid_argument("init_fov outside (0, pi)");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, embed_dim, aggregator_depth, refine_blocks, heads,
                                                mlp_ratio, patch_size, image_size, hand_tokens, register_tokens,
                                                max_views, head_hidden, init_std, init_depth, init_fov)

// B samples with S views each, pixels in [0, 1], layout [b][s][y][x][c].
struct ImageBatch {
  int batch = 0;
  int views = 0;
  int size = 0;
  std::vector<float> pixels;

  [[nodiscard]] float at(int b, int s, int y, int x, int c) const {
    return pixels[((((static_cast<std::size_t>(b) * views + s) * size + y) * size + x) * 3) + c];
  }
};

namespace ad {

template <typename T>
struct CameraVars {
  Var<T> trans;  // 1 x 3
  Var<T> quat;   // 1 x 4, unit norm
  Var<T> fov;    // 1 x 2
};

template <typename T>
struct BlockOutput {
  HandParamVars<T> hand;
  std::vector<CameraVars<T>> cameras;
};

// Predictions for one sample, one entry per refinement block.
template <typename T>
struct SampleOutput {
  std::vector<BlockOutput<T>> per_block;
};

template <typename T>
struct TokenState {
  int batch = 0;
  int views = 0;
  Var<T> image_tokens;   // (B S P) x d, rows ordered [b][s][p]
  Var<T> camera_tokens;  // (B S) x d
  Var<T> hand_tokens;    // (B Nh) x d; invalid before refinement
};

template <typename T>
struct CameraHeadOutput {
  Var<T> trans;  // (B S) x 3
  Var<T> quat;   // (B S) x 4
  Var<T> fov;    // (B S) x 2
};

}  // namespace ad

// Plain per-block predictions.
struct BlockPrediction {
  HandParams hand;
  std::vector<CameraEncoding> cameras;
};

struct ModelPrediction {
  std::vector<BlockPrediction> per_block;
  [[nodiscard]] const BlockPrediction& final_block() const { return per_block.back(); }
};

template <typename T>
class Model {
 public:
  using Param = ad::Parameter<T>;
  using MatT = ad::Mat<T>;
  using VarT = ad::Var<T>;

  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    build(rng);
  }
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }
  [[nodiscard]] std::deque<Param>& parameters() { return params_; }
  [[nodiscard]] const std::deque<Param>& parameters() const { return params_; }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  // ---- forward stages -------------------------------------------------------

  [[nodiscard]] MatT patchify(const ImageBatch& images) const {
    check_images(images);
    const int ps = cfg_.patch_size, side = cfg_.patches_per_side();
    MatT out(static_cast<ad::Index>(images.batch) * images.views * cfg_.patches_per_view(), cfg_.patch_dim());
    ad::Index r = 0;
    for (int b = 0; b < images.batch; ++b) {
      for (int s = 0; s < images.views; ++s) {
        for (int py = 0; py < side; ++py) {
          for (int px = 0; px < side; ++px, ++r) {
            int c = 0;
            for (int y = 0; y < ps; ++y)
              for (int x = 0; x < ps; ++x)
                for (int ch = 0; ch < 3; ++ch) out(r, c++) = static_cast<T>(images.at(b, s, py * ps + y, px * ps + x, ch));
          }
        }
      }
    }
    return out;
  }

  ad::TokenState<T> embed_views(ad::Tape<T>& tape, const ImageBatch& images) const {
    const int b_count = images.batch, views = images.views;
    const int np = cfg_.patches_per_view(), nr = cfg_.register_tokens, ntok = cfg_.tokens_per_view();
    VarT x = ad::linear(tape.constant(patchify(images)), p(tape, patch_w_), p(tape, patch_b_));
    x = ad::add_tiled(x, p(tape, pos_));

    const ad::Index n_patch_rows = x.rows();
    const ad::Index ref_row = n_patch_rows, other_row = n_patch_rows + 1, reg_row = n_patch_rows + 2;
    std::vector<VarT> sources{x, p(tape, cam_ref_), p(tape, cam_other_)};
    if (nr > 0) sources.push_back(p(tape, registers_));
    const VarT pool = ad::concat_rows(std::span<const VarT>(sources));

    std::vector<ad::Index> index;
    index.reserve(static_cast<std::size_t>(b_count) * views * ntok);
    for (int b = 0; b < b_count; ++b) {
      for (int s = 0; s < views; ++s) {
        index.push_back(s == 0 ? ref_row : other_row);
        for (int r = 0; r < nr; ++r) index.push_back(reg_row + r);
        const ad::Index base = (static_cast<ad::Index>(b) * views + s) * np;
        for (int q = 0; q < np; ++q) index.push_back(base + q);
      }
    }
    VarT tokens = ad::gather_rows(pool, std::move(index));

    std::vector<ad::Segment> frame_segs, global_segs;
    for (int b = 0; b < b_count; ++b) {
      global_segs.push_back({static_cast<ad::Index>(b) * views * ntok, static_cast<ad::Index>(views) * ntok});
      for (int s = 0; s < views; ++s) {
        frame_segs.push_back({(static_cast<ad::Index>(b) * views + s) * ntok, ntok});
      }
    }
    for (const auto& pair : aggregator_) {
      tokens = self_block(tape, pair.frame, tokens, frame_segs);
      tokens = self_block(tape, pair.global, tokens, global_segs);
    }
    tokens = ad::layer_norm(tokens, p(tape, agg_norm_.gamma), p(tape, agg_norm_.beta));

    std::vector<ad::Index> cam_idx, img_idx;
    for (int b = 0; b < b_count; ++b) {
      for (int s = 0; s < views; ++s) {
        const ad::Index base = (static_cast<ad::Index>(b) * views + s) * ntok;
        cam_idx.push_back(base);
        for (int q = 0; q < np; ++q) img_idx.push_back(base + 1 + nr + q);
      }
    }
    ad::TokenState<T> st;
    st.batch = b_count;
    st.views = views;
    st.camera_tokens = ad::gather_rows(tokens, std::move(cam_idx));
    st.image_tokens = ad::gather_rows(tokens, std::move(img_idx));
    return st;
  }

  // Runs the refinement blocks; entry l holds the hand and camera tokens
  // after block l.
  std::vector<ad::TokenState<T>> refine(ad::Tape<T>& tape, const ad::TokenState<T>& st) const {
    const int b_count = st.batch, views = st.views, nh = cfg_.hand_tokens;
    const int nq = nh + views;
    const ad::Index kv_len = static_cast<ad::Index>(views) * cfg_.patches_per_view();
    if (st.image_tokens.rows() != static_cast<ad::Index>(b_count) * kv_len ||
        st.camera_tokens.rows() != static_cast<ad::Index>(b_count) * views) {
      throw std::invalid_argument("refine: token state shape mismatch");
    }
    // [hand tokens of b; camera tokens of b] per sample.
    const VarT pool = ad::concat_rows({p(tape, hand_init_), st.camera_tokens});
    std::vector<ad::Index> idx;
    for (int b = 0; b < b_count; ++b) {
      for (int h = 0; h < nh; ++h) idx.push_back(h);
      for (int s = 0; s < views; ++s) idx.push_back(nh + static_cast<ad::Index>(b) * views + s);
    }
    VarT q = ad::gather_rows(pool, std::move(idx));
    std::vector<ad::Segment> qsegs, ksegs;
    for (int b = 0; b < b_count; ++b) {
      qsegs.push_back({static_cast<ad::Index>(b) * nq, nq});
      ksegs.push_back({static_cast<ad::Index>(b) * kv_len, kv_len});
    }
    std::vector<ad::Index> hand_rows, cam_rows;
    for (int b = 0; b < b_count; ++b) {
      for (int h = 0; h < nh; ++h) hand_rows.push_back(static_cast<ad::Index>(b) * nq + h);
      for (int s = 0; s < views; ++s) cam_rows.push_back(static_cast<ad::Index>(b) * nq + nh + s);
    }
    std::vector<ad::TokenState<T>> out;
    for (const auto& blk : refine_) {
      q = cross_block(tape, blk, q, st.image_tokens, qsegs, ksegs);
      ad::TokenState<T> s = st;
      s.hand_tokens = ad::gather_rows(q, hand_rows);
      s.camera_tokens = ad::gather_rows(q, cam_rows);
      out.push_back(s);
    }
    return out;
  }

  // (B Nh) x d hand tokens -> B x 61 raw (theta | beta | trans).
  VarT decode_hand(ad::Tape<T>& tape, const VarT& hand_tokens) const {
    const ad::Index nh = cfg_.hand_tokens;
    if (hand_tokens.cols() != cfg_.embed_dim || hand_tokens.rows() % nh != 0) {
      throw std::invalid_argument("decode_hand: bad token shape");
    }
    VarT h = ad::layer_norm(hand_tokens, p(tape, hand_norm_.gamma), p(tape, hand_norm_.beta));
    h = ad::reshape(h, hand_tokens.rows() / nh, nh * cfg_.embed_dim);
    h = ad::gelu(ad::linear(h, p(tape, hand_head_.w1), p(tape, hand_head_.b1)));
    return ad::linear(h, p(tape, hand_head_.w2), p(tape, hand_head_.b2));
  }

  // (B S) x d camera tokens -> per-view translation, unit quaternion and
  // FoV; the first view of every sample is pinned to the identity pose.
  ad::CameraHeadOutput<T> decode_camera(ad::Tape<T>& tape, const VarT& camera_tokens, int views) const {
    if (views < 1 || camera_tokens.rows() % views != 0) throw std::invalid_argument("decode_camera: bad token shape");
    VarT h = ad::layer_norm(camera_tokens, p(tape, cam_norm_.gamma), p(tape, cam_norm_.beta));
    h = ad::gelu(ad::linear(h, p(tape, cam_head_.w1), p(tape, cam_head_.b1)));
    const VarT raw = ad::linear(h, p(tape, cam_head_.w2), p(tape, cam_head_.b2));
    const ad::Index n = raw.rows();
    MatT keep = MatT::Ones(n, 1);
    MatT ident = MatT::Zero(n, 4);
    for (ad::Index r = 0; r < n; r += views) {
      keep(r, 0) = T(0);
      ident(r, 0) = T(1);
    }
    const VarT keep3 = tape.constant(keep.replicate(1, 3));
    const VarT keep4 = tape.constant(keep.replicate(1, 4));
    ad::CameraHeadOutput<T> out;
    out.trans = ad::mul(ad::slice_cols(raw, 0, 3), keep3);
    const VarT qn = ad::normalize_rows(ad::slice_cols(raw, 3, 4));
    out.quat = ad::add(ad::mul(qn, keep4), tape.constant(std::move(ident)));
    out.fov = ad::scale(ad::sigmoid(ad::slice_cols(raw, 7, 2)), static_cast<T>(std::numbers::pi));
    return out;
  }

  std::vector<ad::SampleOutput<T>> forward(ad::Tape<T>& tape, const ImageBatch& images) const {
    const ad::TokenState<T> st = embed_views(tape, images);
    const auto blocks = refine(tape, st);
    std::vector<ad::SampleOutput<T>> out(static_cast<std::size_t>(images.batch));
    for (const auto& blk : blocks) {
      const VarT hand = decode_hand(tape, blk.hand_tokens);
      const auto cams = decode_camera(tape, blk.camera_tokens, images.views);
      for (int b = 0; b < images.batch; ++b) {
        ad::BlockOutput<T> bo;
        bo.hand.theta = ad::slice(hand, b, 1, 0, kNumPose);
        bo.hand.beta = ad::slice(hand, b, 1, kNumPose, kNumShape);
        bo.hand.trans = ad::slice(hand, b, 1, kNumPose + kNumShape, 3);
        for (int s = 0; s < images.views; ++s) {
          const ad::Index r = static_cast<ad::Index>(b) * images.views + s;
          bo.cameras.push_back({ad::slice_rows(cams.trans, r, 1), ad::slice_rows(cams.quat, r, 1),
                                ad::slice_rows(cams.fov, r, 1)});
        }
        out[static_cast<std::size_t>(b)].per_block.push_back(std::move(bo));
      }
    }
    return out;
  }

  // Inference without gradient recording.
  [[nodiscard]] std::vector<ModelPrediction> predict(const ImageBatch& images) const {
    ad::Tape<T> tape(false);
    const auto outs = forward(tape, images);
    std::vector<ModelPrediction> preds;
    for (const auto& o : outs) preds.push_back(to_prediction(o));
    return preds;
  }

  static ModelPrediction to_prediction(const ad::SampleOutput<T>& o) {
    ModelPrediction pred;
    for (const auto& blk : o.per_block) {
      BlockPrediction bp;
      bp.hand.theta = blk.hand.theta.value().row(0).transpose().template cast<double>();
      bp.hand.beta = blk.hand.beta.value().row(0).transpose().template cast<double>();
      bp.hand.trans = blk.hand.trans.value().row(0).transpose().template cast<double>();
      for (const auto& c : blk.cameras) {
        CameraEncoding e;
        e.T = c.trans.value().row(0).transpose().template cast<double>();
        e.q = c.quat.value().row(0).transpose().template cast<double>();
        e.f = c.fov.value().row(0).transpose().template cast<double>();
        bp.cameras.push_back(e);
      }
      pred.per_block.push_back(std::move(bp));
    }
    return pred;
  }

  // ---- serialization --------------------------------------------------------

  void save_to(ArrayStore& store, const std::string& prefix = "model/") const {
    store.meta["model_config"] = cfg_;
    for (const auto& prm : params_) store.put(prefix + prm.name, prm.value);
  }

  void load_from(const ArrayStore& store, const std::string& prefix = "model/") {
    if (store.meta.contains("model_config")) {
      const nlohmann::json want = cfg_;
      if (store.meta.at("model_config") != want) {
        throw ArrayStoreError("checkpoint model config does not match: " + store.meta.at("model_config").dump());
      }
    }
    for (auto& prm : params_) {
      prm.value = store.get<T>(prefix + prm.name, prm.value.rows(), prm.value.cols());
    }
  }

 private:
  struct LinearP {
    Param* w = nullptr;
    Param* b = nullptr;
  };
  struct NormP {
    Param* gamma = nullptr;
    Param* beta = nullptr;
  };
  struct SelfBlockP {
    NormP norm1, norm2;
    LinearP qkv, proj, fc1, fc2;
  };
  struct AggPair {
    SelfBlockP frame, global;
  };
  struct CrossBlockP {
    NormP norm_q, norm_kv, norm2;
    LinearP q, kv, proj, fc1, fc2;
  };
  struct HeadP {
    Param* w1 = nullptr;
    Param* b1 = nullptr;
    Param* w2 = nullptr;
    Param* b2 = nullptr;
  };

  static VarT p(ad::Tape<T>& tape, Param* prm) { return tape.param(*prm); }

  void check_images(const ImageBatch& im) const {
    if (im.batch < 1) throw std::invalid_argument("image batch is empty");
    if (im.views < 1 || im.views > cfg_.max_views) {
      throw std::invalid_argument("view count " + std::to_string(im.views) + " outside [1, max_views]");
    }
    if (im.size != cfg_.image_size) throw std::invalid_argument("image size does not match the model config");
    if (im.pixels.size() != static_cast<std::size_t>(im.batch) * im.views * im.size * im.size * 3) {
      throw std::invalid_argument("image buffer has the wrong length");
    }
  }

  VarT lin(ad::Tape<T>& tape, const LinearP& l, const VarT& x) const { return ad::linear(x, p(tape, l.w), p(tape, l.b)); }
  VarT norm(ad::Tape<T>& tape, const NormP& n, const VarT& x) const {
    return ad::layer_norm(x, p(tape, n.gamma), p(tape, n.beta));
  }

  VarT mlp(ad::Tape<T>& tape, const LinearP& fc1, const LinearP& fc2, const VarT& x) const {
    return lin(tape, fc2, ad::gelu(lin(tape, fc1, x)));
  }

  VarT self_block(ad::Tape<T>& tape, const SelfBlockP& blk, const VarT& x, const std::vector<ad::Segment>& segs) const {
    const ad::Index d = cfg_.embed_dim;
    const VarT qkv = lin(tape, blk.qkv, norm(tape, blk.norm1, x));
    const VarT a = ad::attention(ad::slice_cols(qkv, 0, d), ad::slice_cols(qkv, d, d), ad::slice_cols(qkv, 2 * d, d),
                                 cfg_.heads, segs, segs);
    const VarT x1 = ad::add(x, lin(tape, blk.proj, a));
    return ad::add(x1, mlp(tape, blk.fc1, blk.fc2, norm(tape, blk.norm2, x1)));
  }

  VarT cross_block(ad::Tape<T>& tape, const CrossBlockP& blk, const VarT& q, const VarT& kv_src,
                   const std::vector<ad::Segment>& qsegs, const std::vector<ad::Segment>& ksegs) const {
    const ad::Index d = cfg_.embed_dim;
    const VarT qq = lin(tape, blk.q, norm(tape, blk.norm_q, q));
    const VarT kv = lin(tape, blk.kv, norm(tape, blk.norm_kv, kv_src));
    const VarT a =
        ad::attention(qq, ad::slice_cols(kv, 0, d), ad::slice_cols(kv, d, d), cfg_.heads, qsegs, ksegs);
    const VarT q1 = ad::add(q, lin(tape, blk.proj, a));
    return ad::add(q1, mlp(tape, blk.fc1, blk.fc2, norm(tape, blk.norm2, q1)));
  }

  Param* add_param(const std::string& name, ad::Index rows, ad::Index cols) {
    params_.push_back(Param{name, MatT::Zero(rows, cols), MatT::Zero(rows, cols)});
    return &params_.back();
  }

  Param* add_normal(std::mt19937_64& rng, const std::string& name, ad::Index rows, ad::Index cols) {
    Param* prm = add_param(name, rows, cols);
    std::normal_distribution<double> nd(0.0, cfg_.init_std);
    for (ad::Index i = 0; i < prm->value.size(); ++i) prm->value.data()[i] = static_cast<T>(nd(rng));
    return prm;
  }

  LinearP add_linear(std::mt19937_64& rng, const std::string& name, ad::Index in, ad::Index out) {
    return {add_normal(rng, name + ".w", in, out), add_param(name + ".b", 1, out)};
  }

  NormP add_norm(const std::string& name) {
    NormP n{add_param(name + ".gamma", 1, cfg_.embed_dim), add_param(name + ".beta", 1, cfg_.embed_dim)};
    n.gamma->value.setOnes();
    return n;
  }

  SelfBlockP add_self_block(std::mt19937_64& rng, const std::string& name) {
    const ad::Index d = cfg_.embed_dim, h = static_cast<ad::Index>(cfg_.embed_dim) * cfg_.mlp_ratio;
    SelfBlockP b;
    b.norm1 = add_norm(name + ".norm1");
    b.qkv = add_linear(rng, name + ".attn.qkv", d, 3 * d);
    b.proj = add_linear(rng, name + ".attn.proj", d, d);
    b.norm2 = add_norm(name + ".norm2");
    b.fc1 = add_linear(rng, name + ".mlp.fc1", d, h);
    b.fc2 = add_linear(rng, name + ".mlp.fc2", h, d);
    return b;
  }

  CrossBlockP add_cross_block(std::mt19937_64& rng, const std::string& name) {
    const ad::Index d = cfg_.embed_dim, h = static_cast<ad::Index>(cfg_.embed_dim) * cfg_.mlp_ratio;
    CrossBlockP b;
    b.norm_q = add_norm(name + ".norm_q");
    b.norm_kv = add_norm(name + ".norm_kv");
    b.q = add_linear(rng, name + ".attn.q", d, d);
    b.kv = add_linear(rng, name + ".attn.kv", d, 2 * d);
    b.proj = add_linear(rng, name + ".attn.proj", d, d);
    b.norm2 = add_norm(name + ".norm2");
    b.fc1 = add_linear(rng, name + ".mlp.fc1", d, h);
    b.fc2 = add_linear(rng, name + ".mlp.fc2", h, d);
    return b;
  }

  void build(std::mt19937_64& rng) {
    const ad::Index d = cfg_.embed_dim;
    patch_w_ = add_normal(rng, "embed.patch.w", cfg_.patch_dim(), d);
    patch_b_ = add_param("embed.patch.b", 1, d);
    pos_ = add_normal(rng, "embed.pos", cfg_.patches_per_view(), d);
    cam_ref_ = add_normal(rng, "embed.camera_ref", 1, d);
    cam_other_ = add_normal(rng, "embed.camera_other", 1, d);
    if (cfg_.register_tokens > 0) registers_ = add_normal(rng, "embed.registers", cfg_.register_tokens, d);
    for (int i = 0; i < cfg_.aggregator_depth; ++i) {
      AggPair pair;
      pair.frame = add_self_block(rng, "agg." + std::to_string(i) + ".frame");
      pair.global = add_self_block(rng, "agg." + std::to_string(i) + ".global");
      aggregator_.push_back(pair);
    }
    agg_norm_ = add_norm("agg.norm");
    hand_init_ = add_normal(rng, "refine.hand_tokens", cfg_.hand_tokens, d);
    for (int i = 0; i < cfg_.refine_blocks; ++i) refine_.push_back(add_cross_block(rng, "refine." + std::to_string(i)));

    hand_norm_ = add_norm("head.hand.norm");
    hand_head_.w1 = add_normal(rng, "head.hand.fc1.w", static_cast<ad::Index>(cfg_.hand_tokens) * d, cfg_.head_hidden);
    hand_head_.b1 = add_param("head.hand.fc1.b", 1, cfg_.head_hidden);
    hand_head_.w2 = add_param("head.hand.fc2.w", cfg_.head_hidden, kNumHandOutputs);
    hand_head_.b2 = add_param("head.hand.fc2.b", 1, kNumHandOutputs);
    hand_head_.b2->value(0, kNumPose + kNumShape + 2) = static_cast<T>(cfg_.init_depth);

    cam_norm_ = add_norm("head.camera.norm");
    cam_head_.w1 = add_normal(rng, "head.camera.fc1.w", d, cfg_.head_hidden);
    cam_head_.b1 = add_param("head.camera.fc1.b", 1, cfg_.head_hidden);
    cam_head_.w2 = add_param("head.camera.fc2.w", cfg_.head_hidden, 9);
    cam_head_.b2 = add_param("head.camera.fc2.b", 1, 9);
    const double s = cfg_.init_fov / std::numbers::pi;
    const T fov_logit = static_cast<T>(std::log(s / (1.0 - s)));
    cam_head_.b2->value(0, 3) = T(1);
    cam_head_.b2->value(0, 7) = fov_logit;
    cam_head_.b2->value(0, 8) = fov_logit;
  }

  ModelConfig cfg_;
  std::deque<Param> params_;
  Param* patch_w_ = nullptr;
  Param* patch_b_ = nullptr;
  Param* pos_ = nullptr;
  Param* cam_ref_ = nullptr;
  Param* cam_other_ = nullptr;
  Param* registers_ = nullptr;
  std::vector<AggPair> aggregator_;
  NormP agg_norm_;
  Param* hand_init_ = nullptr;
  std::vector<CrossBlockP> refine_;
  NormP hand_norm_;
  HeadP hand_head_;
  NormP cam_norm_;
  HeadP cam_head_;
};

}  // namespace hggt
