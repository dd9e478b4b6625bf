#pragma once

// Stack of pre-norm multi-head cross-attention layers. Queries from one
// modality attend to keys/values from the other; each layer adds the
// attention output and a feed-forward output residually.

#include "sgvlp/nn.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace sgvlp {

struct FusionConfig {
  int hidden = 256;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_mult = 2;
};

/// Query rows [q0, q0 + nq) attend to key rows [k0, k0 + nk), for each item
/// of a stacked batch of uniform sizes.
inline std::vector<ad::AttentionBlock> uniform_blocks(int items, int nq, int nk) {
  std::vector<ad::AttentionBlock> blocks;
  blocks.reserve(static_cast<std::size_t>(items));
  for (int b = 0; b < items; ++b) blocks.push_back({b * nq, (b + 1) * nq, b * nk, (b + 1) * nk});
  return blocks;
}

/// Key-valid flags for stacked padded sequences.
inline std::vector<bool> length_mask(const std::vector<int>& lengths, int max_len) {
  std::vector<bool> valid(lengths.size() * static_cast<std::size_t>(max_len), false);
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    for (int t = 0; t < lengths[b]; ++t) valid[b * max_len + t] = true;
  }
  return valid;
}

template <class T>
class CrossAttentionLayer {
 public:
  CrossAttentionLayer() = default;
  CrossAttentionLayer(ParamStore<T>& store, const std::string& name, const FusionConfig& cfg)
      : cfg_(cfg) {
    if (cfg.n_heads < 1 || cfg.hidden % cfg.n_heads != 0) {
      throw std::invalid_argument("fusion: hidden must be divisible by n_heads");
    }
    const auto g = ParamGroup::kHead;
    ln_q_ = LayerNorm<T>(store, name + ".ln_q", g, cfg.hidden);
    ln_kv_ = LayerNorm<T>(store, name + ".ln_kv", g, cfg.hidden);
    ln_ffn_ = LayerNorm<T>(store, name + ".ln_ffn", g, cfg.hidden);
    wq_ = Linear<T>(store, name + ".wq", g, cfg.hidden, cfg.hidden);
    wk_ = Linear<T>(store, name + ".wk", g, cfg.hidden, cfg.hidden);
    wv_ = Linear<T>(store, name + ".wv", g, cfg.hidden, cfg.hidden);
    wo_ = Linear<T>(store, name + ".wo", g, cfg.hidden, cfg.hidden);
    ffn_ = Mlp<T>(store, name + ".ffn", g, {cfg.hidden, cfg.ffn_mult * cfg.hidden, cfg.hidden});
  }

  /// Concatenated per-head attention outputs, before the output projection.
  Var<T> attend(const Var<T>& x, const Var<T>& y, const std::vector<ad::AttentionBlock>& blocks,
                const std::vector<bool>& key_valid, std::vector<Matrix<T>>* weights) const {
    Var<T> q = wq_(ln_q_(x));
    Var<T> ny = ln_kv_(y);
    Var<T> k = wk_(ny);
    Var<T> v = wv_(ny);
    const int d = cfg_.hidden / cfg_.n_heads;
    std::vector<Var<T>> heads;
    heads.reserve(static_cast<std::size_t>(cfg_.n_heads));
    for (int h = 0; h < cfg_.n_heads; ++h) {
      heads.push_back(ad::blocked_attention(ad::slice_cols(q, h * d, d), ad::slice_cols(k, h * d, d),
                                            ad::slice_cols(v, h * d, d), blocks, key_valid, weights));
    }
    return cfg_.n_heads == 1 ? heads[0] : ad::concat_cols(heads);
  }

  Var<T> operator()(const Var<T>& x, const Var<T>& y, const std::vector<ad::AttentionBlock>& blocks,
                    const std::vector<bool>& key_valid, std::vector<Matrix<T>>* weights) const {
    Var<T> h = ad::add(x, wo_(attend(x, y, blocks, key_valid, weights)));
    return ad::add(h, ffn_(ln_ffn_(h)));
  }

  const Mlp<T>& ffn() const { return ffn_; }

 private:
  FusionConfig cfg_;
  LayerNorm<T> ln_q_, ln_kv_, ln_ffn_;
  Linear<T> wq_, wk_, wv_, wo_;
  Mlp<T> ffn_;
};

template <class T>
class CrossAttentionStack {
 public:
  CrossAttentionStack() = default;
  CrossAttentionStack(ParamStore<T>& store, const std::string& name, const FusionConfig& cfg)
      : cfg_(cfg) {
    if (cfg.n_layers < 1) throw std::invalid_argument("fusion: need at least one layer");
    for (int l = 0; l < cfg.n_layers; ++l) {
      layers_.emplace_back(store, name + ".layer" + std::to_string(l), cfg);
    }
  }

  /// `queries` is T x C, `keys_values` S x C. Each block lets a query range
  /// attend to a key range; `key_valid` drops padding keys. Attention
  /// weights, if requested, are appended in (layer, head, block) order.
  Var<T> operator()(const Var<T>& queries, const Var<T>& keys_values,
                    const std::vector<ad::AttentionBlock>& blocks,
                    const std::vector<bool>& key_valid = {},
                    std::vector<Matrix<T>>* weights = nullptr) const {
    if (queries.cols() != cfg_.hidden || keys_values.cols() != cfg_.hidden) {
      throw std::invalid_argument("fuse: feature width mismatch");
    }
    Var<T> x = queries;
    for (const auto& layer : layers_) x = layer(x, keys_values, blocks, key_valid, weights);
    return x;
  }

  const std::vector<CrossAttentionLayer<T>>& layers() const { return layers_; }
  const FusionConfig& config() const { return cfg_; }

 private:
  FusionConfig cfg_;
  std::vector<CrossAttentionLayer<T>> layers_;
};

}  // namespace sgvlp
