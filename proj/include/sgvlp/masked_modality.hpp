#pragma once

// Masked language modeling and masked object modeling. Words are masked by
// substituting the "unk" id; objects by substituting a shared learnable
// token in place, plus a positional embedding of the box.

#include "sgvlp/fusion.hpp"
#include "sgvlp/geometry.hpp"
#include "sgvlp/log.hpp"
#include "sgvlp/proposals.hpp"
#include "sgvlp/text_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace sgvlp {

inline constexpr double kWordMaskRatio = 0.2;
inline constexpr double kObjectMaskRatio = 0.75;
/// center(3) + eight corners(24)
inline constexpr int kPositionDim = 27;

/// round(ratio * n), raised to 1 when n >= 3 so a short sequence still
/// contributes a masked position.
inline int mask_count(int n, double ratio) {
  int k = static_cast<int>(std::round(ratio * static_cast<double>(n)));
  if (n >= 3) k = std::max(k, 1);
  return std::clamp(k, 0, n);
}

/// Sorted, unique positions drawn uniformly from [0, n).
inline std::vector<int> sample_positions(int n, int k, std::mt19937_64& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct MaskPlan {
  std::vector<std::vector<int>> word_positions;    // per sequence
  std::vector<std::vector<int>> object_positions;  // per scene
};

struct MaskedWords {
  TokenBatch tokens;
  /// Original id at masked positions, -1 elsewhere; one per row b * L + t.
  std::vector<int> labels;
  std::vector<std::vector<int>> positions;
};

inline MaskedWords mask_words(const TokenBatch& tb, std::mt19937_64& rng,
                              double ratio = kWordMaskRatio) {
  MaskedWords out;
  out.tokens = tb;
  out.labels.assign(tb.ids.size(), -1);
  for (int b = 0; b < tb.batch; ++b) {
    auto pos = sample_positions(tb.lengths[b], mask_count(tb.lengths[b], ratio), rng);
    for (int t : pos) {
      out.labels[tb.row(b, t)] = tb.at(b, t);
      out.tokens.at(b, t) = Vocabulary::kUnk;
    }
    out.positions.push_back(std::move(pos));
  }
  return out;
}

/// Per-scene masked object positions for `scenes` blocks of `m` rows,
/// flattened into one flag per stacked row.
inline std::vector<bool> mask_objects(int scenes, int m, std::mt19937_64& rng,
                                      std::vector<std::vector<int>>* positions = nullptr,
                                      double ratio = kObjectMaskRatio) {
  std::vector<bool> masked(static_cast<std::size_t>(scenes * m), false);
  for (int s = 0; s < scenes; ++s) {
    auto pos = sample_positions(m, mask_count(m, ratio), rng);
    for (int j : pos) masked[s * m + j] = true;
    if (positions) positions->push_back(std::move(pos));
  }
  return masked;
}

inline std::array<double, kPositionDim> position_attributes(const Aabb& box) {
  std::array<double, kPositionDim> a{};
  int k = 0;
  for (int i = 0; i < 3; ++i) a[k++] = box.center[i];
  for (const auto& c : box.corners()) {
    for (int i = 0; i < 3; ++i) a[k++] = c[i];
  }
  return a;
}

template <class T>
Matrix<T> position_matrix(const std::vector<Aabb>& boxes) {
  Matrix<T> m(static_cast<Eigen::Index>(boxes.size()), kPositionDim);
  for (std::size_t r = 0; r < boxes.size(); ++r) {
    const auto a = position_attributes(boxes[r]);
    for (int k = 0; k < kPositionDim; ++k) m(r, k) = static_cast<T>(a[k]);
  }
  return m;
}

/// Affine map of the 27 position attributes to the feature width.
template <class T>
class PositionalEmbedding {
 public:
  PositionalEmbedding() = default;
  PositionalEmbedding(ParamStore<T>& store, const std::string& name, int hidden)
      : linear_(store, name, ParamGroup::kHead, kPositionDim, hidden) {}

  Var<T> operator()(const std::vector<Aabb>& boxes) const {
    return linear_(Var<T>(position_matrix<T>(boxes)));
  }
  const Linear<T>& linear() const { return linear_; }

 private:
  Linear<T> linear_;
};

/// S_o: visible rows keep their features, masked rows take the shared mask
/// token; the positional embedding is added at every row.
template <class T>
Var<T> assemble_object_tokens(const Var<T>& objects, const std::vector<bool>& masked,
                              const Var<T>& mask_token, const Var<T>& positions) {
  const auto n = objects.rows();
  if (static_cast<Eigen::Index>(masked.size()) != n || positions.rows() != n) {
    throw std::invalid_argument("assemble_object_tokens: row count mismatch");
  }
  std::vector<ad::RowTerm<T>> terms;
  terms.reserve(masked.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    terms.push_back({static_cast<int>(i), masked[i] ? static_cast<int>(n) : static_cast<int>(i), T(1)});
  }
  Var<T> s = ad::combine_rows(ad::concat_rows<T>({objects, mask_token}), terms, n);
  return ad::add(s, positions);
}

/// Cross-attention from (masked) objects to words, then a three-layer head
/// over categories + background.
template <class T>
class MaskedObjectModel {
 public:
  MaskedObjectModel() = default;
  MaskedObjectModel(ParamStore<T>& store, const std::string& name, int hidden) {
    mask_token_ = store.add_uniform(name + ".mask_token", ParamGroup::kHead, 1, hidden, 0.1);
    position_ = PositionalEmbedding<T>(store, name + ".position", hidden);
    head_ = Mlp<T>(store, name + ".head", ParamGroup::kHead, {hidden, hidden, hidden, kNumCategories + 1});
  }

  /// Logits for all object rows; `blocks` map each scene's object rows to
  /// its word rows.
  Var<T> forward(const Var<T>& objects, const std::vector<bool>& masked,
                 const std::vector<Aabb>& boxes, const Var<T>& words,
                 const std::vector<ad::AttentionBlock>& blocks, const std::vector<bool>& word_valid,
                 const CrossAttentionStack<T>& fusion, std::vector<Matrix<T>>* weights = nullptr) const {
    if (words.rows() == 0) throw std::invalid_argument("mom_forward: empty word sequence");
    Var<T> s = assemble_object_tokens(objects, masked, mask_token_, position_(boxes));
    return head_(fusion(s, words, blocks, word_valid, weights));
  }

  const Var<T>& mask_token() const { return mask_token_; }
  const PositionalEmbedding<T>& position() const { return position_; }

 private:
  Var<T> mask_token_;
  PositionalEmbedding<T> position_;
  Mlp<T> head_;
};

/// Semantic targets at masked rows, -1 elsewhere.
inline std::vector<int> mom_targets(const std::vector<const Proposal*>& proposals,
                                    const std::vector<bool>& masked) {
  if (proposals.size() != masked.size()) throw std::invalid_argument("mom_targets: length mismatch");
  std::vector<int> t(masked.size(), -1);
  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (masked[i]) t[i] = proposals[i]->semantic_target;
  }
  return t;
}

/// Cross-entropy over supervised rows (target >= 0) only.
template <class T>
Var<T> masked_cross_entropy(const Var<T>& logits, const std::vector<int>& targets, const char* name) {
  const bool any = std::any_of(targets.begin(), targets.end(), [](int t) { return t >= 0; });
  if (!any) {
    warn(std::string(name) + ": empty mask, returning 0");
    return Var<T>::scalar(T(0));
  }
  return ad::cross_entropy(logits, targets);
}

template <class T>
Var<T> mom_loss(const Var<T>& logits, const std::vector<int>& targets) {
  return masked_cross_entropy(logits, targets, "mom_loss");
}

/// Cross-attention from masked word features to object features, then a
/// three-layer head over the vocabulary.
template <class T>
class MaskedLanguageModel {
 public:
  MaskedLanguageModel() = default;
  MaskedLanguageModel(ParamStore<T>& store, const std::string& name, int hidden, int vocab_size) {
    head_ = Mlp<T>(store, name + ".head", ParamGroup::kHead, {hidden, hidden, hidden, vocab_size});
  }

  Var<T> forward(const Var<T>& masked_words, const Var<T>& objects,
                 const std::vector<ad::AttentionBlock>& blocks, const CrossAttentionStack<T>& fusion,
                 std::vector<Matrix<T>>* weights = nullptr) const {
    return head_(fusion(masked_words, objects, blocks, {}, weights));
  }

 private:
  Mlp<T> head_;
};

template <class T>
Var<T> mlm_loss(const Var<T>& logits, const std::vector<int>& labels) {
  return masked_cross_entropy(logits, labels, "mlm_loss");
}

}  // namespace sgvlp
