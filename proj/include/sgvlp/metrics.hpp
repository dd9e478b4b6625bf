#pragma once

// Task metrics: Acc@kIoU for grounding, EM@K for question answering and
// IoU-gated caption scores (BLEU-4, ROUGE-L) for dense captioning.

#include "sgvlp/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgvlp {

/// Fraction of pairs with iou(pred, gt) >= k.
inline double acc_at_kiou(const std::vector<Aabb>& preds, const std::vector<Aabb>& gts, double k) {
  if (preds.size() != gts.size()) throw std::invalid_argument("acc_at_kiou: length mismatch");
  if (preds.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += iou_aabb(preds[i], gts[i]) >= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

/// Fraction of samples whose ground-truth answer is among the first k
/// entries of the ranked prediction list.
inline double em_at_k(const std::vector<std::vector<std::string>>& ranked,
                      const std::vector<std::string>& gt, int k) {
  if (ranked.size() != gt.size()) throw std::invalid_argument("em_at_k: length mismatch");
  if (k < 1) throw std::invalid_argument("em_at_k: k must be positive");
  if (gt.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto end = ranked[i].begin() + std::min<std::ptrdiff_t>(k, static_cast<std::ptrdiff_t>(ranked[i].size()));
    hits += std::find(ranked[i].begin(), end, gt[i]) != end ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(gt.size());
}

using Sentence = std::vector<std::string>;

/// Sentence-level BLEU-4: uniform weights over 1..4-gram clipped precision
/// and the standard brevity penalty; no smoothing, so any zero precision
/// yields 0.
inline double bleu4(const Sentence& candidate, const Sentence& reference) {
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    if (static_cast<int>(candidate.size()) < n) return 0.0;
    std::map<Sentence, int> ref_counts;
    for (std::size_t i = 0; i + n <= reference.size(); ++i) {
      ++ref_counts[Sentence(reference.begin() + i, reference.begin() + i + n)];
    }
    std::map<Sentence, int> cand_counts;
    for (std::size_t i = 0; i + n <= candidate.size(); ++i) {
      ++cand_counts[Sentence(candidate.begin() + i, candidate.begin() + i + n)];
    }
    int clipped = 0;
    for (const auto& [gram, c] : cand_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) clipped += std::min(c, it->second);
    }
    if (clipped == 0) return 0.0;
    const double total = static_cast<double>(candidate.size() - n + 1);
    log_sum += std::log(clipped / total);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / 4.0);
}

inline std::size_t lcs_length(const Sentence& a, const Sentence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// LCS-based F-measure with beta^2 = 1.2.
inline double rouge_l(const Sentence& candidate, const Sentence& reference, double beta2 = 1.2) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  return (1.0 + beta2) * p * r / (r + beta2 * p);
}

enum class CaptionMetric { kBleu4, kRougeL };

inline double caption_score(CaptionMetric m, const Sentence& cand, const Sentence& ref) {
  return m == CaptionMetric::kBleu4 ? bleu4(cand, ref) : rouge_l(cand, ref);
}

/// (1/N) sum_i m(c_hat_i, c_i) * [iou(b_hat_i, b_i) >= k]
inline double m_at_kiou(const std::vector<Sentence>& captions, const std::vector<Sentence>& references,
                        const std::vector<Aabb>& boxes, const std::vector<Aabb>& gt_boxes, double k,
                        CaptionMetric metric) {
  const auto n = captions.size();
  if (references.size() != n || boxes.size() != n || gt_boxes.size() != n) {
    throw std::invalid_argument("m_at_kiou: length mismatch");
  }
  if (n == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (iou_aabb(boxes[i], gt_boxes[i]) >= k) total += caption_score(metric, captions[i], references[i]);
  }
  return total / static_cast<double>(n);
}

}  // namespace sgvlp
