#pragma once

// AdamW with per-group learning rates and global gradient-norm clipping.

#include "sgvlp/nn.hpp"

#include <cmath>
#include <map>
#include <vector>

namespace sgvlp {

struct AdamWConfig {
  std::map<ParamGroup, double> lr{{ParamGroup::kText, 5e-4},
                                   {ParamGroup::kProposal, 2e-3},
                                   {ParamGroup::kGraph, 5e-4},
                                   {ParamGroup::kHead, 5e-4}};
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 5.0;  // <= 0 disables clipping
};

/// Whether decoupled weight decay applies: matrices yes, biases and
/// normalization parameters no.
inline bool decays(const std::string& name) {
  auto ends_with = [&](const char* s) {
    const std::string suffix(s);
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return !(ends_with(".b") || ends_with(".bx") || ends_with(".bh") || ends_with(".bias") || ends_with(".gain"));
}

template <class T>
class AdamW {
 public:
  AdamW(ParamStore<T>& store, AdamWConfig cfg) : store_(store), cfg_(std::move(cfg)) {
    for (const auto& p : store_.params()) {
      m_.push_back(Matrix<T>::Zero(p.var.rows(), p.var.cols()));
      v_.push_back(Matrix<T>::Zero(p.var.rows(), p.var.cols()));
    }
  }

  /// Global L2 norm over all present gradients.
  double grad_norm() const {
    double sq = 0.0;
    for (const auto& p : store_.params()) {
      if (p.var.node()->has_grad()) sq += static_cast<double>(p.var.grad().squaredNorm());
    }
    return std::sqrt(sq);
  }

  /// One update. Parameters that received no gradient are left untouched.
  /// Returns the pre-clip gradient norm.
  double step(double lr_scale = 1.0) {
    const double norm = grad_norm();
    const double clip = (cfg_.grad_clip > 0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    const auto& params = store_.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& node = *params[i].var.node();
      if (!node.has_grad()) continue;
      const T lr = static_cast<T>(cfg_.lr.at(params[i].group) * lr_scale);
      const Matrix<T> g = node.grad * static_cast<T>(clip);
      m_[i] = static_cast<T>(cfg_.beta1) * m_[i] + static_cast<T>(1 - cfg_.beta1) * g;
      v_[i] = static_cast<T>(cfg_.beta2) * v_[i] + static_cast<T>(1 - cfg_.beta2) * g.cwiseAbs2();
      if (decays(params[i].name)) node.value -= (lr * static_cast<T>(cfg_.weight_decay)) * node.value;
      const auto mhat = m_[i].array() / static_cast<T>(bc1);
      const auto vhat = v_[i].array() / static_cast<T>(bc2);
      node.value.array() -= lr * mhat / (vhat.sqrt() + static_cast<T>(cfg_.eps));
    }
    return norm;
  }

  int steps() const { return t_; }

 private:
  ParamStore<T>& store_;
  AdamWConfig cfg_;
  std::vector<Matrix<T>> m_, v_;
  int t_ = 0;
};

}  // namespace sgvlp
