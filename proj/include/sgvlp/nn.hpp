#pragma once

// Named parameter storage and the small set of layers the model is built
// from: affine maps, ReLU MLPs, layer normalization and a GRU cell.

#include "sgvlp/autograd.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgvlp {

using ad::Matrix;
using ad::Var;

/// Optimizer parameter groups; each gets its own learning rate.
enum class ParamGroup { kText, kProposal, kGraph, kHead };

inline const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::kText: return "text";
    case ParamGroup::kProposal: return "proposal";
    case ParamGroup::kGraph: return "graph";
    case ParamGroup::kHead: return "head";
  }
  return "?";
}

template <class T>
struct Parameter {
  std::string name;
  ParamGroup group;
  Var<T> var;
};

/// Owns every trainable tensor of a model under a unique dotted name, in
/// registration order. Initialization draws from the store's own engine so
/// a model is a pure function of its seed.
template <class T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  Var<T> add(const std::string& name, ParamGroup group, Matrix<T> init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    index_[name] = params_.size();
    params_.push_back({name, group, Var<T>(std::move(init), true)});
    return params_.back().var;
  }

  /// Uniform(-bound, bound) with bound = sqrt(6 / (fan_in + fan_out)).
  Var<T> add_xavier(const std::string& name, ParamGroup group, int rows, int cols) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    return add_uniform(name, group, rows, cols, bound);
  }

  Var<T> add_uniform(const std::string& name, ParamGroup group, int rows, int cols,
                     double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix<T> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng_));
    return add(name, group, std::move(m));
  }

  Var<T> add_constant(const std::string& name, ParamGroup group, int rows, int cols, T value) {
    return add(name, group, Matrix<T>::Constant(rows, cols, value));
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Var<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second].var;
  }

  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.var.node()->grad.resize(0, 0);
  }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.var.value().size());
    return n;
  }

 private:
  std::mt19937_64 rng_;
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, ParamGroup group, int in, int out)
      : in_(in), out_(out) {
    w_ = store.add_xavier(name + ".w", group, in, out);
    b_ = store.add_constant(name + ".b", group, 1, out, T(0));
  }

  Var<T> operator()(const Var<T>& x) const { return ad::linear(x, w_, b_); }

  int in() const { return in_; }
  int out() const { return out_; }
  const Var<T>& weight() const { return w_; }
  const Var<T>& bias() const { return b_; }

 private:
  int in_ = 0, out_ = 0;
  Var<T> w_, b_;
};

/// Affine layers with ReLU between them (none after the last).
template <class T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore<T>& store, const std::string& name, ParamGroup group, std::vector<int> dims) {
    if (dims.size() < 2) throw std::invalid_argument("Mlp needs at least two widths");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      layers_.emplace_back(store, name + "." + std::to_string(i), group, dims[i], dims[i + 1]);
    }
  }

  Var<T> operator()(Var<T> x) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i](x);
      if (i + 1 < layers_.size()) x = ad::relu(x);
    }
    return x;
  }

  const std::vector<Linear<T>>& layers() const { return layers_; }
  const Linear<T>& last() const { return layers_.back(); }

 private:
  std::vector<Linear<T>> layers_;
};

template <class T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, ParamGroup group, int width) {
    gain_ = store.add_constant(name + ".gain", group, 1, width, T(1));
    bias_ = store.add_constant(name + ".bias", group, 1, width, T(0));
  }
  Var<T> operator()(const Var<T>& x) const { return ad::layer_norm(x, gain_, bias_); }

 private:
  Var<T> gain_, bias_;
};

/// Gated recurrent unit. Gate order in the packed matrices is (r, z, n).
template <class T>
class GruCell {
 public:
  GruCell() = default;
  GruCell(ParamStore<T>& store, const std::string& name, ParamGroup group, int in, int hidden)
      : hidden_(hidden) {
    wx_ = store.add_xavier(name + ".wx", group, in, 3 * hidden);
    bx_ = store.add_constant(name + ".bx", group, 1, 3 * hidden, T(0));
    wh_ = store.add_xavier(name + ".wh", group, hidden, 3 * hidden);
    bh_ = store.add_constant(name + ".bh", group, 1, 3 * hidden, T(0));
  }

  /// Input projection for many rows at once; feed slices of it to step().
  Var<T> project_input(const Var<T>& x) const { return ad::linear(x, wx_, bx_); }

  Var<T> step(const Var<T>& gx, const Var<T>& h) const {
    const int H = hidden_;
    Var<T> gh = ad::linear(h, wh_, bh_);
    Var<T> r = ad::sigmoid(ad::add(ad::slice_cols(gx, 0, H), ad::slice_cols(gh, 0, H)));
    Var<T> z = ad::sigmoid(ad::add(ad::slice_cols(gx, H, H), ad::slice_cols(gh, H, H)));
    Var<T> n = ad::tanh(
        ad::add(ad::slice_cols(gx, 2 * H, H), ad::mul(r, ad::slice_cols(gh, 2 * H, H))));
    // h' = (1 - z) * n + z * h = n + z * (h - n)
    return ad::add(n, ad::mul(z, ad::sub(h, n)));
  }

  int hidden() const { return hidden_; }

 private:
  int hidden_ = 0;
  Var<T> wx_, bx_, wh_, bh_;
};

}  // namespace sgvlp
