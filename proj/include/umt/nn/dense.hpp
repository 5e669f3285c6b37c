#pragma once

#include "umt/types.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace umt::nn {

/// A mutable view of one parameter (or gradient) tensor.
template <typename Scalar>
using Block = Eigen::Map<Mat<Scalar>>;

/// Affine map y = W x + b applied column-wise to a batch (one sample per column).
template <typename Scalar>
struct DenseLayer {
  using scalar_type = Scalar;

  Mat<Scalar> weight;  // out x in
  Vec<Scalar> bias;    // out

  DenseLayer() = default;
  DenseLayer(Index in, Index out) : weight(Mat<Scalar>::Zero(out, in)), bias(Vec<Scalar>::Zero(out)) {}

  Index in_dim() const { return weight.cols(); }
  Index out_dim() const { return weight.rows(); }

  Mat<Scalar> apply(const Mat<Scalar>& x) const {
    if (x.rows() != in_dim()) {
      throw ShapeError("dense layer expects input dim " + std::to_string(in_dim()) + ", got " +
                       std::to_string(x.rows()));
    }
    Mat<Scalar> out = weight * x;
    out.colwise() += bias;
    return out;
  }

  void set_zero() {
    weight.setZero();
    bias.setZero();
  }

  bool all_finite() const { return weight.allFinite() && bias.allFinite(); }
};

/// Zero-mean Gaussian init with std sqrt(2 / fan_in); biases zero.
template <typename Scalar>
DenseLayer<Scalar> he_layer(Index in, Index out, Rng& rng) {
  DenseLayer<Scalar> layer(in, out);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in)));
  for (Index j = 0; j < layer.weight.cols(); ++j) {
    for (Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = static_cast<Scalar>(normal(rng));
  }
  return layer;
}

// ReLU with subgradient 0 at 0.
template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
  return x.cwiseMax(typename Derived::Scalar(0));
}

template <typename Derived>
auto relu_mask(const Eigen::MatrixBase<Derived>& pre) {
  using Scalar = typename Derived::Scalar;
  return pre.unaryExpr([](Scalar v) { return v > Scalar(0) ? Scalar(1) : Scalar(0); });
}

/// Feed-forward encoder: ReLU after every layer except the last, which is linear.
template <typename Scalar>
class Encoder {
 public:
  using scalar_type = Scalar;

  /// Per-layer activations kept for the backward pass.
  struct Cache {
    std::vector<Mat<Scalar>> inputs;  // input to layer i
    std::vector<Mat<Scalar>> pre;     // pre-activation of layer i
  };

  Encoder() = default;

  /// Zero-initialised encoder with layer widths dims[0] -> dims[1] -> ... -> dims.back().
  explicit Encoder(std::span<const Index> dims) {
    if (dims.size() < 2) throw ShapeError("encoder needs at least an input and an output dimension");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) layers_.emplace_back(dims[i], dims[i + 1]);
  }

  explicit Encoder(std::vector<DenseLayer<Scalar>> layers) : layers_(std::move(layers)) {
    for (std::size_t i = 1; i < layers_.size(); ++i) {
      if (layers_[i].in_dim() != layers_[i - 1].out_dim()) {
        throw ShapeError("encoder layer " + std::to_string(i) + " input dim " +
                         std::to_string(layers_[i].in_dim()) + " does not match previous output dim " +
                         std::to_string(layers_[i - 1].out_dim()));
      }
    }
  }

  static Encoder he_init(std::span<const Index> dims, Rng& rng) {
    Encoder enc;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) enc.layers_.push_back(he_layer<Scalar>(dims[i], dims[i + 1], rng));
    return enc;
  }

  Index input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
  Index output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }
  Index num_layers() const { return static_cast<Index>(layers_.size()); }
  bool empty() const { return layers_.empty(); }

  std::vector<DenseLayer<Scalar>>& layers() { return layers_; }
  const std::vector<DenseLayer<Scalar>>& layers() const { return layers_; }

  bool is_hidden(Index layer) const { return layer + 1 < num_layers(); }

  Mat<Scalar> forward(const Mat<Scalar>& x) const {
    Mat<Scalar> h = x;
    for (Index i = 0; i < num_layers(); ++i) {
      h = layers_[i].apply(h);
      if (is_hidden(i)) h = relu(h);
    }
    return h;
  }

  Vec<Scalar> forward(const Vec<Scalar>& x) const { return forward(Mat<Scalar>(x)).col(0); }

  /// Runs layers [first, last) and records what backward() needs into cache.
  Mat<Scalar> forward(const Mat<Scalar>& x, Cache& cache, Index first = 0, Index last = -1) const {
    if (last < 0) last = num_layers();
    cache.inputs.resize(layers_.size());
    cache.pre.resize(layers_.size());
    Mat<Scalar> h = x;
    for (Index i = first; i < last; ++i) {
      cache.inputs[i] = std::move(h);
      cache.pre[i] = layers_[i].apply(cache.inputs[i]);
      h = is_hidden(i) ? Mat<Scalar>(relu(cache.pre[i])) : cache.pre[i];
    }
    return h;
  }

  /// Accumulates parameter gradients of layers [first, last) into grad and
  /// returns the gradient with respect to the input of layer `first`.
  Mat<Scalar> backward(const Cache& cache, const Mat<Scalar>& d_out, Encoder& grad, Index first = 0,
                       Index last = -1) const {
    if (last < 0) last = num_layers();
    Mat<Scalar> delta = d_out;
    for (Index i = last - 1; i >= first; --i) {
      if (is_hidden(i)) delta = delta.cwiseProduct(relu_mask(cache.pre[i]));
      grad.layers_[i].weight.noalias() += delta * cache.inputs[i].transpose();
      grad.layers_[i].bias += delta.rowwise().sum();
      delta = layers_[i].weight.transpose() * delta;
    }
    return delta;
  }

  Encoder zeros_like() const {
    Encoder z = *this;
    for (auto& l : z.layers_) l.set_zero();
    return z;
  }

  bool all_finite() const {
    for (const auto& l : layers_)
      if (!l.all_finite()) return false;
    return true;
  }

 private:
  std::vector<DenseLayer<Scalar>> layers_;
};

/// Linear classifier over a feature vector.
template <typename Scalar>
using LinearHead = DenseLayer<Scalar>;

template <typename Scalar>
void append_blocks(std::vector<Block<Scalar>>& out, DenseLayer<Scalar>& layer) {
  if (layer.weight.size() == 0) return;
  out.emplace_back(layer.weight.data(), layer.weight.rows(), layer.weight.cols());
  out.emplace_back(layer.bias.data(), layer.bias.rows(), 1);
}

template <typename Scalar>
void append_blocks(std::vector<Block<Scalar>>& out, Encoder<Scalar>& enc) {
  for (auto& l : enc.layers()) append_blocks(out, l);
}

template <typename Scalar>
void append_blocks(std::vector<Block<Scalar>>& out, Mat<Scalar>& m) {
  if (m.size() == 0) return;
  out.emplace_back(m.data(), m.rows(), m.cols());
}

/// Flattened, order-stable list of every tensor in a model's parameter tree.
template <typename Model>
auto parameter_blocks(Model& model) {
  using Scalar = typename Model::scalar_type;
  std::vector<Block<Scalar>> out;
  append_blocks(out, model);
  return out;
}

template <typename Scalar>
Scalar squared_norm(const std::vector<Block<Scalar>>& blocks) {
  Scalar s = 0;
  for (const auto& b : blocks) s += b.squaredNorm();
  return s;
}

template <typename Scalar>
std::size_t parameter_count(const std::vector<Block<Scalar>>& blocks) {
  std::size_t n = 0;
  for (const auto& b : blocks) n += static_cast<std::size_t>(b.size());
  return n;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy

template <typename Scalar>
struct CrossEntropy {
  Scalar loss = 0;
  Vec<Scalar> grad;  // softmax(logits) - onehot(label)
};

/// Numerically stable softmax of one logit vector.
template <typename Scalar>
Vec<Scalar> softmax(const Vec<Scalar>& logits) {
  Vec<Scalar> e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

template <typename Scalar>
CrossEntropy<Scalar> softmax_cross_entropy(const Vec<Scalar>& logits, int label) {
  if (label < 0 || label >= logits.size()) {
    throw std::out_of_range("label " + std::to_string(label) + " outside [0, " + std::to_string(logits.size()) + ")");
  }
  if (!logits.allFinite()) throw DivergenceError("non-finite logits");
  const Scalar mx = logits.maxCoeff();
  const Vec<Scalar> shifted = logits.array() - mx;
  const Scalar log_sum = std::log(shifted.array().exp().sum());
  CrossEntropy<Scalar> out;
  out.loss = log_sum - shifted(label);
  out.grad = (shifted.array() - log_sum).exp();
  out.grad(label) -= Scalar(1);
  return out;
}

/// Batch version: logits is k x B, returns the mean loss; d_logits receives
/// (softmax - onehot) / B so that it is the gradient of the mean.
template <typename Scalar>
Scalar softmax_cross_entropy(const Mat<Scalar>& logits, std::span<const int> labels, Mat<Scalar>* d_logits,
                             Scalar weight = Scalar(1)) {
  const Index batch = logits.cols();
  if (static_cast<Index>(labels.size()) != batch) throw ShapeError("label count does not match batch size");
  if (d_logits && (d_logits->rows() != logits.rows() || d_logits->cols() != batch)) {
    d_logits->setZero(logits.rows(), batch);
  }
  Scalar total = 0;
  const Scalar inv_batch = Scalar(1) / static_cast<Scalar>(batch);
  for (Index j = 0; j < batch; ++j) {
    const int y = labels[j];
    if (y < 0 || y >= logits.rows()) throw std::out_of_range("label " + std::to_string(y) + " out of range");
    const Scalar mx = logits.col(j).maxCoeff();
    const Scalar log_sum = std::log((logits.col(j).array() - mx).exp().sum()) + mx;
    total += log_sum - logits(y, j);
    if (d_logits) {
      auto col = d_logits->col(j);
      col.array() += weight * inv_batch * (logits.col(j).array() - log_sum).exp();
      col(y) -= weight * inv_batch;
    }
  }
  return total * inv_batch;
}

/// argmax per column; ties go to the lowest class index.
template <typename Scalar>
std::vector<int> argmax_columns(const Mat<Scalar>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.cols()));
  for (Index j = 0; j < logits.cols(); ++j) {
    Index best = 0;
    for (Index i = 1; i < logits.rows(); ++i)
      if (logits(i, j) > logits(best, j)) best = i;
    out[static_cast<std::size_t>(j)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace umt::nn
