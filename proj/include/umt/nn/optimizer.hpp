#pragma once

#include "umt/nn/dense.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace umt::nn {

enum class OptimizerKind { kSgd, kMomentum, kAdam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::kSgd;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Step decay: lr * decay_factor^(epoch / decay_every). decay_every == 0 disables it.
  double decay_factor = 0.1;
  int decay_every = 0;

  double learning_rate_at(int epoch) const {
    if (decay_every <= 0) return learning_rate;
    return learning_rate * std::pow(decay_factor, epoch / decay_every);
  }

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (decay_every < 0) throw ConfigError("decay_every must be >= 0");
    if (!(decay_factor > 0)) throw ConfigError("decay_factor must be > 0");
  }

  bool operator==(const OptimizerSpec&) const = default;
};

/// First-order optimizer over a flat list of parameter blocks. Moment buffers
/// are allocated on the first step and must keep matching shapes afterwards.
template <typename Scalar>
class Optimizer {
 public:
  explicit Optimizer(OptimizerSpec spec) : spec_(spec), lr_(spec.learning_rate) { spec_.validate(); }

  const OptimizerSpec& spec() const { return spec_; }
  long step_count() const { return steps_; }
  double learning_rate() const { return lr_; }

  void set_epoch(int epoch) { lr_ = spec_.learning_rate_at(epoch); }

  void step(std::vector<Block<Scalar>>& params, const std::vector<Block<Scalar>>& grads) {
    if (params.size() != grads.size()) {
      throw ShapeError("optimizer got " + std::to_string(params.size()) + " parameter blocks but " +
                       std::to_string(grads.size()) + " gradient blocks");
    }
    if (first_.empty()) {
      for (const auto& p : params) {
        if (spec_.kind != OptimizerKind::kSgd) first_.push_back(Mat<Scalar>::Zero(p.rows(), p.cols()));
        if (spec_.kind == OptimizerKind::kAdam) second_.push_back(Mat<Scalar>::Zero(p.rows(), p.cols()));
      }
      if (spec_.kind == OptimizerKind::kSgd) first_.resize(params.size());
    } else if (first_.size() != params.size()) {
      throw ShapeError("optimizer parameter list changed between steps");
    }
    ++steps_;
    const Scalar lr = static_cast<Scalar>(lr_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      const auto& g = grads[i];
      if (p.rows() != g.rows() || p.cols() != g.cols()) {
        throw ShapeError("gradient block " + std::to_string(i) + " shape does not match its parameter");
      }
      switch (spec_.kind) {
        case OptimizerKind::kSgd:
          p -= lr * g;
          break;
        case OptimizerKind::kMomentum: {
          check_moment(first_[i], p, i);
          first_[i] = static_cast<Scalar>(spec_.momentum) * first_[i] + g;
          p -= lr * first_[i];
          break;
        }
        case OptimizerKind::kAdam: {
          check_moment(first_[i], p, i);
          const Scalar b1 = static_cast<Scalar>(spec_.beta1);
          const Scalar b2 = static_cast<Scalar>(spec_.beta2);
          first_[i] = b1 * first_[i] + (Scalar(1) - b1) * g;
          second_[i] = b2 * second_[i] + (Scalar(1) - b2) * g.cwiseAbs2();
          const Scalar c1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(steps_));
          const Scalar c2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(steps_));
          const Scalar eps = static_cast<Scalar>(spec_.epsilon);
          p.array() -= lr * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + eps);
          break;
        }
      }
    }
  }

 private:
  static void check_moment(const Mat<Scalar>& m, const Block<Scalar>& p, std::size_t i) {
    if (m.rows() != p.rows() || m.cols() != p.cols())
      throw ShapeError("moment buffer " + std::to_string(i) + " shape does not match its parameter");
  }

  OptimizerSpec spec_;
  double lr_;
  long steps_ = 0;
  std::vector<Mat<Scalar>> first_;
  std::vector<Mat<Scalar>> second_;
};

}  // namespace umt::nn
