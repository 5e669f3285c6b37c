#include "umt/nn/checkpoint.hpp"
#include "umt/nn/dense.hpp"
#include "umt/nn/grad_check.hpp"
#include "umt/nn/optimizer.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

using namespace umt;
using namespace umt::nn;

namespace {

Matrix random_matrix(Index r, Index c, Rng& rng) {
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = n(rng);
  return m;
}

Encoder<double> random_encoder(std::vector<Index> dims, Rng& rng) {
  auto enc = Encoder<double>::he_init(dims, rng);
  std::normal_distribution<double> n(0, 0.1);
  for (auto& l : enc.layers())
    for (Index i = 0; i < l.bias.size(); ++i) l.bias(i) = n(rng);
  return enc;
}

// Straight-line evaluator: explicit loops, long double accumulation.
std::vector<double> reference_forward(const Encoder<double>& enc, const std::vector<double>& x) {
  std::vector<long double> h(x.begin(), x.end());
  for (Index l = 0; l < enc.num_layers(); ++l) {
    const auto& layer = enc.layers()[static_cast<std::size_t>(l)];
    std::vector<long double> out(static_cast<std::size_t>(layer.out_dim()));
    for (Index i = 0; i < layer.out_dim(); ++i) {
      long double s = layer.bias(i);
      for (Index j = 0; j < layer.in_dim(); ++j) s += static_cast<long double>(layer.weight(i, j)) * h[j];
      out[static_cast<std::size_t>(i)] = (l + 1 < enc.num_layers() && s < 0) ? 0.0L : s;
    }
    h = std::move(out);
  }
  return {h.begin(), h.end()};
}

struct LinearSoftmax {
  Vector x;
  int label;

  double operator()(const DenseLayer<double>& layer, DenseLayer<double>* grad) const {
    const Vector logits = layer.apply(Matrix(x)).col(0);
    const auto ce = softmax_cross_entropy<double>(logits, label);
    if (grad) {
      grad->weight += ce.grad * x.transpose();
      grad->bias += ce.grad;
    }
    return ce.loss;
  }
};

}  // namespace

TEST(Encoder, ZeroNetworkGivesZeroFeature) {
  const std::array<Index, 4> dims{5, 7, 7, 3};
  Encoder<double> enc(dims);
  Rng rng(3);
  const Matrix x = random_matrix(5, 4, rng);
  EXPECT_EQ(enc.forward(x).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Encoder, IdentityLayerAppliesRelu) {
  DenseLayer<double> a(2, 2), b(2, 2);
  a.weight.setIdentity();
  b.weight.setIdentity();
  Encoder<double> enc({a, b});
  Vector x(2);
  x << 1, -1;
  const Vector y = enc.forward(x);
  EXPECT_EQ(y(0), 1.0);
  EXPECT_EQ(y(1), 0.0);
}

TEST(Encoder, MatchesStraightLineEvaluator) {
  Rng rng(11);
  const auto enc = random_encoder({9, 13, 6, 4}, rng);
  const Matrix x = random_matrix(9, 8, rng);
  const Matrix y = enc.forward(x);
  for (Index j = 0; j < x.cols(); ++j) {
    const std::vector<double> col(x.col(j).data(), x.col(j).data() + x.rows());
    const auto ref = reference_forward(enc, col);
    for (Index i = 0; i < y.rows(); ++i) EXPECT_NEAR(y(i, j), ref[static_cast<std::size_t>(i)], 1e-12);
  }
}

TEST(Encoder, CachedForwardMatchesPlainForward) {
  Rng rng(12);
  const auto enc = random_encoder({6, 5, 5, 3}, rng);
  const Matrix x = random_matrix(6, 4, rng);
  Encoder<double>::Cache cache;
  const Matrix a = enc.forward(x, cache);
  const Matrix mid = enc.forward(x, cache, 0, 1);
  const Matrix b = enc.forward(mid, cache, 1);
  EXPECT_EQ(a, enc.forward(x));
  EXPECT_EQ(a, b);
}

TEST(Encoder, MismatchedLayersAreRejected) {
  std::vector<DenseLayer<double>> layers{DenseLayer<double>(3, 4), DenseLayer<double>(5, 2)};
  EXPECT_THROW(Encoder<double>{layers}, ShapeError);
  DenseLayer<double> l(3, 2);
  EXPECT_THROW(l.apply(Matrix::Zero(4, 1)), ShapeError);
}

TEST(CrossEntropy, UniformLogits) {
  const auto ce = softmax_cross_entropy<double>(Vector::Zero(4), 2);
  EXPECT_NEAR(ce.loss, std::log(4.0), 1e-15);
  EXPECT_NEAR(ce.grad(2), 0.25 - 1, 1e-15);
  EXPECT_NEAR(ce.grad(0), 0.25, 1e-15);
}

TEST(CrossEntropy, SaturatedLogit) {
  Vector logits = Vector::Zero(5);
  logits(3) = 30;
  EXPECT_LT(softmax_cross_entropy<double>(logits, 3).loss, 1e-9);
}

TEST(CrossEntropy, TwoLogitsAgainstExtendedPrecision) {
  // loss = log(1 + e^(2-1)) for label 0, evaluated in long double
  const long double e = std::exp(1.0L);
  const long double loss = std::log1p(e);
  const long double p0 = 1.0L / (1.0L + e);
  Vector logits(2);
  logits << 1, 2;
  const auto ce = softmax_cross_entropy<double>(logits, 0);
  EXPECT_NEAR(ce.loss, static_cast<double>(loss), 1e-15);
  EXPECT_NEAR(ce.loss, 1.313262, 1e-6);
  EXPECT_NEAR(ce.grad(0), static_cast<double>(p0 - 1), 1e-15);
  EXPECT_NEAR(ce.grad(1), static_cast<double>(1 - p0), 1e-15);
}

TEST(CrossEntropy, LargeLogitsStayFinite) {
  Vector logits(3);
  logits << 1000, -1000, 999;
  const auto ce = softmax_cross_entropy<double>(logits, 2);
  EXPECT_TRUE(std::isfinite(ce.loss));
  EXPECT_NEAR(ce.loss, std::log1p(std::exp(1.0)), 1e-12);
}

TEST(CrossEntropy, BatchIsMeanOfSamples) {
  Rng rng(5);
  const Matrix logits = random_matrix(4, 6, rng);
  const std::vector<int> labels{0, 3, 1, 1, 2, 0};
  Matrix d;
  const double mean = softmax_cross_entropy<double>(logits, labels, &d);
  double sum = 0;
  for (Index j = 0; j < 6; ++j) {
    const auto ce = softmax_cross_entropy<double>(Vector(logits.col(j)), labels[static_cast<std::size_t>(j)]);
    sum += ce.loss;
    EXPECT_LT((d.col(j) - ce.grad / 6).cwiseAbs().maxCoeff(), 1e-15);
  }
  EXPECT_NEAR(mean, sum / 6, 1e-14);
}

TEST(CrossEntropy, LabelOutOfRangeThrows) {
  EXPECT_THROW(softmax_cross_entropy<double>(Vector::Zero(3), 3), std::out_of_range);
  EXPECT_THROW(softmax_cross_entropy<double>(Vector::Zero(3), -1), std::out_of_range);
}

TEST(Argmax, TiesGoToLowestIndex) {
  Matrix logits(3, 2);
  logits << 1, 0, 2, 5, 2, 5;
  EXPECT_EQ(argmax_columns<double>(logits), (std::vector<int>{1, 1}));
}

TEST(Gradient, SaturatedLinearSoftmaxVanishes) {
  DenseLayer<double> layer(3, 4);
  layer.bias(1) = 60;
  Vector x(3);
  x << 0.3, -0.2, 0.5;
  DenseLayer<double> grad(3, 4);
  LinearSoftmax{x, 1}(layer, &grad);
  EXPECT_LT(grad.weight.norm() + grad.bias.norm(), 1e-20);
}

TEST(Gradient, LinearSoftmaxIsOuterProduct) {
  Rng rng(21);
  DenseLayer<double> layer(5, 3);
  layer.weight = random_matrix(3, 5, rng);
  layer.bias = random_matrix(3, 1, rng);
  const Vector x = random_matrix(5, 1, rng);
  const int y = 2;

  // closed form, long double
  std::array<long double, 3> z{}, p{};
  long double zmax = -1e300L, norm = 0;
  for (Index i = 0; i < 3; ++i) {
    z[i] = layer.bias(i);
    for (Index j = 0; j < 5; ++j) z[i] += static_cast<long double>(layer.weight(i, j)) * x(j);
    zmax = std::max(zmax, z[i]);
  }
  for (Index i = 0; i < 3; ++i) norm += std::exp(z[i] - zmax);
  for (Index i = 0; i < 3; ++i) p[i] = std::exp(z[i] - zmax) / norm - (i == y ? 1 : 0);

  DenseLayer<double> grad(5, 3);
  LinearSoftmax{x, y}(layer, &grad);
  for (Index i = 0; i < 3; ++i) {
    EXPECT_NEAR(grad.bias(i), static_cast<double>(p[i]), 1e-15);
    for (Index j = 0; j < 5; ++j) EXPECT_NEAR(grad.weight(i, j), static_cast<double>(p[i] * x(j)), 1e-15);
  }
}

TEST(Optimizer, ZeroGradientLeavesParametersUnchanged) {
  for (auto kind : {OptimizerKind::kSgd, OptimizerKind::kMomentum, OptimizerKind::kAdam}) {
    OptimizerSpec spec;
    spec.kind = kind;
    Optimizer<double> opt(spec);
    Matrix p(2, 2), g = Matrix::Zero(2, 2);
    p << 1, -2, 3, 0.5;
    const Matrix before = p;
    std::vector<Block<double>> ps{Block<double>(p.data(), 2, 2)};
    std::vector<Block<double>> gs{Block<double>(g.data(), 2, 2)};
    for (int i = 0; i < 3; ++i) opt.step(ps, gs);
    EXPECT_EQ(p, before) << to_string(kind);
  }
}

TEST(Optimizer, SgdStep) {
  OptimizerSpec spec;
  spec.learning_rate = 0.1;
  Optimizer<double> opt(spec);
  Matrix p = Matrix::Constant(1, 1, 1.0), g = Matrix::Constant(1, 1, 2.0);
  std::vector<Block<double>> ps{Block<double>(p.data(), 1, 1)}, gs{Block<double>(g.data(), 1, 1)};
  opt.step(ps, gs);
  EXPECT_DOUBLE_EQ(p(0, 0), 0.8);
}

TEST(Optimizer, MomentumRecurrence) {
  OptimizerSpec spec;
  spec.kind = OptimizerKind::kMomentum;
  spec.learning_rate = 0.1;
  spec.momentum = 0.5;
  Optimizer<double> opt(spec);
  Matrix p = Matrix::Constant(1, 1, 1.0), g = Matrix::Constant(1, 1, 2.0);
  std::vector<Block<double>> ps{Block<double>(p.data(), 1, 1)}, gs{Block<double>(g.data(), 1, 1)};
  opt.step(ps, gs);  // v = 2, p = 0.8
  opt.step(ps, gs);  // v = 3, p = 0.5
  EXPECT_NEAR(p(0, 0), 0.5, 1e-15);
}

TEST(Optimizer, AdamFirstStepIsLearningRateSized) {
  for (double gv : {2.0, -0.003, 1e3}) {
    OptimizerSpec spec;
    spec.kind = OptimizerKind::kAdam;
    spec.learning_rate = 1e-3;
    Optimizer<double> opt(spec);
    Matrix p = Matrix::Constant(1, 1, 0.0), g = Matrix::Constant(1, 1, gv);
    std::vector<Block<double>> ps{Block<double>(p.data(), 1, 1)}, gs{Block<double>(g.data(), 1, 1)};
    opt.step(ps, gs);
    // m_hat = g, v_hat = g^2 after bias correction
    const double expected = -1e-3 * gv / (std::abs(gv) + 1e-8);
    EXPECT_NEAR(p(0, 0), expected, 1e-15);
    EXPECT_NEAR(std::abs(p(0, 0)), 1e-3, 1e-7);
  }
}

TEST(Optimizer, StepDecaySchedule) {
  OptimizerSpec spec;
  spec.learning_rate = 0.2;
  spec.decay_factor = 0.5;
  spec.decay_every = 10;
  EXPECT_DOUBLE_EQ(spec.learning_rate_at(0), 0.2);
  EXPECT_DOUBLE_EQ(spec.learning_rate_at(9), 0.2);
  EXPECT_DOUBLE_EQ(spec.learning_rate_at(10), 0.1);
  EXPECT_DOUBLE_EQ(spec.learning_rate_at(25), 0.05);
}

TEST(Optimizer, ShapeMismatchThrows) {
  Optimizer<double> opt(OptimizerSpec{});
  Matrix p(2, 2), g(2, 3);
  std::vector<Block<double>> ps{Block<double>(p.data(), 2, 2)}, gs{Block<double>(g.data(), 2, 3)};
  EXPECT_THROW(opt.step(ps, gs), ShapeError);
  std::vector<Block<double>> none;
  EXPECT_THROW(opt.step(ps, none), ShapeError);
}

TEST(Optimizer, InvalidSpecIsRejected) {
  OptimizerSpec spec;
  spec.learning_rate = 0;
  EXPECT_THROW(Optimizer<double>{spec}, ConfigError);
  EXPECT_EQ(optimizer_kind_from_string("adam"), OptimizerKind::kAdam);
  EXPECT_THROW(optimizer_kind_from_string("lbfgs"), ConfigError);
}

TEST(GradCheck, LinearModelOnOneSample) {
  Rng rng(31);
  DenseLayer<double> layer(4, 3);
  layer.weight = random_matrix(3, 4, rng);
  layer.bias = random_matrix(3, 1, rng);
  const LinearSoftmax loss{random_matrix(4, 1, rng), 1};
  const auto report = grad_check(layer, loss);
  EXPECT_TRUE(report.passed);
  EXPECT_LT(report.max_relative_error, 1e-6);
  EXPECT_EQ(report.checked, 15u);
  EXPECT_EQ(report.flagged_kinks, 0u);
}

TEST(GradCheck, DetectsAWrongGradient) {
  Rng rng(32);
  DenseLayer<double> layer(3, 2);
  layer.weight = random_matrix(2, 3, rng);
  const LinearSoftmax inner{random_matrix(3, 1, rng), 0};
  auto wrong = [&](const DenseLayer<double>& l, DenseLayer<double>* g) {
    const double v = inner(l, g);
    if (g) g->weight(1, 2) *= 1.01;
    return v;
  };
  const auto report = grad_check(layer, wrong);
  EXPECT_FALSE(report.passed);
  EXPECT_EQ(report.worst_block, 0u);
}

TEST(GradCheck, EngineeredKinkIsFlaggedNotFailed) {
  // Hidden unit 0 has zero weights and zero bias: its pre-activation is exactly 0.
  Rng rng(33);
  auto enc = random_encoder({3, 4, 2}, rng);
  enc.layers()[0].weight.row(0).setZero();
  enc.layers()[0].bias(0) = 0;
  enc.layers()[1].weight(0, 0) = 1.5;
  const Vector x = random_matrix(3, 1, rng);
  auto loss = [&](const Encoder<double>& e, Encoder<double>* g) {
    Encoder<double>::Cache cache;
    const Matrix logits = e.forward(Matrix(x), cache);
    const std::array<int, 1> labels{0};
    Matrix d;
    const double v = softmax_cross_entropy<double>(logits, labels, &d);
    if (g) e.backward(cache, d, *g);
    return v;
  };
  const auto report = grad_check(enc, loss);
  EXPECT_TRUE(report.passed) << report.max_relative_error;
  EXPECT_GE(report.flagged_kinks, 1u);
}

TEST(Checkpoint, RoundTrip) {
  Rng rng(41);
  const auto enc = random_encoder({4, 6, 2}, rng);
  TensorArchive ar;
  ar.put("enc", enc);
  ar.put("extra", random_matrix(2, 3, rng));
  const auto path = std::filesystem::temp_directory_path() / "umt_ckpt_roundtrip.bin";
  ar.save(path);
  const auto back = TensorArchive::load(path);
  std::filesystem::remove(path);
  ASSERT_TRUE(back.has_encoder("enc"));
  const auto enc2 = back.encoder("enc");
  ASSERT_EQ(enc2.num_layers(), 2);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(enc2.layers()[i].weight, enc.layers()[i].weight);
    EXPECT_EQ(enc2.layers()[i].bias, enc.layers()[i].bias);
  }
  EXPECT_EQ(back.get("extra"), ar.get("extra"));
}

TEST(Checkpoint, ShapeMismatchOnRestoreThrows) {
  TensorArchive ar;
  ar.put("w", Matrix::Zero(2, 3));
  Matrix target(3, 2);
  EXPECT_THROW(ar.restore("w", target), CheckpointError);
  EXPECT_THROW(ar.get("missing"), CheckpointError);
}

TEST(Checkpoint, BadMagicIsRejected) {
  const auto path = std::filesystem::temp_directory_path() / "umt_ckpt_bad.bin";
  {
    std::ofstream os(path, std::ios::binary);
    os << "not a checkpoint at all";
  }
  EXPECT_THROW(TensorArchive::load(path), CheckpointError);
  std::filesystem::remove(path);
}
