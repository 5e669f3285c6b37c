#pragma once

#include "umt/strategies.hpp"
#include "umt/synthetic_data.hpp"

#include <cstring>
#include <random>

namespace umt::testing {

// Small enough for unit tests to train in well under a second.
inline SyntheticConfig tiny_data(std::uint64_t seed = 7) {
  SyntheticConfig c;
  c.num_classes = 4;
  c.input_dim = 16;
  c.noise_std = 0.2;
  c.train_size = 240;
  c.test_size = 80;
  c.seed = seed;
  return c;
}

inline Architecture tiny_arch() {
  Architecture a;
  a.hidden_width = 12;
  a.hidden_layers = 2;
  a.feature_dim = 6;
  a.predictor_width = 10;
  return a;
}

inline TrainingConfig tiny_training(Strategy s = Strategy::kNaiveFusion) {
  TrainingConfig c;
  c.strategy = s;
  c.epochs = 4;
  c.batch_size = 32;
  c.architecture = tiny_arch();
  c.diagnostics_every = 1;
  return c;
}

inline Matrix random_matrix(Index r, Index c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = n(rng);
  return m;
}

inline bool bit_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

inline bool bit_equal(FusionModel& a, FusionModel& b) {
  auto pa = nn::parameter_blocks(a);
  auto pb = nn::parameter_blocks(b);
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!bit_equal(Matrix(pa[i]), Matrix(pb[i]))) return false;
  return true;
}

// FNV-1a over the raw bytes of every parameter.
inline std::uint64_t parameter_hash(const FusionModel& model) {
  auto& m = const_cast<FusionModel&>(model);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& b : nn::parameter_blocks(m)) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(b.data());
    for (std::size_t i = 0; i < sizeof(double) * static_cast<std::size_t>(b.size()); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace umt::testing
