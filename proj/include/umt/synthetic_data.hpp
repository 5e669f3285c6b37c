#pragma once

#include "umt/types.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace umt {

/// Which modality carries the class-indicating feature of a sample.
enum class ViewType : int { kMultiView = 0, kSingleViewM1 = 1, kSingleViewM2 = 2 };

std::string to_string(ViewType v);

/// Parameters of the imbalanced two-modality multi-view distribution.
struct SyntheticConfig {
  int num_classes = 10;
  int input_dim = 256;
  double single_view_fraction = 0.2;   // mu
  double strong_modality_bias = 0.95;  // rho: share of single-view samples whose feature sits in m1
  double feature_strength = 1.0;
  // Amplitude of the m2 class feature relative to feature_strength; < 1 makes
  // m2 the weaker modality on its multi-view samples as well.
  double weak_signal_scale = 0.7;
  double noise_std = 0.25;
  int distractor_count = 2;
  int train_size = 5000;
  int test_size = 1000;
  std::uint64_t seed = 1;

  double distractor_amplitude() const { return 0.2 * feature_strength; }

  /// Throws ConfigError naming the violated invariant.
  void validate() const;

  bool operator==(const SyntheticConfig&) const = default;
};

/// k unit-norm directions per modality (columns), scaled by feature_strength.
struct FeatureDictionary {
  Matrix m1;  // d x k
  Matrix m2;  // d x k
};

struct Sample {
  Vector x_m1;
  Vector x_m2;
  int label = 0;
  ViewType view = ViewType::kMultiView;
};

/// One split stored column-wise: sample i is column i of both input matrices.
struct Split {
  Matrix x_m1;  // d x n
  Matrix x_m2;  // d x n
  std::vector<int> labels;
  std::vector<ViewType> views;

  Index size() const { return static_cast<Index>(labels.size()); }
  bool empty() const { return labels.empty(); }
  Sample sample(Index i) const;
  const Matrix& inputs(int modality) const { return modality == 1 ? x_m1 : x_m2; }
};

struct MultiModalDataset {
  SyntheticConfig config;
  FeatureDictionary features;
  Split train;
  Split test;

  int num_classes() const { return config.num_classes; }
};

FeatureDictionary make_feature_dictionary(const SyntheticConfig& config);

MultiModalDataset generate_dataset(const SyntheticConfig& config);

struct DatasetSummary {
  std::array<Index, 3> view_counts{};  // indexed by ViewType
  std::vector<Index> class_counts;
  Index total = 0;

  Index count(ViewType v) const { return view_counts[static_cast<std::size_t>(v)]; }
};

DatasetSummary summarize(const Split& split, int num_classes);

struct DatasetSummaryPair {
  DatasetSummary train;
  DatasetSummary test;
};

/// Exact view-type and per-class counts of both splits.
DatasetSummaryPair dataset_summary(const MultiModalDataset& ds);

/// Writes a dataset table. Files ending in ".tsv" or ".txt" are text with
/// shortest round-trip float formatting; anything else is little-endian binary.
void save_dataset(const MultiModalDataset& ds, const std::filesystem::path& path);
MultiModalDataset load_dataset(const std::filesystem::path& path);

}  // namespace umt
