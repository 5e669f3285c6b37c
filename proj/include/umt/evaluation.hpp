#pragma once

#include "umt/fusion_model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace umt {

// ---------------------------------------------------------------------------
// Training diagnostics

struct EpochRecord {
  int epoch = 0;
  double total_loss = 0;  // batch-averaged over the epoch
  double fusion_term = 0;
  double distill_m1 = 0;
  double distill_m2 = 0;
  double residual = 0;  // saturation residual on the train split
  double grad_norm_m1 = 0;
  double grad_norm_m2 = 0;
  double grad_norm_head = 0;
  double train_accuracy = 0;
  double test_accuracy = 0;
};

using DiagnosticsTrace = std::vector<EpochRecord>;

// ---------------------------------------------------------------------------
// Linear probe

struct ProbeConfig {
  double learning_rate = 0.1;
  int max_steps = 500;
  // Stop early once the full-batch loss improves by less than this per step.
  double plateau_tolerance = 1e-9;
  // Standardize each feature with the train-split mean and std before fitting.
  bool standardize = true;
  // Record train accuracy after every step.
  bool record_trace = false;

  void validate() const;
};

struct ProbeResult {
  int modality = 0;
  double train_accuracy = 0;
  double test_accuracy = 0;
  LinearHead head;
  Vector feature_mean;
  Vector feature_scale;
  int steps = 0;
  double final_loss = 0;
  std::vector<double> train_accuracy_trace;
  std::vector<int> test_predictions;
};

/// Fits a fresh linear head by full-batch gradient descent on fixed features
/// (d_phi x n, one sample per column) and reports train/test accuracy.
ProbeResult linear_probe(const Matrix& train_features, std::span<const int> train_labels,
                         const Matrix& test_features, std::span<const int> test_labels, int num_classes,
                         const ProbeConfig& config = {});

/// Probe of a frozen encoder on one modality of a dataset.
ProbeResult linear_probe(const EncoderNet& encoder, const MultiModalDataset& ds, int modality,
                         const ProbeConfig& config = {});

// ---------------------------------------------------------------------------
// Accuracy and per-class analysis

double accuracy(std::span<const int> predictions, std::span<const int> labels);

std::vector<int> predict(const FusionModel& model, const Split& split);
std::vector<int> predict(const UniModalModel& model, const Split& split);

/// Fraction correct per class; classes without samples are std::nullopt.
using PerClassAccuracy = std::vector<std::optional<double>>;

PerClassAccuracy per_class_accuracy(std::span<const int> predictions, std::span<const int> labels,
                                    int num_classes);

/// Mean over defined entries; nullopt when none is defined.
std::optional<double> defined_mean(const PerClassAccuracy& values);

int default_top_k(int num_classes);

struct TopKRow {
  std::string name;
  std::vector<std::optional<double>> accuracies;  // aligned with TopKComparison::classes
  std::optional<double> mean;
};

struct TopKComparison {
  std::vector<int> classes;  // selected by reference accuracy, descending
  TopKRow reference;
  std::vector<TopKRow> candidates;
};

/// Picks the K best classes of `reference` (ties to the lower class index,
/// undefined classes never selected) and restricts every candidate to them.
TopKComparison top_k_class_comparison(const PerClassAccuracy& reference,
                                      const std::vector<std::pair<std::string, PerClassAccuracy>>& candidates,
                                      int k, const std::string& reference_name = "reference");

// ---------------------------------------------------------------------------
// Saturation and gradient norms

/// Mean over columns of 1 - softmax(logits)[label].
double saturation_residual(const Matrix& logits, std::span<const int> labels);
double saturation_residual(const FusionModel& model, const Split& split);

struct GradientNorms {
  double m1 = 0;
  double m2 = 0;
  double head = 0;
  double total = 0;  // every parameter of the model, including junction/predictor/aux heads
};

GradientNorms gradient_norms(FusionModel& gradient);
GradientNorms modality_gradient_norms(const FusionModel& model, const Batch& batch,
                                      const ObjectiveOptions& options = {});

}  // namespace umt
