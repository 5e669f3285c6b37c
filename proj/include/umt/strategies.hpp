#pragma once

#include "umt/evaluation.hpp"
#include "umt/fusion_model.hpp"
#include "umt/nn/grad_check.hpp"
#include "umt/nn/optimizer.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace umt {

enum class Strategy {
  kUniModalM1,
  kUniModalM2,
  kNaiveFusion,
  kUmt,
  kDistillM1Only,
  kDistillM2Only,
  kSelfDistill,
  kPretrainFinetune,
  kModalityDropout,
  kFeatureDropout,
  kGradBlendSimplified,
};

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& name);
const std::vector<Strategy>& all_strategies();

bool is_uni_modal(Strategy s);
/// UMT, single-modality distillation and pre-train + fine-tune consume uni-modal teachers.
bool needs_uni_modal_teachers(Strategy s);
bool needs_fusion_teacher(Strategy s);

std::string to_string(FusionMode m);
FusionMode fusion_mode_from_string(const std::string& name);

struct TrainingConfig {
  Strategy strategy = Strategy::kNaiveFusion;
  FusionMode fusion_mode = FusionMode::kLate;
  double lambda = 0.05;
  int epochs = 60;
  int batch_size = 64;
  nn::OptimizerSpec optimizer;
  std::uint64_t seed = 1;
  double modality_dropout_prob = 1.0 / 3.0;
  double feature_dropout_prob = 0.5;
  double blend_weight_m1 = 1.0 / 3.0;
  double blend_weight_m2 = 1.0 / 3.0;
  double blend_weight_fused = 1.0 / 3.0;
  // Full-train-set diagnostics every this many epochs (the last epoch always); 0 disables them.
  int diagnostics_every = 1;
  Architecture architecture;

  void validate() const;
  bool operator==(const TrainingConfig&) const = default;
};

/// A uni-modally trained encoder with its head and final metrics.
struct Teacher {
  UniModalModel model;
  double train_accuracy = 0;
  double test_accuracy = 0;
  DiagnosticsTrace trace;
};

struct TeacherPair {
  Teacher m1;
  Teacher m2;

  const Teacher& operator[](int modality) const { return modality == 1 ? m1 : m2; }
};

/// Teachers made from a trained late-fusion model: its encoders with the
/// matching column blocks of the joint head.
TeacherPair teachers_from_fusion(const FusionModel& model);

struct TrainHooks {
  std::function<void(long step, const FusionModel&)> on_step;
  std::function<void(const EpochRecord&, const FusionModel&)> on_epoch;
};

struct FusionRun {
  FusionModel model;
  DiagnosticsTrace trace;
  double train_accuracy = 0;
  double test_accuracy = 0;
  // Mean per-sample squared teacher distance on the train split after training;
  // empty when the strategy has no teacher for that modality.
  std::optional<double> final_distill_m1;
  std::optional<double> final_distill_m2;
};

Teacher train_uni_modal(int modality, const MultiModalDataset& ds, const TrainingConfig& config);

/// Trains a fusion model with the configured strategy. Teacher-consuming
/// strategies require `teachers` (for SelfDistill these are fusion-model encoders).
FusionRun train_fusion(const MultiModalDataset& ds, const TrainingConfig& config, const TeacherPair* teachers = nullptr,
                       const TrainHooks& hooks = {});

/// Middle-fusion UMT: m2 distilled directly, the fused m1 stream through the predictor.
FusionRun train_middle_fusion_umt(const MultiModalDataset& ds, const TrainingConfig& config,
                                  const TeacherPair& teachers, const TrainHooks& hooks = {});

/// Fusion objective plus lambda times both teachers' distillation terms.
LossTerms umt_loss(const FusionModel& model, const TeacherPair& teachers, const Batch& batch, double lambda,
                   FusionModel* grad = nullptr);

/// Objective options a strategy trains with (stochastic perturbations excluded).
ObjectiveOptions objective_options(const TrainingConfig& config);

// ---------------------------------------------------------------------------
// Gradient check over every loss in the strategy zoo

enum class GradCheckSize { kSmall, kMedium };

struct GradCheckCase {
  std::string name;
  nn::GradCheckReport report;
};

std::vector<GradCheckCase> grad_check_suite(GradCheckSize size, const nn::GradCheckOptions& options = {});

}  // namespace umt
