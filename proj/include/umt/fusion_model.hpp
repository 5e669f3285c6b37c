#pragma once

#include "umt/nn/dense.hpp"
#include "umt/synthetic_data.hpp"

#include <span>
#include <vector>

namespace umt {

using EncoderNet = nn::Encoder<double>;
using LinearHead = nn::LinearHead<double>;
using ParamBlock = nn::Block<double>;

/// Encoder/predictor widths. Input dim and class count come from the dataset.
struct Architecture {
  int hidden_width = 64;
  int hidden_layers = 2;
  int feature_dim = 32;
  int predictor_width = 64;

  std::vector<Index> encoder_dims(int input_dim) const;
  void validate() const;
  bool operator==(const Architecture&) const = default;
};

enum class FusionMode { kLate, kMiddle };

/// Two encoders and a joint linear head over the concatenated features.
///
/// In middle mode the first hidden activation of the m2 encoder is added into
/// the m1 stream through `junction`, so the m1 feature is a fused feature and
/// `predictor` maps it into the m1 teacher's feature space for distillation.
/// `aux_m1` / `aux_m2` are per-modality heads used only by gradient blending.
struct FusionModel {
  using scalar_type = double;

  FusionMode mode = FusionMode::kLate;
  EncoderNet encoder_m1;
  EncoderNet encoder_m2;
  LinearHead head;
  Matrix junction;
  EncoderNet predictor;
  LinearHead aux_m1;
  LinearHead aux_m2;

  int num_classes() const { return static_cast<int>(head.out_dim()); }
  bool has_aux_heads() const { return aux_m1.weight.size() != 0; }
};

void append_blocks(std::vector<ParamBlock>& out, FusionModel& model);
FusionModel zeros_like(const FusionModel& model);
bool all_finite(FusionModel& model);

FusionModel make_fusion_model(const Architecture& arch, int input_dim, int num_classes, FusionMode mode,
                              bool aux_heads, Rng& rng);

/// Encoder plus linear head trained on one modality.
struct UniModalModel {
  using scalar_type = double;

  int modality = 1;
  EncoderNet encoder;
  LinearHead head;
};

void append_blocks(std::vector<ParamBlock>& out, UniModalModel& model);
UniModalModel zeros_like(const UniModalModel& model);

UniModalModel make_uni_modal_model(const Architecture& arch, int modality, int input_dim, int num_classes, Rng& rng);

/// A mini-batch; column j of every matrix belongs to sample j.
struct Batch {
  Matrix x_m1;
  Matrix x_m2;
  std::vector<int> labels;
  Matrix teacher_m1;  // teacher features, empty when unused
  Matrix teacher_m2;

  Index size() const { return static_cast<Index>(labels.size()); }
};

Batch gather(const Split& split, std::span<const Index> indices, const Matrix* teacher_m1 = nullptr,
             const Matrix* teacher_m2 = nullptr);
Batch whole(const Split& split, const Matrix* teacher_m1 = nullptr, const Matrix* teacher_m2 = nullptr);

/// Which terms enter the objective and how the head input is perturbed.
struct ObjectiveOptions {
  double lambda = 0;
  bool distill_m1 = false;
  bool distill_m2 = false;
  double weight_fused = 1;
  double weight_m1 = 0;  // auxiliary uni-modal heads
  double weight_m2 = 0;
  double feature_scale_m1 = 1;  // modality dropout
  double feature_scale_m2 = 1;
  const Matrix* feature_mask = nullptr;  // (d_phi1 + d_phi2) x B multiplier, feature dropout
};

struct LossTerms {
  double total = 0;
  double fusion = 0;
  double distill_m1 = 0;
  double distill_m2 = 0;
  double aux_m1 = 0;
  double aux_m2 = 0;
};

/// Evaluates the configured objective on a batch. When grad is non-null the
/// analytic gradient of `total` is accumulated into it.
LossTerms fusion_objective(const FusionModel& model, const Batch& batch, const ObjectiveOptions& options,
                           FusionModel* grad = nullptr);

/// Mean cross-entropy of the joint head (naive fusion objective).
double fusion_loss(const FusionModel& model, const Batch& batch);

/// Squared Euclidean distance between a teacher and a student feature.
double distill_loss(const Vector& teacher, const Vector& student);
/// Per-sample squared distance averaged over the batch (one sample per column).
double distill_loss(const Matrix& teacher, const Matrix& student);

/// Features entering the joint head: (m1 or fused m1, m2), each d_phi x B.
struct FusionFeatures {
  Matrix m1;
  Matrix m2;
};

FusionFeatures fusion_features(const FusionModel& model, const Matrix& x_m1, const Matrix& x_m2);
Matrix fusion_logits(const FusionModel& model, const Matrix& x_m1, const Matrix& x_m2);

/// Uni-modal cross-entropy on the model's own modality.
double uni_modal_objective(const UniModalModel& model, const Batch& batch, UniModalModel* grad = nullptr);

}  // namespace umt
