#include "umt/fusion_model.hpp"

#include "umt/nn/grad_check.hpp"

namespace umt {

std::vector<Index> Architecture::encoder_dims(int input_dim) const {
  std::vector<Index> dims{input_dim};
  for (int i = 0; i < hidden_layers; ++i) dims.push_back(hidden_width);
  dims.push_back(feature_dim);
  return dims;
}

void Architecture::validate() const {
  if (hidden_width <= 0) throw ConfigError("hidden_width must be > 0");
  if (hidden_layers < 1) throw ConfigError("hidden_layers must be >= 1");
  if (feature_dim <= 0) throw ConfigError("feature_dim must be > 0");
  if (predictor_width <= 0) throw ConfigError("predictor_width must be > 0");
}

void append_blocks(std::vector<ParamBlock>& out, FusionModel& m) {
  nn::append_blocks(out, m.encoder_m1);
  nn::append_blocks(out, m.encoder_m2);
  nn::append_blocks(out, m.head);
  nn::append_blocks(out, m.junction);
  nn::append_blocks(out, m.predictor);
  nn::append_blocks(out, m.aux_m1);
  nn::append_blocks(out, m.aux_m2);
}

FusionModel zeros_like(const FusionModel& m) {
  FusionModel z;
  z.mode = m.mode;
  z.encoder_m1 = m.encoder_m1.zeros_like();
  z.encoder_m2 = m.encoder_m2.zeros_like();
  z.head = nn::zeros_like(m.head);
  z.junction = Matrix::Zero(m.junction.rows(), m.junction.cols());
  z.predictor = m.predictor.zeros_like();
  z.aux_m1 = nn::zeros_like(m.aux_m1);
  z.aux_m2 = nn::zeros_like(m.aux_m2);
  return z;
}

bool all_finite(FusionModel& m) {
  for (const auto& b : nn::parameter_blocks(m))
    if (!b.allFinite()) return false;
  return true;
}

FusionModel make_fusion_model(const Architecture& arch, int input_dim, int num_classes, FusionMode mode,
                              bool aux_heads, Rng& rng) {
  arch.validate();
  const auto dims = arch.encoder_dims(input_dim);
  FusionModel m;
  m.mode = mode;
  m.encoder_m1 = EncoderNet::he_init(dims, rng);
  m.encoder_m2 = EncoderNet::he_init(dims, rng);
  m.head = nn::he_layer<double>(2 * arch.feature_dim, num_classes, rng);
  if (mode == FusionMode::kMiddle) {
    m.junction = nn::he_layer<double>(arch.hidden_width, arch.hidden_width, rng).weight;
    const std::vector<Index> pdims{arch.feature_dim, arch.predictor_width, arch.feature_dim};
    m.predictor = EncoderNet::he_init(pdims, rng);
  }
  if (aux_heads) {
    m.aux_m1 = nn::he_layer<double>(arch.feature_dim, num_classes, rng);
    m.aux_m2 = nn::he_layer<double>(arch.feature_dim, num_classes, rng);
  }
  return m;
}

void append_blocks(std::vector<ParamBlock>& out, UniModalModel& m) {
  nn::append_blocks(out, m.encoder);
  nn::append_blocks(out, m.head);
}

UniModalModel zeros_like(const UniModalModel& m) {
  return UniModalModel{m.modality, m.encoder.zeros_like(), nn::zeros_like(m.head)};
}

UniModalModel make_uni_modal_model(const Architecture& arch, int modality, int input_dim, int num_classes,
                                   Rng& rng) {
  arch.validate();
  UniModalModel m;
  m.modality = modality;
  m.encoder = EncoderNet::he_init(arch.encoder_dims(input_dim), rng);
  m.head = nn::he_layer<double>(arch.feature_dim, num_classes, rng);
  return m;
}

Batch gather(const Split& split, std::span<const Index> indices, const Matrix* teacher_m1,
             const Matrix* teacher_m2) {
  Batch b;
  const Index n = static_cast<Index>(indices.size());
  b.x_m1.resize(split.x_m1.rows(), n);
  b.x_m2.resize(split.x_m2.rows(), n);
  b.labels.resize(static_cast<std::size_t>(n));
  if (teacher_m1) b.teacher_m1.resize(teacher_m1->rows(), n);
  if (teacher_m2) b.teacher_m2.resize(teacher_m2->rows(), n);
  for (Index j = 0; j < n; ++j) {
    const Index i = indices[static_cast<std::size_t>(j)];
    b.x_m1.col(j) = split.x_m1.col(i);
    b.x_m2.col(j) = split.x_m2.col(i);
    b.labels[static_cast<std::size_t>(j)] = split.labels[static_cast<std::size_t>(i)];
    if (teacher_m1) b.teacher_m1.col(j) = teacher_m1->col(i);
    if (teacher_m2) b.teacher_m2.col(j) = teacher_m2->col(i);
  }
  return b;
}

Batch whole(const Split& split, const Matrix* teacher_m1, const Matrix* teacher_m2) {
  Batch b;
  b.x_m1 = split.x_m1;
  b.x_m2 = split.x_m2;
  b.labels = split.labels;
  if (teacher_m1) b.teacher_m1 = *teacher_m1;
  if (teacher_m2) b.teacher_m2 = *teacher_m2;
  return b;
}

double distill_loss(const Vector& teacher, const Vector& student) {
  if (teacher.size() != student.size()) {
    throw ShapeError("distill_loss: teacher feature has length " + std::to_string(teacher.size()) +
                     " but student feature has length " + std::to_string(student.size()));
  }
  return (teacher - student).squaredNorm();
}

double distill_loss(const Matrix& teacher, const Matrix& student) {
  if (teacher.rows() != student.rows() || teacher.cols() != student.cols()) {
    throw ShapeError("distill_loss: teacher features are " + std::to_string(teacher.rows()) + "x" +
                     std::to_string(teacher.cols()) + " but student features are " + std::to_string(student.rows()) +
                     "x" + std::to_string(student.cols()));
  }
  return (teacher - student).squaredNorm() / static_cast<double>(teacher.cols());
}

namespace {

struct ForwardState {
  EncoderNet::Cache c1, c2, cp;
  Matrix f1, f2;      // encoder outputs (m1 fused in middle mode)
  Matrix hidden_m2;   // m2 first hidden activation (middle mode)
};

void run_encoders(const FusionModel& m, const Matrix& x1, const Matrix& x2, ForwardState& s) {
  if (m.mode == FusionMode::kLate) {
    s.f1 = m.encoder_m1.forward(x1, s.c1);
    s.f2 = m.encoder_m2.forward(x2, s.c2);
    return;
  }
  s.f2 = m.encoder_m2.forward(x2, s.c2);
  s.hidden_m2 = s.c2.inputs[1];
  const Matrix h1 = m.encoder_m1.forward(x1, s.c1, 0, 1);
  if (m.junction.cols() != s.hidden_m2.rows() || m.junction.rows() != h1.rows()) {
    throw ShapeError("middle fusion junction does not match encoder hidden widths");
  }
  s.f1 = m.encoder_m1.forward(Matrix(h1 + m.junction * s.hidden_m2), s.c1, 1, m.encoder_m1.num_layers());
}

void check_batch(const FusionModel& m, const Batch& b) {
  if (b.x_m1.rows() != m.encoder_m1.input_dim() || b.x_m2.rows() != m.encoder_m2.input_dim()) {
    throw ShapeError("batch input dims do not match encoder input dims");
  }
  if (b.x_m1.cols() != b.size() || b.x_m2.cols() != b.size()) throw ShapeError("batch columns do not match labels");
  if (b.size() == 0) throw ShapeError("empty batch");
  if (m.mode == FusionMode::kMiddle && m.encoder_m2.num_layers() < 2) {
    throw ShapeError("middle fusion needs at least one hidden layer in each encoder");
  }
}

}  // namespace

FusionFeatures fusion_features(const FusionModel& model, const Matrix& x_m1, const Matrix& x_m2) {
  ForwardState s;
  run_encoders(model, x_m1, x_m2, s);
  return {std::move(s.f1), std::move(s.f2)};
}

Matrix fusion_logits(const FusionModel& model, const Matrix& x_m1, const Matrix& x_m2) {
  auto f = fusion_features(model, x_m1, x_m2);
  Matrix z(f.m1.rows() + f.m2.rows(), f.m1.cols());
  z << f.m1, f.m2;
  return model.head.apply(z);
}

LossTerms fusion_objective(const FusionModel& model, const Batch& batch, const ObjectiveOptions& opt,
                           FusionModel* grad) {
  check_batch(model, batch);
  const Index B = batch.size();
  const Index d1 = model.encoder_m1.output_dim();
  const Index d2 = model.encoder_m2.output_dim();
  if (model.head.in_dim() != d1 + d2) {
    throw ShapeError("head input dim " + std::to_string(model.head.in_dim()) + " != d_phi1 + d_phi2 = " +
                     std::to_string(d1 + d2));
  }

  ForwardState s;
  run_encoders(model, batch.x_m1, batch.x_m2, s);

  Matrix z(d1 + d2, B);
  z.topRows(d1) = opt.feature_scale_m1 * s.f1;
  z.bottomRows(d2) = opt.feature_scale_m2 * s.f2;
  if (opt.feature_mask) {
    if (opt.feature_mask->rows() != z.rows() || opt.feature_mask->cols() != B) {
      throw ShapeError("feature mask shape does not match the fused features");
    }
    z.array() *= opt.feature_mask->array();
  }

  LossTerms terms;
  Matrix d_logits;
  const Matrix logits = model.head.apply(z);
  terms.fusion = nn::softmax_cross_entropy<double>(logits, batch.labels, grad ? &d_logits : nullptr, opt.weight_fused);
  terms.total = opt.weight_fused * terms.fusion;

  Matrix df1, df2;
  if (grad) {
    grad->head.weight.noalias() += d_logits * z.transpose();
    grad->head.bias += d_logits.rowwise().sum();
    Matrix dz = model.head.weight.transpose() * d_logits;
    if (opt.feature_mask) dz.array() *= opt.feature_mask->array();
    df1 = opt.feature_scale_m1 * dz.topRows(d1);
    df2 = opt.feature_scale_m2 * dz.bottomRows(d2);
  }

  auto aux_term = [&](const LinearHead& head, LinearHead* head_grad, const Matrix& f, double weight, Matrix& df) {
    Matrix d_aux;
    const Matrix aux_logits = head.apply(f);
    const double loss = nn::softmax_cross_entropy<double>(aux_logits, batch.labels, grad ? &d_aux : nullptr, weight);
    if (grad) {
      head_grad->weight.noalias() += d_aux * f.transpose();
      head_grad->bias += d_aux.rowwise().sum();
      df.noalias() += head.weight.transpose() * d_aux;
    }
    return loss;
  };
  if (opt.weight_m1 != 0) {
    if (!model.has_aux_heads()) throw ShapeError("auxiliary head weights set but the model has no auxiliary heads");
    terms.aux_m1 = aux_term(model.aux_m1, grad ? &grad->aux_m1 : nullptr, s.f1, opt.weight_m1, df1);
    terms.total += opt.weight_m1 * terms.aux_m1;
  }
  if (opt.weight_m2 != 0) {
    if (!model.has_aux_heads()) throw ShapeError("auxiliary head weights set but the model has no auxiliary heads");
    terms.aux_m2 = aux_term(model.aux_m2, grad ? &grad->aux_m2 : nullptr, s.f2, opt.weight_m2, df2);
    terms.total += opt.weight_m2 * terms.aux_m2;
  }

  const double inv_b = 1.0 / static_cast<double>(B);
  if (opt.distill_m1) {
    if (batch.teacher_m1.size() == 0) throw ConfigError("m1 distillation requested without teacher features");
    if (model.mode == FusionMode::kMiddle) {
      const Matrix pred = model.predictor.forward(s.f1, s.cp);
      terms.distill_m1 = distill_loss(batch.teacher_m1, pred);
      if (grad && opt.lambda != 0) {
        const Matrix dpred = (2.0 * opt.lambda * inv_b) * (pred - batch.teacher_m1);
        df1 += model.predictor.backward(s.cp, dpred, grad->predictor);
      }
    } else {
      terms.distill_m1 = distill_loss(batch.teacher_m1, s.f1);
      if (grad && opt.lambda != 0) df1 += (2.0 * opt.lambda * inv_b) * (s.f1 - batch.teacher_m1);
    }
    terms.total += opt.lambda * terms.distill_m1;
  }
  if (opt.distill_m2) {
    if (batch.teacher_m2.size() == 0) throw ConfigError("m2 distillation requested without teacher features");
    terms.distill_m2 = distill_loss(batch.teacher_m2, s.f2);
    if (grad && opt.lambda != 0) df2 += (2.0 * opt.lambda * inv_b) * (s.f2 - batch.teacher_m2);
    terms.total += opt.lambda * terms.distill_m2;
  }

  if (grad) {
    const Index L1 = model.encoder_m1.num_layers();
    if (model.mode == FusionMode::kLate) {
      model.encoder_m1.backward(s.c1, df1, grad->encoder_m1);
      model.encoder_m2.backward(s.c2, df2, grad->encoder_m2);
    } else {
      const Matrix du = model.encoder_m1.backward(s.c1, df1, grad->encoder_m1, 1, L1);
      grad->junction.noalias() += du * s.hidden_m2.transpose();
      model.encoder_m1.backward(s.c1, du, grad->encoder_m1, 0, 1);
      Matrix d_hidden2 = model.encoder_m2.backward(s.c2, df2, grad->encoder_m2, 1, model.encoder_m2.num_layers());
      d_hidden2.noalias() += model.junction.transpose() * du;
      model.encoder_m2.backward(s.c2, d_hidden2, grad->encoder_m2, 0, 1);
    }
  }
  return terms;
}

double fusion_loss(const FusionModel& model, const Batch& batch) {
  return fusion_objective(model, batch, ObjectiveOptions{}).fusion;
}

double uni_modal_objective(const UniModalModel& model, const Batch& batch, UniModalModel* grad) {
  const Matrix& x = model.modality == 1 ? batch.x_m1 : batch.x_m2;
  if (x.rows() != model.encoder.input_dim()) throw ShapeError("batch input dim does not match encoder input dim");
  EncoderNet::Cache cache;
  const Matrix f = model.encoder.forward(x, cache);
  const Matrix logits = model.head.apply(f);
  Matrix d_logits;
  const double loss = nn::softmax_cross_entropy<double>(logits, batch.labels, grad ? &d_logits : nullptr);
  if (grad) {
    grad->head.weight.noalias() += d_logits * f.transpose();
    grad->head.bias += d_logits.rowwise().sum();
    const Matrix df = model.head.weight.transpose() * d_logits;
    model.encoder.backward(cache, df, grad->encoder);
  }
  return loss;
}

}  // namespace umt
