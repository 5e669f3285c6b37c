#include "umt/strategies.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <utility>

namespace umt {

namespace {

struct StrategyName {
  Strategy strategy;
  const char* name;
};

constexpr std::array<StrategyName, 11> kStrategyNames{{
    {Strategy::kUniModalM1, "uni_modal_m1"},
    {Strategy::kUniModalM2, "uni_modal_m2"},
    {Strategy::kNaiveFusion, "naive_fusion"},
    {Strategy::kUmt, "umt"},
    {Strategy::kDistillM1Only, "distill_m1_only"},
    {Strategy::kDistillM2Only, "distill_m2_only"},
    {Strategy::kSelfDistill, "self_distill"},
    {Strategy::kPretrainFinetune, "pretrain_finetune"},
    {Strategy::kModalityDropout, "modality_dropout"},
    {Strategy::kFeatureDropout, "feature_dropout"},
    {Strategy::kGradBlendSimplified, "grad_blend_simplified"},
}};

}  // namespace

std::string to_string(Strategy s) {
  for (const auto& e : kStrategyNames)
    if (e.strategy == s) return e.name;
  return "unknown";
}

Strategy strategy_from_string(const std::string& name) {
  for (const auto& e : kStrategyNames)
    if (name == e.name) return e.strategy;
  std::string known;
  for (const auto& e : kStrategyNames) known += (known.empty() ? "" : ", ") + std::string(e.name);
  throw ConfigError("unknown strategy '" + name + "' (expected one of: " + known + ")");
}

const std::vector<Strategy>& all_strategies() {
  static const std::vector<Strategy> all = [] {
    std::vector<Strategy> v;
    for (const auto& e : kStrategyNames) v.push_back(e.strategy);
    return v;
  }();
  return all;
}

bool is_uni_modal(Strategy s) { return s == Strategy::kUniModalM1 || s == Strategy::kUniModalM2; }

bool needs_uni_modal_teachers(Strategy s) {
  return s == Strategy::kUmt || s == Strategy::kDistillM1Only || s == Strategy::kDistillM2Only ||
         s == Strategy::kPretrainFinetune;
}

bool needs_fusion_teacher(Strategy s) { return s == Strategy::kSelfDistill; }

std::string to_string(FusionMode m) { return m == FusionMode::kLate ? "late" : "middle"; }

FusionMode fusion_mode_from_string(const std::string& name) {
  if (name == "late") return FusionMode::kLate;
  if (name == "middle") return FusionMode::kMiddle;
  throw ConfigError("unknown fusion mode '" + name + "' (expected late or middle)");
}

void TrainingConfig::validate() const {
  if (!(lambda >= 0)) throw ConfigError("lambda must be ≥ 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(modality_dropout_prob >= 0 && modality_dropout_prob < 1)) {
    throw ConfigError("modality_dropout_prob must be in [0, 1)");
  }
  if (!(feature_dropout_prob >= 0 && feature_dropout_prob < 1)) {
    throw ConfigError("feature_dropout_prob must be in [0, 1)");
  }
  if (strategy == Strategy::kGradBlendSimplified) {
    if (!(blend_weight_m1 >= 0 && blend_weight_m2 >= 0 && blend_weight_fused >= 0)) {
      throw ConfigError("gradient blending weights must be >= 0");
    }
    if (blend_weight_m1 + blend_weight_m2 + blend_weight_fused <= 0) {
      throw ConfigError("gradient blending weights must not all be zero");
    }
  }
  if (diagnostics_every < 0) throw ConfigError("diagnostics_every must be >= 0");
  if (fusion_mode == FusionMode::kMiddle &&
      (strategy == Strategy::kSelfDistill || strategy == Strategy::kPretrainFinetune)) {
    throw ConfigError("strategy " + to_string(strategy) + " is only defined for late fusion");
  }
  if (fusion_mode == FusionMode::kMiddle && architecture.hidden_layers < 1) {
    throw ConfigError("middle fusion needs at least one hidden layer");
  }
  optimizer.validate();
  architecture.validate();
}

ObjectiveOptions objective_options(const TrainingConfig& config) {
  ObjectiveOptions o;
  o.lambda = config.lambda;
  switch (config.strategy) {
    case Strategy::kUmt:
    case Strategy::kSelfDistill:
      o.distill_m1 = o.distill_m2 = true;
      break;
    case Strategy::kDistillM1Only:
      o.distill_m1 = true;
      break;
    case Strategy::kDistillM2Only:
      o.distill_m2 = true;
      break;
    case Strategy::kGradBlendSimplified:
      o.weight_fused = config.blend_weight_fused;
      o.weight_m1 = config.blend_weight_m1;
      o.weight_m2 = config.blend_weight_m2;
      break;
    default:
      break;
  }
  return o;
}

TeacherPair teachers_from_fusion(const FusionModel& model) {
  if (model.mode != FusionMode::kLate) throw ConfigError("fusion teachers require a late-fusion model");
  const Index d1 = model.encoder_m1.output_dim();
  const Index d2 = model.encoder_m2.output_dim();
  TeacherPair t;
  t.m1.model.modality = 1;
  t.m1.model.encoder = model.encoder_m1;
  t.m1.model.head.weight = model.head.weight.leftCols(d1);
  t.m1.model.head.bias = model.head.bias;
  t.m2.model.modality = 2;
  t.m2.model.encoder = model.encoder_m2;
  t.m2.model.head.weight = model.head.weight.rightCols(d2);
  t.m2.model.head.bias = model.head.bias;
  return t;
}

namespace {

std::vector<Index> iota_indices(Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), Index{0});
  return v;
}

void zero_blocks(std::vector<ParamBlock>& blocks) {
  for (auto& b : blocks) b.setZero();
}

void check_teacher(const Teacher& t, int modality, Index input_dim, int feature_dim) {
  const auto& enc = t.model.encoder;
  if (enc.input_dim() != input_dim || enc.output_dim() != feature_dim) {
    throw ConfigError("teacher m" + std::to_string(modality) + " maps " + std::to_string(enc.input_dim()) + " -> " +
                      std::to_string(enc.output_dim()) + " but the student encoder maps " +
                      std::to_string(input_dim) + " -> " + std::to_string(feature_dim));
  }
}

double uni_residual(const UniModalModel& m, const Split& s) {
  return saturation_residual(m.head.apply(m.encoder.forward(s.inputs(m.modality))), s.labels);
}

}  // namespace

Teacher train_uni_modal(int modality, const MultiModalDataset& ds, const TrainingConfig& config) {
  config.validate();
  if (modality != 1 && modality != 2) throw ConfigError("modality must be 1 or 2");
  if (ds.train.empty()) throw ConfigError("training needs a non-empty train split");
  Rng init_rng(derive_seed(config.seed, "init"));
  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));

  Teacher teacher;
  UniModalModel& model = teacher.model;
  model = make_uni_modal_model(config.architecture, modality, static_cast<int>(ds.train.inputs(modality).rows()),
                               ds.num_classes(), init_rng);
  UniModalModel grad = zeros_like(model);
  auto params = nn::parameter_blocks(model);
  auto grads = nn::parameter_blocks(grad);
  nn::Optimizer<double> opt(config.optimizer);

  auto order = iota_indices(ds.train.size());
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    opt.set_epoch(epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const auto idx = std::span<const Index>(order).subspan(start, std::min(batch, order.size() - start));
      const Batch b = gather(ds.train, idx);
      zero_blocks(grads);
      const double loss = uni_modal_objective(model, b, &grad);
      if (!std::isfinite(loss)) {
        throw DivergenceError("uni-modal m" + std::to_string(modality) + " loss is non-finite at epoch " +
                              std::to_string(epoch) + "; lower the learning rate");
      }
      opt.step(params, grads);
      loss_sum += loss;
      ++batches;
    }
    if (!model.encoder.all_finite() || !model.head.all_finite()) {
      throw DivergenceError("uni-modal m" + std::to_string(modality) + " parameters became non-finite at epoch " +
                            std::to_string(epoch));
    }
    const bool last = epoch + 1 == config.epochs;
    if (last || (config.diagnostics_every > 0 && (epoch + 1) % config.diagnostics_every == 0)) {
      EpochRecord r;
      r.epoch = epoch + 1;
      r.total_loss = r.fusion_term = loss_sum / batches;
      r.residual = uni_residual(model, ds.train);
      r.train_accuracy = accuracy(predict(model, ds.train), ds.train.labels);
      r.test_accuracy = ds.test.empty() ? 0.0 : accuracy(predict(model, ds.test), ds.test.labels);
      teacher.trace.push_back(r);
    }
  }
  teacher.train_accuracy = teacher.trace.back().train_accuracy;
  teacher.test_accuracy = teacher.trace.back().test_accuracy;
  return teacher;
}

FusionRun train_fusion(const MultiModalDataset& ds, const TrainingConfig& config, const TeacherPair* teachers,
                       const TrainHooks& hooks) {
  config.validate();
  const Strategy strategy = config.strategy;
  if (is_uni_modal(strategy)) throw ConfigError("train_fusion does not train uni-modal strategies");
  if (ds.train.empty()) throw ConfigError("training needs a non-empty train split");
  if ((needs_uni_modal_teachers(strategy) || needs_fusion_teacher(strategy)) && !teachers) {
    throw ConfigError("strategy " + to_string(strategy) + " requires teachers");
  }
  const int input_dim = static_cast<int>(ds.train.x_m1.rows());
  if (ds.train.x_m2.rows() != input_dim) throw ShapeError("modalities with different input dims are not supported");
  const int feature_dim = config.architecture.feature_dim;

  Rng init_rng(derive_seed(config.seed, "init"));
  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  Rng dropout_rng(derive_seed(config.seed, "dropout"));

  FusionRun run;
  FusionModel& model = run.model;
  model = make_fusion_model(config.architecture, input_dim, ds.num_classes(), config.fusion_mode,
                            strategy == Strategy::kGradBlendSimplified, init_rng);

  const ObjectiveOptions base_options = objective_options(config);
  Matrix teacher_m1, teacher_m2;
  if (teachers && (base_options.distill_m1 || strategy == Strategy::kPretrainFinetune)) {
    check_teacher(teachers->m1, 1, input_dim, feature_dim);
  }
  if (teachers && (base_options.distill_m2 || strategy == Strategy::kPretrainFinetune)) {
    check_teacher(teachers->m2, 2, input_dim, feature_dim);
  }
  if (base_options.distill_m1) teacher_m1 = teachers->m1.model.encoder.forward(ds.train.x_m1);
  if (base_options.distill_m2) teacher_m2 = teachers->m2.model.encoder.forward(ds.train.x_m2);
  const Matrix* t1 = base_options.distill_m1 ? &teacher_m1 : nullptr;
  const Matrix* t2 = base_options.distill_m2 ? &teacher_m2 : nullptr;

  if (strategy == Strategy::kPretrainFinetune) {
    model.encoder_m1 = teachers->m1.model.encoder;
    model.encoder_m2 = teachers->m2.model.encoder;
  }

  FusionModel grad = zeros_like(model);
  auto all_grads = nn::parameter_blocks(grad);
  std::vector<ParamBlock> params, grads;
  if (strategy == Strategy::kPretrainFinetune) {
    nn::append_blocks(params, model.head);
    nn::append_blocks(grads, grad.head);
  } else {
    params = nn::parameter_blocks(model);
    grads = all_grads;
  }
  nn::Optimizer<double> opt(config.optimizer);

  const Index fused_dim = 2 * static_cast<Index>(feature_dim);
  Matrix feature_mask;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  auto order = iota_indices(ds.train.size());
  const auto batch = static_cast<std::size_t>(config.batch_size);
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    opt.set_epoch(epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    LossTerms sum;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const auto idx = std::span<const Index>(order).subspan(start, std::min(batch, order.size() - start));
      const Batch b = gather(ds.train, idx, t1, t2);
      ObjectiveOptions options = base_options;
      if (strategy == Strategy::kModalityDropout) {
        if (uniform(dropout_rng) < config.modality_dropout_prob) {
          const double keep = 1.0 / (1.0 - config.modality_dropout_prob);
          const bool drop_m1 = uniform(dropout_rng) < 0.5;
          options.feature_scale_m1 = drop_m1 ? 0.0 : keep;
          options.feature_scale_m2 = drop_m1 ? keep : 0.0;
        }
      } else if (strategy == Strategy::kFeatureDropout) {
        const double p = config.feature_dropout_prob;
        feature_mask.resize(fused_dim, b.size());
        for (Index j = 0; j < feature_mask.cols(); ++j)
          for (Index i = 0; i < feature_mask.rows(); ++i)
            feature_mask(i, j) = uniform(dropout_rng) < p ? 0.0 : 1.0 / (1.0 - p);
        options.feature_mask = &feature_mask;
      }
      zero_blocks(all_grads);
      const LossTerms terms = fusion_objective(model, b, options, &grad);
      if (!std::isfinite(terms.total)) {
        throw DivergenceError(to_string(strategy) + " loss is non-finite at epoch " + std::to_string(epoch) +
                              ", step " + std::to_string(step) + " (lambda " + std::to_string(config.lambda) +
                              "); lower the learning rate or lambda");
      }
      opt.step(params, grads);
      ++step;
      if (hooks.on_step) hooks.on_step(step, model);
      sum.total += terms.total;
      sum.fusion += terms.fusion;
      sum.distill_m1 += terms.distill_m1;
      sum.distill_m2 += terms.distill_m2;
      ++batches;
    }
    if (!all_finite(model)) {
      throw DivergenceError(to_string(strategy) + " parameters became non-finite at epoch " + std::to_string(epoch));
    }
    const bool last = epoch + 1 == config.epochs;
    if (last || (config.diagnostics_every > 0 && (epoch + 1) % config.diagnostics_every == 0)) {
      EpochRecord r;
      r.epoch = epoch + 1;
      r.total_loss = sum.total / batches;
      r.fusion_term = sum.fusion / batches;
      r.distill_m1 = sum.distill_m1 / batches;
      r.distill_m2 = sum.distill_m2 / batches;
      const Batch full = whole(ds.train, t1, t2);
      FusionModel g = zeros_like(model);
      fusion_objective(model, full, base_options, &g);
      const GradientNorms norms = gradient_norms(g);
      r.grad_norm_m1 = norms.m1;
      r.grad_norm_m2 = norms.m2;
      r.grad_norm_head = norms.head;
      const Matrix logits = fusion_logits(model, ds.train.x_m1, ds.train.x_m2);
      r.residual = saturation_residual(logits, ds.train.labels);
      r.train_accuracy = accuracy(nn::argmax_columns<double>(logits), ds.train.labels);
      r.test_accuracy = ds.test.empty() ? 0.0 : accuracy(predict(model, ds.test), ds.test.labels);
      run.trace.push_back(r);
      if (hooks.on_epoch) hooks.on_epoch(r, model);
    }
  }

  run.train_accuracy = run.trace.back().train_accuracy;
  run.test_accuracy = run.trace.back().test_accuracy;
  if (t1 || t2) {
    const LossTerms final_terms = fusion_objective(model, whole(ds.train, t1, t2), base_options);
    if (t1) run.final_distill_m1 = final_terms.distill_m1;
    if (t2) run.final_distill_m2 = final_terms.distill_m2;
  }
  return run;
}

FusionRun train_middle_fusion_umt(const MultiModalDataset& ds, const TrainingConfig& config,
                                  const TeacherPair& teachers, const TrainHooks& hooks) {
  TrainingConfig c = config;
  c.fusion_mode = FusionMode::kMiddle;
  c.strategy = Strategy::kUmt;
  return train_fusion(ds, c, &teachers, hooks);
}

LossTerms umt_loss(const FusionModel& model, const TeacherPair& teachers, const Batch& batch, double lambda,
                   FusionModel* grad) {
  if (!(lambda >= 0)) throw ConfigError("lambda must be ≥ 0");
  const int feature_dim = static_cast<int>(model.encoder_m1.output_dim());
  check_teacher(teachers.m1, 1, model.encoder_m1.input_dim(), feature_dim);
  check_teacher(teachers.m2, 2, model.encoder_m2.input_dim(), static_cast<int>(model.encoder_m2.output_dim()));
  Batch b = batch;
  b.teacher_m1 = teachers.m1.model.encoder.forward(batch.x_m1);
  b.teacher_m2 = teachers.m2.model.encoder.forward(batch.x_m2);
  ObjectiveOptions o;
  o.lambda = lambda;
  o.distill_m1 = o.distill_m2 = true;
  return fusion_objective(model, b, o, grad);
}

// ---------------------------------------------------------------------------

namespace {

struct GradCheckFixture {
  Architecture arch;
  int input_dim;
  int classes;
  Batch batch;
  TeacherPair teachers;
};

GradCheckFixture make_fixture(GradCheckSize size) {
  GradCheckFixture f;
  Index batch = 0;
  if (size == GradCheckSize::kSmall) {
    f.arch = Architecture{5, 2, 4, 5};
    f.input_dim = 6;
    f.classes = 3;
    batch = 5;
  } else {
    f.arch = Architecture{12, 2, 8, 10};
    f.input_dim = 16;
    f.classes = 5;
    batch = 8;
  }
  Rng rng(derive_seed(20240601, "grad_check"));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Index r, Index c) {
    Matrix m(r, c);
    for (Index j = 0; j < c; ++j)
      for (Index i = 0; i < r; ++i) m(i, j) = normal(rng);
    return m;
  };
  f.batch.x_m1 = gaussian(f.input_dim, batch);
  f.batch.x_m2 = gaussian(f.input_dim, batch);
  std::uniform_int_distribution<int> label(0, f.classes - 1);
  for (Index j = 0; j < batch; ++j) f.batch.labels.push_back(label(rng));
  f.teachers.m1.model = make_uni_modal_model(f.arch, 1, f.input_dim, f.classes, rng);
  f.teachers.m2.model = make_uni_modal_model(f.arch, 2, f.input_dim, f.classes, rng);
  f.batch.teacher_m1 = f.teachers.m1.model.encoder.forward(f.batch.x_m1);
  f.batch.teacher_m2 = f.teachers.m2.model.encoder.forward(f.batch.x_m2);
  return f;
}

}  // namespace

std::vector<GradCheckCase> grad_check_suite(GradCheckSize size, const nn::GradCheckOptions& options) {
  const GradCheckFixture f = make_fixture(size);
  Rng rng(derive_seed(20240601, "grad_check_models"));
  std::vector<GradCheckCase> out;

  auto check_fusion = [&](const std::string& name, FusionModel model, const ObjectiveOptions& o, const Batch& b) {
    auto loss = [&](const FusionModel& m, FusionModel* g) { return fusion_objective(m, b, o, g).total; };
    out.push_back({name, nn::grad_check(model, loss, options)});
  };
  auto fresh = [&](FusionMode mode, bool aux) {
    return make_fusion_model(f.arch, f.input_dim, f.classes, mode, aux, rng);
  };
  auto with = [](auto mutate) {
    ObjectiveOptions o;
    mutate(o);
    return o;
  };

  for (int modality : {1, 2}) {
    UniModalModel m = make_uni_modal_model(f.arch, modality, f.input_dim, f.classes, rng);
    auto loss = [&](const UniModalModel& mm, UniModalModel* g) { return uni_modal_objective(mm, f.batch, g); };
    out.push_back({"uni_modal_m" + std::to_string(modality), nn::grad_check(m, loss, options)});
  }
  check_fusion("naive_fusion", fresh(FusionMode::kLate, false), ObjectiveOptions{}, f.batch);
  const double lambda = 0.5;
  check_fusion("umt", fresh(FusionMode::kLate, false), with([&](ObjectiveOptions& o) {
                 o.lambda = lambda;
                 o.distill_m1 = o.distill_m2 = true;
               }),
               f.batch);
  check_fusion("distill_m1_only", fresh(FusionMode::kLate, false), with([&](ObjectiveOptions& o) {
                 o.lambda = lambda;
                 o.distill_m1 = true;
               }),
               f.batch);
  check_fusion("distill_m2_only", fresh(FusionMode::kLate, false), with([&](ObjectiveOptions& o) {
                 o.lambda = lambda;
                 o.distill_m2 = true;
               }),
               f.batch);
  {
    const TeacherPair self = teachers_from_fusion(fresh(FusionMode::kLate, false));
    Batch b = f.batch;
    b.teacher_m1 = self.m1.model.encoder.forward(b.x_m1);
    b.teacher_m2 = self.m2.model.encoder.forward(b.x_m2);
    check_fusion("self_distill", fresh(FusionMode::kLate, false), with([&](ObjectiveOptions& o) {
                   o.lambda = lambda;
                   o.distill_m1 = o.distill_m2 = true;
                 }),
                 b);
  }
  {
    FusionModel m = fresh(FusionMode::kLate, false);
    m.encoder_m1 = f.teachers.m1.model.encoder;
    m.encoder_m2 = f.teachers.m2.model.encoder;
    check_fusion("pretrain_finetune", std::move(m), ObjectiveOptions{}, f.batch);
  }
  check_fusion("modality_dropout_m1", fresh(FusionMode::kLate, false), with([](ObjectiveOptions& o) {
                 o.feature_scale_m1 = 0;
                 o.feature_scale_m2 = 1.5;
               }),
               f.batch);
  check_fusion("modality_dropout_m2", fresh(FusionMode::kLate, false), with([](ObjectiveOptions& o) {
                 o.feature_scale_m1 = 1.5;
                 o.feature_scale_m2 = 0;
               }),
               f.batch);
  {
    Matrix mask(2 * f.arch.feature_dim, f.batch.size());
    std::bernoulli_distribution keep(0.5);
    for (Index j = 0; j < mask.cols(); ++j)
      for (Index i = 0; i < mask.rows(); ++i) mask(i, j) = keep(rng) ? 2.0 : 0.0;
    check_fusion("feature_dropout", fresh(FusionMode::kLate, false),
                 with([&](ObjectiveOptions& o) { o.feature_mask = &mask; }), f.batch);
  }
  check_fusion("grad_blend_simplified", fresh(FusionMode::kLate, true), with([](ObjectiveOptions& o) {
                 o.weight_fused = o.weight_m1 = o.weight_m2 = 1.0 / 3.0;
               }),
               f.batch);
  check_fusion("middle_fusion", fresh(FusionMode::kMiddle, false), ObjectiveOptions{}, f.batch);
  check_fusion("middle_fusion_umt", fresh(FusionMode::kMiddle, false), with([&](ObjectiveOptions& o) {
                 o.lambda = lambda;
                 o.distill_m1 = o.distill_m2 = true;
               }),
               f.batch);
  return out;
}

}  // namespace umt
