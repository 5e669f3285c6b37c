#include "umt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace umt {

void ProbeConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("probe learning_rate must be > 0");
  if (max_steps < 1) throw ConfigError("probe max_steps must be >= 1");
  if (plateau_tolerance < 0) throw ConfigError("probe plateau_tolerance must be >= 0");
}

namespace {

Matrix standardized(const Matrix& f, const Vector& mean, const Vector& scale) {
  return (f.colwise() - mean).array().colwise() / scale.array();
}

}  // namespace

ProbeResult linear_probe(const Matrix& train_features, std::span<const int> train_labels,
                         const Matrix& test_features, std::span<const int> test_labels, int num_classes,
                         const ProbeConfig& config) {
  config.validate();
  if (train_features.cols() == 0) throw ConfigError("linear probe needs a non-empty train split");
  if (static_cast<Index>(train_labels.size()) != train_features.cols() ||
      static_cast<Index>(test_labels.size()) != test_features.cols()) {
    throw ShapeError("probe features and labels disagree on sample count");
  }
  if (test_features.cols() > 0 && test_features.rows() != train_features.rows()) {
    throw ShapeError("probe train and test features have different dimensions");
  }
  const Index dim = train_features.rows();
  const double n = static_cast<double>(train_features.cols());

  ProbeResult result;
  result.feature_mean = Vector::Zero(dim);
  result.feature_scale = Vector::Ones(dim);
  if (config.standardize) {
    result.feature_mean = train_features.rowwise().mean();
    const Vector var = (train_features.colwise() - result.feature_mean).array().square().rowwise().sum() / n;
    for (Index i = 0; i < dim; ++i) result.feature_scale(i) = var(i) > 1e-24 ? std::sqrt(var(i)) : 1.0;
  }
  const Matrix x = standardized(train_features, result.feature_mean, result.feature_scale);

  LinearHead head(dim, num_classes);
  Matrix d_logits;
  double previous = std::numeric_limits<double>::infinity();
  for (int step = 0; step < config.max_steps; ++step) {
    d_logits.setZero(num_classes, x.cols());
    const double loss = nn::softmax_cross_entropy<double>(head.apply(x), train_labels, &d_logits);
    result.final_loss = loss;
    if (previous - loss < config.plateau_tolerance && step > 0) break;
    previous = loss;
    head.weight.noalias() -= config.learning_rate * d_logits * x.transpose();
    head.bias -= config.learning_rate * d_logits.rowwise().sum();
    ++result.steps;
    if (config.record_trace) {
      result.train_accuracy_trace.push_back(accuracy(nn::argmax_columns<double>(head.apply(x)), train_labels));
    }
  }

  result.train_accuracy = accuracy(nn::argmax_columns<double>(head.apply(x)), train_labels);
  if (test_features.cols() > 0) {
    result.test_predictions =
        nn::argmax_columns<double>(head.apply(standardized(test_features, result.feature_mean, result.feature_scale)));
    result.test_accuracy = accuracy(result.test_predictions, test_labels);
  }
  result.head = std::move(head);
  return result;
}

ProbeResult linear_probe(const EncoderNet& encoder, const MultiModalDataset& ds, int modality,
                         const ProbeConfig& config) {
  if (modality != 1 && modality != 2) throw ConfigError("modality must be 1 or 2");
  if (ds.train.empty()) throw ConfigError("linear probe needs a non-empty train split");
  auto result = linear_probe(encoder.forward(ds.train.inputs(modality)), ds.train.labels,
                             encoder.forward(ds.test.inputs(modality)), ds.test.labels, ds.num_classes(), config);
  result.modality = modality;
  return result;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw ShapeError("prediction and label counts differ");
  if (labels.empty()) return 0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<int> predict(const FusionModel& model, const Split& split) {
  return nn::argmax_columns<double>(fusion_logits(model, split.x_m1, split.x_m2));
}

std::vector<int> predict(const UniModalModel& model, const Split& split) {
  return nn::argmax_columns<double>(model.head.apply(model.encoder.forward(split.inputs(model.modality))));
}

PerClassAccuracy per_class_accuracy(std::span<const int> predictions, std::span<const int> labels,
                                    int num_classes) {
  if (predictions.size() != labels.size()) throw ShapeError("prediction and label counts differ");
  std::vector<std::size_t> hits(static_cast<std::size_t>(num_classes)), totals(hits.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes) throw std::out_of_range("label " + std::to_string(y) + " out of range");
    ++totals[static_cast<std::size_t>(y)];
    hits[static_cast<std::size_t>(y)] += predictions[i] == y;
  }
  PerClassAccuracy out(hits.size());
  for (std::size_t c = 0; c < hits.size(); ++c) {
    if (totals[c] > 0) out[c] = static_cast<double>(hits[c]) / static_cast<double>(totals[c]);
  }
  return out;
}

std::optional<double> defined_mean(const PerClassAccuracy& values) {
  double sum = 0;
  int count = 0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return sum / count;
}

int default_top_k(int num_classes) { return std::min(num_classes, std::max(3, num_classes / 4)); }

TopKComparison top_k_class_comparison(const PerClassAccuracy& reference,
                                      const std::vector<std::pair<std::string, PerClassAccuracy>>& candidates,
                                      int k, const std::string& reference_name) {
  const int num_classes = static_cast<int>(reference.size());
  if (k < 1) throw ConfigError("top-K needs K >= 1");
  if (k > num_classes) {
    throw ConfigError("top-K with K=" + std::to_string(k) + " exceeds the class count " + std::to_string(num_classes));
  }
  for (const auto& [name, values] : candidates) {
    if (values.size() != reference.size()) {
      throw ShapeError("candidate '" + name + "' has " + std::to_string(values.size()) + " classes, reference has " +
                       std::to_string(num_classes));
    }
  }
  std::vector<int> order;
  for (int c = 0; c < num_classes; ++c)
    if (reference[static_cast<std::size_t>(c)]) order.push_back(c);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return *reference[static_cast<std::size_t>(a)] > *reference[static_cast<std::size_t>(b)];
  });
  if (static_cast<int>(order.size()) > k) order.resize(static_cast<std::size_t>(k));

  auto restrict = [&](const std::string& name, const PerClassAccuracy& values) {
    TopKRow row;
    row.name = name;
    for (int c : order) row.accuracies.push_back(values[static_cast<std::size_t>(c)]);
    row.mean = defined_mean(row.accuracies);
    return row;
  };
  TopKComparison out;
  out.classes = order;
  out.reference = restrict(reference_name, reference);
  for (const auto& [name, values] : candidates) out.candidates.push_back(restrict(name, values));
  return out;
}

double saturation_residual(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != logits.cols()) throw ShapeError("label count does not match logits");
  if (labels.empty()) return 0;
  double sum = 0;
  for (Index j = 0; j < logits.cols(); ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    if (y < 0 || y >= logits.rows()) throw std::out_of_range("label " + std::to_string(y) + " out of range");
    const double mx = logits.col(j).maxCoeff();
    const double z = (logits.col(j).array() - mx).exp().sum();
    const double p = std::exp(logits(y, j) - mx) / z;
    sum += 1.0 - p;
  }
  return sum / static_cast<double>(logits.cols());
}

double saturation_residual(const FusionModel& model, const Split& split) {
  return saturation_residual(fusion_logits(model, split.x_m1, split.x_m2), split.labels);
}

GradientNorms gradient_norms(FusionModel& g) {
  GradientNorms n;
  std::vector<ParamBlock> b1, b2, bh;
  nn::append_blocks(b1, g.encoder_m1);
  nn::append_blocks(b2, g.encoder_m2);
  nn::append_blocks(bh, g.head);
  n.m1 = std::sqrt(nn::squared_norm(b1));
  n.m2 = std::sqrt(nn::squared_norm(b2));
  n.head = std::sqrt(nn::squared_norm(bh));
  n.total = std::sqrt(nn::squared_norm(nn::parameter_blocks(g)));
  return n;
}

GradientNorms modality_gradient_norms(const FusionModel& model, const Batch& batch, const ObjectiveOptions& options) {
  FusionModel g = zeros_like(model);
  fusion_objective(model, batch, options, &g);
  return gradient_norms(g);
}

}  // namespace umt
