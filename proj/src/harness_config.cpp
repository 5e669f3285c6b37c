#include "umt/harness.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace umt {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::uint64_t repetition_seed(std::uint64_t master_seed, int repetition) {
  return derive_seed(master_seed, "repetition", static_cast<std::uint64_t>(repetition));
}

namespace {

class SpecReader {
 public:
  explicit SpecReader(std::string origin) : origin_(std::move(origin)) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& field, const std::string& message) const {
    std::string where = origin_;
    if (node.IsDefined() && node.Mark().line >= 0) where += ":" + std::to_string(node.Mark().line + 1);
    throw ConfigError(where + ": field '" + field + "': " + message);
  }

  template <typename T>
  T get(const YAML::Node& node, const std::string& field, const char* expected) const {
    if (!node.IsScalar()) fail(node, field, std::string("expected ") + expected);
    try {
      return node.as<T>();
    } catch (const YAML::Exception&) {
      fail(node, field, std::string("expected ") + expected + ", got '" + node.Scalar() + "'");
    }
  }

  double number(const YAML::Node& n, const std::string& f) const { return get<double>(n, f, "a number"); }
  int integer(const YAML::Node& n, const std::string& f) const { return get<int>(n, f, "an integer"); }
  std::uint64_t seed(const YAML::Node& n, const std::string& f) const {
    return get<std::uint64_t>(n, f, "a non-negative 64-bit integer");
  }
  bool boolean(const YAML::Node& n, const std::string& f) const { return get<bool>(n, f, "true or false"); }
  std::string text(const YAML::Node& n, const std::string& f) const { return get<std::string>(n, f, "a string"); }

  void expect_map(const YAML::Node& node, const std::string& field) const {
    if (!node.IsMap()) fail(node, field, "expected a mapping");
  }

  void check_keys(const YAML::Node& node, const std::string& context, const std::set<std::string>& allowed) const {
    expect_map(node, context);
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) {
        std::string list;
        for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
        fail(kv.first, context.empty() ? key : context + "." + key, "unknown key (allowed: " + list + ")");
      }
    }
  }

  template <typename Fn>
  void with_context(const YAML::Node& node, const std::string& field, Fn&& fn) const {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      fail(node, field, e.what());
    }
  }

  void read_data(const YAML::Node& n, SyntheticConfig& c) const {
    check_keys(n, "data",
               {"num_classes", "input_dim", "mu", "rho", "feature_strength", "weak_signal_scale", "noise_std",
                "distractor_count", "train_size", "test_size"});
    if (n["num_classes"]) c.num_classes = integer(n["num_classes"], "data.num_classes");
    if (n["input_dim"]) c.input_dim = integer(n["input_dim"], "data.input_dim");
    if (n["mu"]) c.single_view_fraction = number(n["mu"], "data.mu");
    if (n["rho"]) c.strong_modality_bias = number(n["rho"], "data.rho");
    if (n["feature_strength"]) c.feature_strength = number(n["feature_strength"], "data.feature_strength");
    if (n["weak_signal_scale"]) c.weak_signal_scale = number(n["weak_signal_scale"], "data.weak_signal_scale");
    if (n["noise_std"]) c.noise_std = number(n["noise_std"], "data.noise_std");
    if (n["distractor_count"]) c.distractor_count = integer(n["distractor_count"], "data.distractor_count");
    if (n["train_size"]) c.train_size = integer(n["train_size"], "data.train_size");
    if (n["test_size"]) c.test_size = integer(n["test_size"], "data.test_size");
  }

  void read_model(const YAML::Node& n, Architecture& a) const {
    check_keys(n, "model", {"hidden_width", "hidden_layers", "feature_dim", "predictor_width"});
    if (n["hidden_width"]) a.hidden_width = integer(n["hidden_width"], "model.hidden_width");
    if (n["hidden_layers"]) a.hidden_layers = integer(n["hidden_layers"], "model.hidden_layers");
    if (n["feature_dim"]) a.feature_dim = integer(n["feature_dim"], "model.feature_dim");
    if (n["predictor_width"]) a.predictor_width = integer(n["predictor_width"], "model.predictor_width");
  }

  void read_optimizer(const YAML::Node& n, const std::string& ctx, nn::OptimizerSpec& o) const {
    check_keys(n, ctx,
               {"kind", "learning_rate", "momentum", "beta1", "beta2", "epsilon", "decay_factor", "decay_every"});
    if (n["kind"]) {
      const auto& k = n["kind"];
      with_context(k, ctx + ".kind", [&] { o.kind = nn::optimizer_kind_from_string(text(k, ctx + ".kind")); });
    }
    if (n["learning_rate"]) o.learning_rate = number(n["learning_rate"], ctx + ".learning_rate");
    if (n["momentum"]) o.momentum = number(n["momentum"], ctx + ".momentum");
    if (n["beta1"]) o.beta1 = number(n["beta1"], ctx + ".beta1");
    if (n["beta2"]) o.beta2 = number(n["beta2"], ctx + ".beta2");
    if (n["epsilon"]) o.epsilon = number(n["epsilon"], ctx + ".epsilon");
    if (n["decay_factor"]) o.decay_factor = number(n["decay_factor"], ctx + ".decay_factor");
    if (n["decay_every"]) o.decay_every = integer(n["decay_every"], ctx + ".decay_every");
  }

  // Keys shared by the training defaults, the teacher section and each run.
  static std::set<std::string> training_keys() {
    return {"epochs",         "batch_size",           "lambda",      "optimizer",        "modality_dropout_prob",
            "feature_dropout_prob", "blend_weights", "diagnostics_every", "fusion_mode"};
  }

  void read_training(const YAML::Node& n, const std::string& ctx, TrainingConfig& c) const {
    if (n["epochs"]) c.epochs = integer(n["epochs"], ctx + ".epochs");
    if (n["batch_size"]) c.batch_size = integer(n["batch_size"], ctx + ".batch_size");
    if (n["lambda"]) c.lambda = number(n["lambda"], ctx + ".lambda");
    if (n["optimizer"]) read_optimizer(n["optimizer"], ctx + ".optimizer", c.optimizer);
    if (n["modality_dropout_prob"]) {
      c.modality_dropout_prob = number(n["modality_dropout_prob"], ctx + ".modality_dropout_prob");
    }
    if (n["feature_dropout_prob"]) {
      c.feature_dropout_prob = number(n["feature_dropout_prob"], ctx + ".feature_dropout_prob");
    }
    if (n["blend_weights"]) {
      const auto& b = n["blend_weights"];
      check_keys(b, ctx + ".blend_weights", {"m1", "m2", "fused"});
      if (b["m1"]) c.blend_weight_m1 = number(b["m1"], ctx + ".blend_weights.m1");
      if (b["m2"]) c.blend_weight_m2 = number(b["m2"], ctx + ".blend_weights.m2");
      if (b["fused"]) c.blend_weight_fused = number(b["fused"], ctx + ".blend_weights.fused");
    }
    if (n["diagnostics_every"]) c.diagnostics_every = integer(n["diagnostics_every"], ctx + ".diagnostics_every");
    if (n["fusion_mode"]) {
      const auto& m = n["fusion_mode"];
      with_context(m, ctx + ".fusion_mode", [&] { c.fusion_mode = fusion_mode_from_string(text(m, ctx + ".fusion_mode")); });
    }
  }

  void read_evaluation(const YAML::Node& n, EvaluationPlan& e) const {
    check_keys(n, "evaluation", {"probe", "top_k", "checkpoints", "plots"});
    if (n["probe"]) {
      const auto& p = n["probe"];
      check_keys(p, "evaluation.probe", {"learning_rate", "max_steps", "plateau_tolerance", "standardize"});
      if (p["learning_rate"]) e.probe.learning_rate = number(p["learning_rate"], "evaluation.probe.learning_rate");
      if (p["max_steps"]) e.probe.max_steps = integer(p["max_steps"], "evaluation.probe.max_steps");
      if (p["plateau_tolerance"]) {
        e.probe.plateau_tolerance = number(p["plateau_tolerance"], "evaluation.probe.plateau_tolerance");
      }
      if (p["standardize"]) e.probe.standardize = boolean(p["standardize"], "evaluation.probe.standardize");
    }
    if (n["top_k"]) e.top_k = integer(n["top_k"], "evaluation.top_k");
    if (n["checkpoints"]) e.checkpoints = boolean(n["checkpoints"], "evaluation.checkpoints");
    if (n["plots"]) e.plots = boolean(n["plots"], "evaluation.plots");
  }

  ExperimentSpec read(const YAML::Node& root) const {
    check_keys(root, "",
               {"name", "output_dir", "master_seed", "repetitions", "seeds", "data", "model", "training", "teacher",
                "evaluation", "runs"});
    ExperimentSpec spec;
    if (!root["name"]) fail(root, "name", "missing");
    spec.name = text(root["name"], "name");
    spec.output_dir = root["output_dir"] ? text(root["output_dir"], "output_dir") : "results/" + spec.name;
    if (root["master_seed"]) spec.master_seed = seed(root["master_seed"], "master_seed");

    int repetitions = -1;
    if (root["repetitions"]) repetitions = integer(root["repetitions"], "repetitions");
    if (root["seeds"]) {
      const auto& s = root["seeds"];
      if (!s.IsSequence()) fail(s, "seeds", "expected a list of integers");
      for (std::size_t i = 0; i < s.size(); ++i) spec.seeds.push_back(seed(s[i], "seeds[" + std::to_string(i) + "]"));
      if (repetitions >= 0 && repetitions != static_cast<int>(spec.seeds.size())) {
        fail(root["repetitions"], "repetitions",
             "is " + std::to_string(repetitions) + " but " + std::to_string(spec.seeds.size()) + " seeds are listed");
      }
    } else {
      if (repetitions < 0) repetitions = 1;
      if (repetitions < 1) fail(root["repetitions"], "repetitions", "must be ≥ 1");
      for (int r = 0; r < repetitions; ++r) spec.seeds.push_back(repetition_seed(spec.master_seed, r));
    }

    if (root["data"]) read_data(root["data"], spec.data);
    Architecture arch;
    if (root["model"]) read_model(root["model"], arch);

    spec.training.architecture = arch;
    if (root["training"]) {
      check_keys(root["training"], "training", training_keys());
      read_training(root["training"], "training", spec.training);
    }
    spec.teacher = spec.training;
    spec.teacher.strategy = Strategy::kUniModalM1;
    spec.teacher.fusion_mode = FusionMode::kLate;
    spec.teacher.lambda = 0;
    if (root["teacher"]) {
      check_keys(root["teacher"], "teacher", {"epochs", "batch_size", "optimizer", "diagnostics_every"});
      read_training(root["teacher"], "teacher", spec.teacher);
    }
    if (root["evaluation"]) read_evaluation(root["evaluation"], spec.evaluation);

    if (!root["runs"]) fail(root, "runs", "missing");
    const auto& runs = root["runs"];
    if (!runs.IsSequence()) fail(runs, "runs", "expected a list of runs");
    auto run_keys = training_keys();
    run_keys.insert("name");
    run_keys.insert("strategy");
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto& r = runs[i];
      const std::string ctx = "runs[" + std::to_string(i) + "]";
      check_keys(r, ctx, run_keys);
      RunSpec run;
      run.config = spec.training;
      if (!r["strategy"]) fail(r, ctx + ".strategy", "missing");
      with_context(r["strategy"], ctx + ".strategy",
                   [&] { run.config.strategy = strategy_from_string(text(r["strategy"], ctx + ".strategy")); });
      run.name = r["name"] ? text(r["name"], ctx + ".name") : to_string(run.config.strategy);
      read_training(r, ctx, run.config);
      spec.runs.push_back(std::move(run));
    }
    return spec;
  }

 private:
  std::string origin_;
};

bool safe_name(const std::string& s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-' ||
           c == '.';
  });
}

}  // namespace

void ExperimentSpec::validate() const {
  if (!safe_name(name)) throw ConfigError("name must be non-empty and use only letters, digits, '_', '-', '.'");
  if (runs.empty()) throw ConfigError("runs must not be empty");
  if (seeds.empty()) throw ConfigError("at least one repetition seed is required");
  std::set<std::uint64_t> seen_seeds;
  for (auto s : seeds)
    if (!seen_seeds.insert(s).second) throw ConfigError("seeds must be distinct; duplicate seed " + std::to_string(s));
  std::set<std::string> names;
  std::vector<std::string> duplicates;
  for (const auto& r : runs) {
    if (!safe_name(r.name)) {
      throw ConfigError("run name '" + r.name + "' must use only letters, digits, '_', '-', '.'");
    }
    if (!names.insert(r.name).second) duplicates.push_back(r.name);
  }
  if (!duplicates.empty()) {
    std::string list;
    for (const auto& d : duplicates) list += (list.empty() ? "" : ", ") + d;
    throw ConfigError("duplicate run names: " + list);
  }
  data.validate();
  try {
    training.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("training: ") + e.what());
  }
  try {
    teacher.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("teacher: ") + e.what());
  }
  for (const auto& r : runs) {
    try {
      r.config.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("run '" + r.name + "': " + e.what());
    }
    if (r.config.architecture != teacher.architecture) {
      throw ConfigError("run '" + r.name + "': architecture differs from the teachers'");
    }
  }
  evaluation.probe.validate();
  if (evaluation.top_k < -1 || evaluation.top_k > data.num_classes) {
    throw ConfigError("evaluation.top_k must be -1 (off), 0 (default) or in [1, num_classes]");
  }
}

ExperimentSpec parse_spec(const std::string& text, const std::string& origin) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(origin + ":" + std::to_string(e.mark.line + 1) + ": parse error: " + e.msg);
  }
  if (!root.IsMap()) throw ConfigError(origin + ": expected a mapping at the top level");
  ExperimentSpec spec = SpecReader(origin).read(root);
  spec.validate();
  return spec;
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read spec file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_spec(ss.str(), path.string());
}

namespace {

void emit(YAML::Emitter& out, const std::string& key, double v) { out << YAML::Key << key << YAML::Value << format_double(v); }
void emit(YAML::Emitter& out, const std::string& key, int v) { out << YAML::Key << key << YAML::Value << v; }
void emit(YAML::Emitter& out, const std::string& key, const std::string& v) {
  out << YAML::Key << key << YAML::Value << v;
}

void emit_optimizer(YAML::Emitter& out, const nn::OptimizerSpec& o) {
  out << YAML::Key << "optimizer" << YAML::Value << YAML::BeginMap;
  emit(out, "kind", nn::to_string(o.kind));
  emit(out, "learning_rate", o.learning_rate);
  emit(out, "momentum", o.momentum);
  emit(out, "beta1", o.beta1);
  emit(out, "beta2", o.beta2);
  emit(out, "epsilon", o.epsilon);
  emit(out, "decay_factor", o.decay_factor);
  emit(out, "decay_every", o.decay_every);
  out << YAML::EndMap;
}

void emit_training(YAML::Emitter& out, const TrainingConfig& c, bool teacher) {
  emit(out, "epochs", c.epochs);
  emit(out, "batch_size", c.batch_size);
  emit_optimizer(out, c.optimizer);
  emit(out, "diagnostics_every", c.diagnostics_every);
  if (teacher) return;
  emit(out, "lambda", c.lambda);
  emit(out, "modality_dropout_prob", c.modality_dropout_prob);
  emit(out, "feature_dropout_prob", c.feature_dropout_prob);
  out << YAML::Key << "blend_weights" << YAML::Value << YAML::BeginMap;
  emit(out, "m1", c.blend_weight_m1);
  emit(out, "m2", c.blend_weight_m2);
  emit(out, "fused", c.blend_weight_fused);
  out << YAML::EndMap;
  emit(out, "fusion_mode", to_string(c.fusion_mode));
}

}  // namespace

std::string to_yaml(const ExperimentSpec& spec) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  emit(out, "name", spec.name);
  emit(out, "output_dir", spec.output_dir.string());
  out << YAML::Key << "master_seed" << YAML::Value << spec.master_seed;
  out << YAML::Key << "seeds" << YAML::Value << YAML::Flow << spec.seeds;

  const auto& d = spec.data;
  out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  emit(out, "num_classes", d.num_classes);
  emit(out, "input_dim", d.input_dim);
  emit(out, "mu", d.single_view_fraction);
  emit(out, "rho", d.strong_modality_bias);
  emit(out, "feature_strength", d.feature_strength);
  emit(out, "weak_signal_scale", d.weak_signal_scale);
  emit(out, "noise_std", d.noise_std);
  emit(out, "distractor_count", d.distractor_count);
  emit(out, "train_size", d.train_size);
  emit(out, "test_size", d.test_size);
  out << YAML::EndMap;

  const auto& a = spec.training.architecture;
  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  emit(out, "hidden_width", a.hidden_width);
  emit(out, "hidden_layers", a.hidden_layers);
  emit(out, "feature_dim", a.feature_dim);
  emit(out, "predictor_width", a.predictor_width);
  out << YAML::EndMap;

  out << YAML::Key << "training" << YAML::Value << YAML::BeginMap;
  emit_training(out, spec.training, false);
  out << YAML::EndMap;
  out << YAML::Key << "teacher" << YAML::Value << YAML::BeginMap;
  emit_training(out, spec.teacher, true);
  out << YAML::EndMap;

  const auto& e = spec.evaluation;
  out << YAML::Key << "evaluation" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "probe" << YAML::Value << YAML::BeginMap;
  emit(out, "learning_rate", e.probe.learning_rate);
  emit(out, "max_steps", e.probe.max_steps);
  emit(out, "plateau_tolerance", e.probe.plateau_tolerance);
  out << YAML::Key << "standardize" << YAML::Value << e.probe.standardize;
  out << YAML::EndMap;
  emit(out, "top_k", e.top_k);
  out << YAML::Key << "checkpoints" << YAML::Value << e.checkpoints;
  out << YAML::Key << "plots" << YAML::Value << e.plots;
  out << YAML::EndMap;

  out << YAML::Key << "runs" << YAML::Value << YAML::BeginSeq;
  for (const auto& r : spec.runs) {
    out << YAML::BeginMap;
    emit(out, "name", r.name);
    emit(out, "strategy", to_string(r.config.strategy));
    emit_training(out, r.config, false);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace umt
