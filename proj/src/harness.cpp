#include "umt/harness.hpp"

#include "umt/nn/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace umt {

std::optional<double> RunRecord::metric(const std::string& split, const std::string& name) const {
  for (const auto& m : metrics)
    if (m.split == split && m.name == name) return m.value;
  return std::nullopt;
}

bool ExperimentReport::any_failed() const {
  for (const auto& r : runs)
    if (!r.completed) return true;
  return false;
}

const AggregateRecord* ExperimentReport::aggregate(const std::string& run_name) const {
  for (const auto& a : aggregates)
    if (a.run_name == run_name) return &a;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

Matrix scalar_tensor(double v) { return Matrix::Constant(1, 1, v); }

}  // namespace

void save_fusion_checkpoint(const FusionModel& model, const std::filesystem::path& path) {
  nn::TensorArchive a;
  a.put("meta.fusion_mode", scalar_tensor(model.mode == FusionMode::kMiddle ? 1.0 : 0.0));
  a.put("encoder_m1", model.encoder_m1);
  a.put("encoder_m2", model.encoder_m2);
  a.put("head", model.head);
  if (model.junction.size() != 0) a.put("junction", model.junction);
  if (!model.predictor.empty()) a.put("predictor", model.predictor);
  if (model.has_aux_heads()) {
    a.put("aux_m1", model.aux_m1);
    a.put("aux_m2", model.aux_m2);
  }
  a.save(path);
}

FusionModel load_fusion_checkpoint(const std::filesystem::path& path) {
  const auto a = nn::TensorArchive::load(path);
  if (!a.contains("meta.fusion_mode")) throw nn::CheckpointError(path.string() + " is not a fusion-model checkpoint");
  FusionModel m;
  m.mode = a.get("meta.fusion_mode")(0, 0) != 0 ? FusionMode::kMiddle : FusionMode::kLate;
  m.encoder_m1 = a.encoder("encoder_m1");
  m.encoder_m2 = a.encoder("encoder_m2");
  m.head = a.layer("head");
  if (a.contains("junction")) m.junction = a.get("junction");
  if (a.has_encoder("predictor")) m.predictor = a.encoder("predictor");
  if (a.contains("aux_m1.weight")) {
    m.aux_m1 = a.layer("aux_m1");
    m.aux_m2 = a.layer("aux_m2");
  }
  if (m.head.in_dim() != m.encoder_m1.output_dim() + m.encoder_m2.output_dim()) {
    throw nn::CheckpointError("checkpoint head input dim does not match the stored encoders");
  }
  return m;
}

void save_uni_modal_checkpoint(const UniModalModel& model, const std::filesystem::path& path) {
  nn::TensorArchive a;
  a.put("meta.modality", scalar_tensor(model.modality));
  a.put("encoder_m" + std::to_string(model.modality), model.encoder);
  a.put("head", model.head);
  a.save(path);
}

EncoderNet load_encoder(const std::filesystem::path& path, int modality) {
  if (modality != 1 && modality != 2) throw ConfigError("modality must be 1 or 2");
  const auto a = nn::TensorArchive::load(path);
  if (modality == 1 && a.contains("meta.fusion_mode") && a.get("meta.fusion_mode")(0, 0) != 0) {
    throw nn::CheckpointError("the m1 encoder of a middle-fusion checkpoint depends on the m2 stream; probe modality 2");
  }
  const std::string prefix = "encoder_m" + std::to_string(modality);
  if (!a.has_encoder(prefix)) throw nn::CheckpointError(path.string() + " holds no " + prefix);
  return a.encoder(prefix);
}

// ---------------------------------------------------------------------------
// Running an experiment

namespace {

struct SeedContext {
  std::uint64_t seed = 0;
  MultiModalDataset data;
  std::optional<TeacherPair> teachers;
  std::string teacher_error;
  std::optional<TeacherPair> self_teachers;
  std::string self_teacher_error;
};

double distill_lambda(const TrainingConfig& c) {
  const auto o = objective_options(c);
  return (o.distill_m1 || o.distill_m2) ? c.lambda : 0.0;
}

void add(RunRecord& r, const std::string& split, const std::string& name, double v) {
  r.metrics.push_back({split, name, v});
}

void add_per_class(RunRecord& r, const std::string& prefix, const PerClassAccuracy& pc) {
  for (std::size_t c = 0; c < pc.size(); ++c)
    if (pc[c]) add(r, "test", prefix + "_class_" + std::to_string(c), *pc[c]);
}

void add_probe(RunRecord& r, const std::string& name, const ProbeResult& p, std::span<const int> test_labels,
               int num_classes) {
  add(r, "train", name + "_accuracy", p.train_accuracy);
  add(r, "test", name + "_accuracy", p.test_accuracy);
  add_per_class(r, name, per_class_accuracy(p.test_predictions, test_labels, num_classes));
}

class Logger {
 public:
  explicit Logger(std::ostream* os) : os_(os) {}
  template <typename... Args>
  void operator()(const Args&... args) const {
    if (!os_) return;
    (*os_ << ... << args) << '\n';
    os_->flush();
  }

 private:
  std::ostream* os_;
};

void evaluate_fusion(RunRecord& r, const FusionRun& run, const MultiModalDataset& ds, const ProbeConfig& probe) {
  const int k = ds.num_classes();
  const auto& last = run.trace.back();
  add(r, "train", "joint_accuracy", run.train_accuracy);
  add(r, "test", "joint_accuracy", run.test_accuracy);
  add(r, "train", "saturation_residual", last.residual);
  add(r, "train", "grad_norm_m1", last.grad_norm_m1);
  add(r, "train", "grad_norm_m2", last.grad_norm_m2);
  add(r, "train", "grad_norm_head", last.grad_norm_head);
  if (run.final_distill_m1) add(r, "train", "distill_m1", *run.final_distill_m1);
  if (run.final_distill_m2) add(r, "train", "distill_m2", *run.final_distill_m2);

  const auto train_f = fusion_features(run.model, ds.train.x_m1, ds.train.x_m2);
  const auto test_f = fusion_features(run.model, ds.test.x_m1, ds.test.x_m2);
  // In middle fusion the m1 feature is the fused stream; it is probed as such.
  const auto p1 = linear_probe(train_f.m1, ds.train.labels, test_f.m1, ds.test.labels, k, probe);
  const auto p2 = linear_probe(train_f.m2, ds.train.labels, test_f.m2, ds.test.labels, k, probe);
  add_probe(r, "probe_m1", p1, ds.test.labels, k);
  add_probe(r, "probe_m2", p2, ds.test.labels, k);
  add_per_class(r, "joint", per_class_accuracy(predict(run.model, ds.test), ds.test.labels, k));
  r.probe_m2_per_class = per_class_accuracy(p2.test_predictions, ds.test.labels, k);
}

void evaluate_uni(RunRecord& r, const Teacher& t, const MultiModalDataset& ds, const ProbeConfig& probe) {
  const int k = ds.num_classes();
  const int s = t.model.modality;
  add(r, "train", "accuracy", t.train_accuracy);
  add(r, "test", "accuracy", t.test_accuracy);
  add(r, "train", "saturation_residual", t.trace.back().residual);
  const auto p = linear_probe(t.model.encoder, ds, s, probe);
  add_probe(r, "probe_m" + std::to_string(s), p, ds.test.labels, k);
  add_per_class(r, "accuracy", per_class_accuracy(predict(t.model, ds.test), ds.test.labels, k));
  if (s == 2) r.probe_m2_per_class = per_class_accuracy(p.test_predictions, ds.test.labels, k);
}

std::vector<AggregateRecord> aggregate(const ExperimentSpec& spec, const std::vector<RunRecord>& runs) {
  std::vector<AggregateRecord> out;
  for (const auto& rs : spec.runs) {
    AggregateRecord a;
    a.run_name = rs.name;
    a.strategy = rs.config.strategy;
    a.lambda = distill_lambda(rs.config);
    std::vector<std::pair<std::string, std::string>> order;
    std::map<std::pair<std::string, std::string>, std::vector<double>> values;
    for (const auto& r : runs) {
      if (r.run_name != rs.name || !r.completed) continue;
      ++a.completed;
      for (const auto& m : r.metrics) {
        auto key = std::make_pair(m.split, m.name);
        if (!values.count(key)) order.push_back(key);
        values[key].push_back(m.value);
      }
    }
    for (const auto& key : order) {
      const auto& v = values[key];
      double mean = 0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double ss = 0;
      for (double x : v) ss += (x - mean) * (x - mean);
      const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
      a.mean.push_back({key.first, key.second, mean});
      a.stddev.push_back({key.first, key.second, sd});
    }
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentSpec& spec, const RunOptions& options) {
  spec.validate();
  const Logger log(options.log);
  ExperimentReport report;
  report.name = spec.name;
  report.output_dir = options.output_dir ? *options.output_dir : spec.output_dir;

  bool want_teachers = spec.evaluation.top_k >= 0;
  bool want_self_teacher = false;
  for (const auto& r : spec.runs) {
    want_teachers = want_teachers || needs_uni_modal_teachers(r.config.strategy) || is_uni_modal(r.config.strategy);
    want_self_teacher = want_self_teacher || needs_fusion_teacher(r.config.strategy);
  }
  const int k = spec.data.num_classes;
  const int top_k = spec.evaluation.top_k == 0 ? default_top_k(k) : spec.evaluation.top_k;
  const auto ckpt_root = report.output_dir / "checkpoints";

  for (std::size_t rep = 0; rep < spec.seeds.size(); ++rep) {
    SeedContext ctx;
    ctx.seed = spec.seeds[rep];
    SyntheticConfig dc = spec.data;
    dc.seed = derive_seed(ctx.seed, "data");
    ctx.data = generate_dataset(dc);
    const auto& ds = ctx.data;
    const auto seed_dir = ckpt_root / ("seed_" + std::to_string(ctx.seed));
    log("[", spec.name, "] seed ", ctx.seed, " (", rep + 1, "/", spec.seeds.size(), ")");

    if (want_teachers) {
      try {
        TeacherPair t;
        TrainingConfig tc = spec.teacher;
        tc.strategy = Strategy::kUniModalM1;
        tc.seed = derive_seed(ctx.seed, "teacher_m1");
        t.m1 = train_uni_modal(1, ds, tc);
        tc.strategy = Strategy::kUniModalM2;
        tc.seed = derive_seed(ctx.seed, "teacher_m2");
        t.m2 = train_uni_modal(2, ds, tc);
        log("  teachers: m1 train ", t.m1.train_accuracy, " test ", t.m1.test_accuracy, "; m2 train ",
            t.m2.train_accuracy, " test ", t.m2.test_accuracy);
        if (options.write_files && spec.evaluation.checkpoints) {
          save_uni_modal_checkpoint(t.m1.model, seed_dir / "teacher_m1.ckpt");
          save_uni_modal_checkpoint(t.m2.model, seed_dir / "teacher_m2.ckpt");
        }
        ctx.teachers = std::move(t);
      } catch (const std::exception& e) {
        ctx.teacher_error = std::string("teacher training failed: ") + e.what();
        log("  ", ctx.teacher_error);
      }
    }
    if (want_self_teacher) {
      try {
        TrainingConfig tc = spec.training;
        tc.strategy = Strategy::kNaiveFusion;
        tc.fusion_mode = FusionMode::kLate;
        tc.seed = derive_seed(ctx.seed, "self_distill_teacher");
        ctx.self_teachers = teachers_from_fusion(train_fusion(ds, tc).model);
      } catch (const std::exception& e) {
        ctx.self_teacher_error = std::string("self-distillation teacher failed: ") + e.what();
        log("  ", ctx.self_teacher_error);
      }
    }

    const std::size_t first_record = report.runs.size();
    for (const auto& rs : spec.runs) {
      RunRecord r;
      r.run_name = rs.name;
      r.strategy = rs.config.strategy;
      r.seed = ctx.seed;
      r.lambda = distill_lambda(rs.config);
      try {
        const Strategy s = rs.config.strategy;
        if ((is_uni_modal(s) || needs_uni_modal_teachers(s)) && !ctx.teachers) throw std::runtime_error(ctx.teacher_error);
        if (needs_fusion_teacher(s) && !ctx.self_teachers) throw std::runtime_error(ctx.self_teacher_error);
        if (is_uni_modal(s)) {
          const Teacher& t = (*ctx.teachers)[s == Strategy::kUniModalM1 ? 1 : 2];
          evaluate_uni(r, t, ds, spec.evaluation.probe);
          r.trace = t.trace;
        } else {
          TrainingConfig tc = rs.config;
          tc.seed = derive_seed(ctx.seed, "student");
          const TeacherPair* teachers = needs_fusion_teacher(s) ? &*ctx.self_teachers
                                        : ctx.teachers          ? &*ctx.teachers
                                                                : nullptr;
          FusionRun run = train_fusion(ds, tc, teachers);
          evaluate_fusion(r, run, ds, spec.evaluation.probe);
          r.trace = std::move(run.trace);
          if (options.write_files && spec.evaluation.checkpoints) {
            save_fusion_checkpoint(run.model, seed_dir / (rs.name + ".ckpt"));
          }
        }
        r.completed = true;
        std::ostringstream line;
        line << std::fixed << std::setprecision(2) << "  " << rs.name << ":";
        for (const auto& m : r.metrics) {
          if (m.name.find("_class_") != std::string::npos || m.name.find("grad_norm") != std::string::npos) continue;
          line << " " << m.name << "/" << m.split << "=" << 100 * m.value;
        }
        log(line.str());
      } catch (const std::exception& e) {
        r.completed = false;
        r.metrics.clear();
        r.error = e.what();
        log("  ", rs.name, ": FAILED: ", r.error);
      }
      report.runs.push_back(std::move(r));
    }

    if (top_k > 0 && ctx.teachers) {
      const auto reference =
          per_class_accuracy(predict(ctx.teachers->m1.model, ds.test), ds.test.labels, ds.num_classes());
      std::vector<std::pair<std::string, PerClassAccuracy>> candidates;
      std::vector<RunRecord*> owners;
      for (std::size_t i = first_record; i < report.runs.size(); ++i) {
        auto& r = report.runs[i];
        if (!r.completed || r.probe_m2_per_class.empty()) continue;
        candidates.emplace_back(r.run_name, r.probe_m2_per_class);
        owners.push_back(&r);
      }
      TopKRecord rec;
      rec.seed = ctx.seed;
      rec.comparison = top_k_class_comparison(reference, candidates, top_k, "teacher_m1");
      for (std::size_t i = 0; i < owners.size(); ++i) {
        if (rec.comparison.candidates[i].mean) add(*owners[i], "test", "topk_probe_m2_mean", *rec.comparison.candidates[i].mean);
      }
      report.top_k.push_back(std::move(rec));
    }
  }

  report.aggregates = aggregate(spec, report.runs);

  if (options.write_files) {
    std::filesystem::create_directories(report.output_dir);
    {
      std::ofstream os(report.output_dir / "results.csv");
      write_csv(report, os);
    }
    {
      std::ofstream os(report.output_dir / "summary.txt");
      write_summary(report, os);
    }
    {
      std::ofstream os(report.output_dir / "spec_resolved.yaml");
      os << to_yaml(spec);
    }
    if (spec.evaluation.plots) {
      const auto plots = report.output_dir / "plots";
      for (PlotKind kind : {PlotKind::kTrainingCurves, PlotKind::kPerClassBars, PlotKind::kProbeTable}) {
        if (kind == PlotKind::kPerClassBars && report.top_k.empty()) continue;
        emit_plot_data(report, kind, plots);
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

void csv_field(std::ostream& os, const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) {
    os << s;
    return;
  }
  os << '"';
  for (char c : s) os << (c == '"' ? "\"\"" : std::string(1, c));
  os << '"';
}

void csv_row(std::ostream& os, const std::string& run, Strategy s, const std::string& seed, double lambda,
             const MetricRow& m) {
  csv_field(os, run);
  os << ',' << to_string(s) << ',' << seed << ',' << format_double(lambda) << ',' << m.split << ',' << m.name << ','
     << format_double(m.value) << '\n';
}

}  // namespace

void write_csv(const ExperimentReport& report, std::ostream& os) {
  os << "run_name,strategy,seed,lambda,split,metric_name,value\n";
  for (const auto& r : report.runs) {
    const std::string seed = std::to_string(r.seed);
    if (!r.completed) {
      csv_row(os, r.run_name, r.strategy, seed, r.lambda, {"train", "run_failed", 1.0});
      continue;
    }
    for (const auto& m : r.metrics) csv_row(os, r.run_name, r.strategy, seed, r.lambda, m);
  }
  for (const auto& a : report.aggregates) {
    for (const auto& m : a.mean) csv_row(os, a.run_name, a.strategy, "mean", a.lambda, m);
    for (const auto& m : a.stddev) csv_row(os, a.run_name, a.strategy, "std", a.lambda, m);
  }
}

void write_summary(const ExperimentReport& report, std::ostream& os) {
  os << "experiment " << report.name << "\n";
  std::size_t failed = 0;
  for (const auto& r : report.runs) failed += !r.completed;
  os << report.runs.size() << " runs, " << failed << " failed\n\n";
  os << "accuracy in %, mean ± std over completed seeds\n\n";

  const std::vector<std::pair<std::string, std::string>> columns = {
      {"joint train", "train/joint_accuracy"}, {"joint test", "test/joint_accuracy"},
      {"m1 probe train", "train/probe_m1_accuracy"}, {"m1 probe test", "test/probe_m1_accuracy"},
      {"m2 probe train", "train/probe_m2_accuracy"}, {"m2 probe test", "test/probe_m2_accuracy"},
      {"top-K m2", "test/topk_probe_m2_mean"}};
  auto lookup = [](const std::vector<MetricRow>& rows, const std::string& key) -> std::optional<double> {
    for (const auto& m : rows)
      if (m.split + "/" + m.name == key) return m.value;
    return std::nullopt;
  };
  os << std::left << std::setw(24) << "run" << std::setw(24) << "strategy";
  for (const auto& c : columns) os << std::setw(17) << c.first;
  os << "\n";
  for (const auto& a : report.aggregates) {
    os << std::setw(24) << a.run_name << std::setw(24) << to_string(a.strategy);
    for (const auto& c : columns) {
      std::string key = c.second;
      if (c.first.rfind("joint", 0) == 0 && !lookup(a.mean, key)) key.replace(key.find("joint_"), 6, "");
      const auto mean = lookup(a.mean, key);
      const auto sd = lookup(a.stddev, key);
      std::ostringstream cell;
      if (mean) cell << std::fixed << std::setprecision(2) << 100 * *mean << " ± " << 100 * sd.value_or(0.0);
      else cell << "-";
      os << std::setw(17) << cell.str();
    }
    os << "\n";
  }
  if (failed) {
    os << "\nfailures\n";
    for (const auto& r : report.runs)
      if (!r.completed) os << "  " << r.run_name << " seed " << r.seed << ": " << r.error << "\n";
  }
  for (const auto& t : report.top_k) {
    os << "\ntop-" << t.comparison.classes.size() << " classes of the m1 teacher (seed " << t.seed << "):";
    for (int c : t.comparison.classes) os << " " << c;
    os << "\n";
    for (const auto& row : t.comparison.candidates) {
      os << "  " << std::setw(24) << row.name;
      if (row.mean) os << std::fixed << std::setprecision(2) << 100 * *row.mean;
      else os << "-";
      os << "\n";
    }
  }
}

// ---------------------------------------------------------------------------
// Sweeps

SweepParameter sweep_parameter_from_string(const std::string& name) {
  if (name == "lambda") return SweepParameter::kLambda;
  if (name == "mu") return SweepParameter::kMu;
  if (name == "rho") return SweepParameter::kRho;
  throw ConfigError("unknown sweep parameter '" + name + "' (expected lambda, mu or rho)");
}

std::string to_string(SweepParameter p) {
  switch (p) {
    case SweepParameter::kLambda: return "lambda";
    case SweepParameter::kMu: return "mu";
    case SweepParameter::kRho: return "rho";
  }
  return "unknown";
}

ExperimentSpec apply_sweep_value(const ExperimentSpec& spec, SweepParameter parameter, double value) {
  ExperimentSpec s = spec;
  switch (parameter) {
    case SweepParameter::kLambda:
      s.training.lambda = value;
      for (auto& r : s.runs) r.config.lambda = value;
      break;
    case SweepParameter::kMu:
      s.data.single_view_fraction = value;
      break;
    case SweepParameter::kRho:
      s.data.strong_modality_bias = value;
      break;
  }
  s.output_dir = spec.output_dir / (to_string(parameter) + "_" + format_double(value));
  s.validate();
  return s;
}

SweepReport sweep(const ExperimentSpec& spec, SweepParameter parameter, const std::vector<double>& values,
                  const RunOptions& options) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<ExperimentSpec> specs;
  const auto base_dir = options.output_dir ? *options.output_dir : spec.output_dir;
  for (double v : values) {
    ExperimentSpec base = spec;
    base.output_dir = base_dir;
    specs.push_back(apply_sweep_value(base, parameter, v));
  }
  SweepReport out;
  out.parameter = parameter;
  out.values = values;
  for (const auto& s : specs) {
    RunOptions o = options;
    o.output_dir = s.output_dir;
    out.reports.push_back(run_experiment(s, o));
  }
  if (options.write_files) {
    std::filesystem::create_directories(base_dir);
    std::ofstream os(base_dir / ("sweep_" + to_string(parameter) + ".csv"));
    write_sweep_csv(out, os);
  }
  return out;
}

void write_sweep_csv(const SweepReport& report, std::ostream& os) {
  os << "sweep_param,sweep_value,run_name,strategy,seed,lambda,split,metric_name,value\n";
  const std::string param = to_string(report.parameter);
  for (std::size_t i = 0; i < report.reports.size(); ++i) {
    std::ostringstream body;
    write_csv(report.reports[i], body);
    std::istringstream lines(body.str());
    std::string line;
    std::getline(lines, line);  // header
    while (std::getline(lines, line)) os << param << ',' << format_double(report.values[i]) << ',' << line << '\n';
  }
}

}  // namespace umt
