#pragma once

#include "umt/evaluation.hpp"
#include "umt/strategies.hpp"
#include "umt/synthetic_data.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace umt {

struct RunSpec {
  std::string name;
  TrainingConfig config;

  bool operator==(const RunSpec&) const = default;
};

struct EvaluationPlan {
  ProbeConfig probe;
  int top_k = 0;  // 0 selects default_top_k(num_classes)
  bool checkpoints = true;
  bool plots = true;

  bool operator==(const EvaluationPlan& o) const {
    return probe.learning_rate == o.probe.learning_rate && probe.max_steps == o.probe.max_steps &&
           probe.plateau_tolerance == o.probe.plateau_tolerance && probe.standardize == o.probe.standardize &&
           top_k == o.top_k && checkpoints == o.checkpoints && plots == o.plots;
  }
};

struct ExperimentSpec {
  std::string name;
  std::filesystem::path output_dir;
  std::uint64_t master_seed = 1;
  std::vector<std::uint64_t> seeds;  // one per repetition
  SyntheticConfig data;
  TrainingConfig training;  // defaults every run starts from
  TrainingConfig teacher;   // uni-modal teachers (and uni-modal runs)
  std::vector<RunSpec> runs;
  EvaluationPlan evaluation;

  /// Throws ConfigError naming the violated invariant.
  void validate() const;
  bool operator==(const ExperimentSpec&) const = default;
};

/// Seed of repetition r when the experiment lists no explicit seeds.
std::uint64_t repetition_seed(std::uint64_t master_seed, int repetition);

ExperimentSpec load_spec(const std::filesystem::path& path);
/// `origin` names the source in error messages.
ExperimentSpec parse_spec(const std::string& text, const std::string& origin = "<string>");
/// Fully resolved spec (every default written out) in the same grammar.
std::string to_yaml(const ExperimentSpec& spec);

// ---------------------------------------------------------------------------

struct MetricRow {
  std::string split;  // train | test
  std::string name;
  double value = 0;
};

struct RunRecord {
  std::string run_name;
  Strategy strategy = Strategy::kNaiveFusion;
  std::uint64_t seed = 0;
  double lambda = 0;  // weight of the distillation term actually optimized
  bool completed = false;
  std::string error;
  std::vector<MetricRow> metrics;
  DiagnosticsTrace trace;
  PerClassAccuracy probe_m2_per_class;  // weak-encoder probe, test split

  std::optional<double> metric(const std::string& split, const std::string& name) const;
};

struct AggregateRecord {
  std::string run_name;
  Strategy strategy = Strategy::kNaiveFusion;
  double lambda = 0;
  int completed = 0;
  std::vector<MetricRow> mean;
  std::vector<MetricRow> stddev;  // sample standard deviation, 0 for a single run
};

struct TopKRecord {
  std::uint64_t seed = 0;
  TopKComparison comparison;
};

struct ExperimentReport {
  std::string name;
  std::filesystem::path output_dir;
  std::vector<RunRecord> runs;  // declaration order within each seed, seeds in order
  std::vector<AggregateRecord> aggregates;
  std::vector<TopKRecord> top_k;

  bool any_failed() const;
  const AggregateRecord* aggregate(const std::string& run_name) const;
};

struct RunOptions {
  std::optional<std::filesystem::path> output_dir;  // overrides ExperimentSpec::output_dir
  std::ostream* log = nullptr;
  bool write_files = true;
};

ExperimentReport run_experiment(const ExperimentSpec& spec, const RunOptions& options = {});

/// Long-format CSV: run_name,strategy,seed,lambda,split,metric_name,value.
/// Aggregate rows carry "mean" or "std" in the seed column.
void write_csv(const ExperimentReport& report, std::ostream& os);
void write_summary(const ExperimentReport& report, std::ostream& os);

enum class SweepParameter { kLambda, kMu, kRho };

SweepParameter sweep_parameter_from_string(const std::string& name);
std::string to_string(SweepParameter p);

struct SweepReport {
  SweepParameter parameter = SweepParameter::kLambda;
  std::vector<double> values;
  std::vector<ExperimentReport> reports;
};

ExperimentSpec apply_sweep_value(const ExperimentSpec& spec, SweepParameter parameter, double value);
SweepReport sweep(const ExperimentSpec& spec, SweepParameter parameter, const std::vector<double>& values,
                  const RunOptions& options = {});
void write_sweep_csv(const SweepReport& report, std::ostream& os);

enum class PlotKind { kTrainingCurves, kPerClassBars, kProbeTable };

PlotKind plot_kind_from_string(const std::string& name);
std::string to_string(PlotKind kind);

/// Writes plot-ready tables (and an SVG chart) under `dir`; returns the files written.
std::vector<std::filesystem::path> emit_plot_data(const ExperimentReport& report, PlotKind kind,
                                                  const std::filesystem::path& dir, bool svg = true);

/// Training-curve table of one run: epoch, fusion_term, distill_m1, distill_m2,
/// residual, grad_norm_m1, grad_norm_m2, train_acc, test_acc.
void write_training_curves(const DiagnosticsTrace& trace, std::ostream& os);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

// ---------------------------------------------------------------------------
// Checkpoints of trained models

void save_fusion_checkpoint(const FusionModel& model, const std::filesystem::path& path);
FusionModel load_fusion_checkpoint(const std::filesystem::path& path);
void save_uni_modal_checkpoint(const UniModalModel& model, const std::filesystem::path& path);

/// Encoder of one modality from any checkpoint written above.
EncoderNet load_encoder(const std::filesystem::path& path, int modality);

}  // namespace umt
