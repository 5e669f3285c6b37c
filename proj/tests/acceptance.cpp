// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails. Pass criterion numbers as
// arguments to run a subset.

#include "umt/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include <unistd.h>

using namespace umt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100 * v);
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

const fs::path& work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("umt_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

ExperimentSpec recipe(const std::string& name) { return load_spec(fs::path(UMT_RECIPE_DIR) / (name + ".yaml")); }

// Recipes are run at most once per process.
const ExperimentReport& report_of(const std::string& name) {
  static std::map<std::string, ExperimentReport> cache;
  auto it = cache.find(name);
  if (it != cache.end()) return it->second;
  RunOptions o;
  o.output_dir = work_dir() / name;
  o.log = &std::cerr;
  return cache.emplace(name, run_experiment(recipe(name), o)).first->second;
}

double mean_metric(const ExperimentReport& r, const std::string& run, const std::string& split,
                   const std::string& metric) {
  const auto* a = r.aggregate(run);
  if (!a || a->completed == 0) throw std::runtime_error("run '" + run + "' has no completed repetitions");
  for (const auto& m : a->mean)
    if (m.split == split && m.name == metric) return m.value;
  throw std::runtime_error("run '" + run + "' has no metric " + split + "/" + metric);
}

const RunRecord& record(const ExperimentReport& r, const std::string& run, std::uint64_t seed) {
  for (const auto& x : r.runs)
    if (x.run_name == run && x.seed == seed) return x;
  throw std::runtime_error("no record for " + run);
}

double metric(const RunRecord& r, const std::string& split, const std::string& name) {
  const auto v = r.metric(split, name);
  if (!v) throw std::runtime_error(r.run_name + " has no metric " + split + "/" + name + (r.completed ? "" : ": " + r.error));
  return *v;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::uint64_t parameter_hash(const FusionModel& model) {
  auto& m = const_cast<FusionModel&>(model);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& b : nn::parameter_blocks(m)) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(b.data());
    for (std::size_t i = 0; i < sizeof(double) * static_cast<std::size_t>(b.size()); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

// ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto start = Clock::now();
  Outcome out{true, ""};
  double worst = 0;
  std::size_t cases = 0, kinks = 0;
  for (auto size : {GradCheckSize::kSmall, GradCheckSize::kMedium}) {
    for (const auto& c : grad_check_suite(size)) {
      ++cases;
      kinks += c.report.flagged_kinks;
      worst = std::max(worst, c.report.max_relative_error);
      if (!(c.report.passed && c.report.max_relative_error < 1e-4)) {
        out.pass = false;
        out.detail += c.name + " rel err " + num(c.report.max_relative_error) + "; ";
      }
    }
  }
  const double t = seconds_since(start);
  out.pass = out.pass && t < 60;
  out.detail += std::to_string(cases) + " losses, max rel err " + num(worst) + ", " + std::to_string(kinks) +
                " kink coordinates flagged, " + num(t) + " s";
  return out;
}

Outcome objective_identity() {
  SyntheticConfig dc;
  dc.seed = derive_seed(repetition_seed(1, 0), "data");
  const auto ds = generate_dataset(dc);
  TrainingConfig tc;
  tc.epochs = 2;
  tc.diagnostics_every = 0;
  TeacherPair teachers;
  tc.seed = 11;
  teachers.m1 = train_uni_modal(1, ds, tc);
  tc.seed = 12;
  teachers.m2 = train_uni_modal(2, ds, tc);

  auto trajectory = [&](Strategy s) {
    TrainingConfig c;
    c.strategy = s;
    c.lambda = 0;
    c.epochs = 20;
    c.diagnostics_every = 0;
    c.seed = 2024;
    std::vector<std::uint64_t> hashes;
    TrainHooks hooks;
    hooks.on_step = [&](long, const FusionModel& m) { hashes.push_back(parameter_hash(m)); };
    train_fusion(ds, c, &teachers, hooks);
    return hashes;
  };
  const auto nf = trajectory(Strategy::kNaiveFusion);
  const auto umt = trajectory(Strategy::kUmt);
  std::size_t first_diff = nf.size();
  for (std::size_t i = 0; i < std::min(nf.size(), umt.size()); ++i)
    if (nf[i] != umt[i]) {
      first_diff = i;
      break;
    }
  Outcome o;
  o.pass = nf.size() == umt.size() && first_diff == nf.size() && !nf.empty();
  o.detail = "20 epochs, " + std::to_string(nf.size()) + " steps compared, " +
             (o.pass ? "all parameter hashes identical" : "first difference at step " + std::to_string(first_diff));
  return o;
}

Outcome trivial_solution_limit() {
  auto spec = recipe("table1");
  spec.name = "trivial_limit";
  spec.seeds.resize(1);
  spec.evaluation.top_k = -1;
  spec.evaluation.checkpoints = false;
  spec.evaluation.plots = false;
  RunSpec big;
  big.name = "umt_lambda_1e4";
  big.config = spec.training;
  big.config.strategy = Strategy::kUmt;
  big.config.lambda = 1e4;
  big.config.optimizer.kind = nn::OptimizerKind::kAdam;
  big.config.optimizer.learning_rate = 1e-3;
  RunSpec t1{"uni_modal_m1", spec.training}, t2{"uni_modal_m2", spec.training};
  t1.config.strategy = Strategy::kUniModalM1;
  t2.config.strategy = Strategy::kUniModalM2;
  spec.runs = {big, t1, t2};
  RunOptions opts;
  opts.write_files = false;
  opts.log = &std::cerr;
  const auto r = run_experiment(spec, opts);
  const auto seed = spec.seeds[0];
  const auto& s = record(r, "umt_lambda_1e4", seed);
  const double d_phi = spec.training.architecture.feature_dim;
  const double mse1 = metric(s, "train", "distill_m1") / d_phi;
  const double mse2 = metric(s, "train", "distill_m2") / d_phi;
  const double p1 = metric(s, "test", "probe_m1_accuracy");
  const double p2 = metric(s, "test", "probe_m2_accuracy");
  const double t1p = metric(record(r, "uni_modal_m1", seed), "test", "probe_m1_accuracy");
  const double t2p = metric(record(r, "uni_modal_m2", seed), "test", "probe_m2_accuracy");
  Outcome o;
  o.pass = mse1 < 1e-2 && mse2 < 1e-2 && p1 >= t1p - 0.02 && p2 >= t2p - 0.02;
  o.detail = "distill MSE m1 " + num(mse1) + " m2 " + num(mse2) + "; probe test m1 " + pct(p1) + " vs teacher " +
             pct(t1p) + ", m2 " + pct(p2) + " vs teacher " + pct(t2p);
  return o;
}

Outcome modality_failure() {
  const auto& r = report_of("table1");
  Outcome o{true, ""};
  std::set<std::uint64_t> seeds;
  for (const auto& x : r.runs) seeds.insert(x.seed);
  for (auto seed : seeds) {
    const auto& nf = record(r, "naive_fusion", seed);
    const double joint = metric(nf, "train", "joint_accuracy");
    const double res = metric(nf, "train", "saturation_residual");
    const double gap = metric(record(r, "uni_modal_m2", seed), "train", "probe_m2_accuracy") -
                       metric(nf, "train", "probe_m2_accuracy");
    o.pass = o.pass && joint >= 0.99 && res < 0.01 && gap >= 0.30;
    o.detail += "seed " + std::to_string(seed % 1000) + ": joint train " + pct(joint) + ", residual " + num(res) +
                ", m2 probe gap " + pct(gap) + " pts; ";
  }
  // wall time of one default naive-fusion run
  SyntheticConfig dc;
  dc.seed = derive_seed(*seeds.begin(), "data");
  const auto ds = generate_dataset(dc);
  TrainingConfig tc;
  const auto start = Clock::now();
  train_fusion(ds, tc);
  const double t = seconds_since(start);
  o.pass = o.pass && t < 300;
  o.detail += "one run " + num(t) + " s";
  return o;
}

Outcome umt_cure() {
  const auto& r = report_of("table1");
  const double joint = mean_metric(r, "umt", "test", "joint_accuracy") - mean_metric(r, "naive_fusion", "test", "joint_accuracy");
  const double probe =
      mean_metric(r, "umt", "test", "probe_m2_accuracy") - mean_metric(r, "naive_fusion", "test", "probe_m2_accuracy");
  Outcome o;
  o.pass = joint >= 0.02 && probe >= 0.15;
  o.detail = "joint test gain " + pct(joint) + " pts (need 2), m2 probe test gain " + pct(probe) + " pts (need 15)";
  return o;
}

Outcome distill_asymmetry() {
  const auto& r = report_of("table1");
  const double nf_m2 = mean_metric(r, "naive_fusion", "train", "probe_m2_accuracy");
  const double d1_m2 = mean_metric(r, "distill_m1_only", "train", "probe_m2_accuracy");
  const double nf_m1 = mean_metric(r, "naive_fusion", "train", "probe_m1_accuracy");
  const double d2_m1 = mean_metric(r, "distill_m2_only", "train", "probe_m1_accuracy");
  Outcome o;
  o.pass = d1_m2 < nf_m2 && d2_m1 < nf_m1;
  o.detail = "m2 probe train: distill_m1_only " + pct(d1_m2) + " vs naive " + pct(nf_m2) +
             "; m1 probe train: distill_m2_only " + pct(d2_m1) + " vs naive " + pct(nf_m1);
  return o;
}

// The uni-modal weak encoder's "region" extends 5 points above its mean.
constexpr double kRegionMargin = 0.05;

Outcome top_k_analysis() {
  const auto& r = report_of("table1");
  std::map<std::string, double> sum;
  std::map<std::string, int> count;
  for (const auto& t : r.top_k)
    for (const auto& c : t.comparison.candidates)
      if (c.mean) {
        sum[c.name] += *c.mean;
        ++count[c.name];
      }
  auto mean = [&](const std::string& n) {
    if (!count[n]) throw std::runtime_error("no top-K entry for " + n);
    return sum[n] / count[n];
  };
  const double nf = mean("naive_fusion"), umt = mean("umt"), uni = mean("uni_modal_m2");
  Outcome o;
  o.pass = nf < umt && umt <= uni + kRegionMargin;
  o.detail = "K=" + std::to_string(r.top_k.empty() ? 0 : r.top_k[0].comparison.classes.size()) +
             ", m2 probe on teacher top-K classes: naive " + pct(nf) + " < umt " + pct(umt) + " <= uni-modal m2 " +
             pct(uni) + " + " + pct(kRegionMargin);
  return o;
}

Outcome middle_fusion() {
  const auto& r = report_of("middle_fusion");
  const double plain = mean_metric(r, "middle_naive_fusion", "test", "joint_accuracy");
  const double umt = mean_metric(r, "middle_umt", "test", "joint_accuracy");
  Outcome o;
  o.pass = umt - plain > 0;
  o.detail = "joint test " + pct(umt) + " vs plain middle fusion " + pct(plain) + " (margin " + pct(umt - plain) + " pts)";
  return o;
}

Outcome data_statistics() {
  const int seeds = 50, n = 10000;
  const double expected = n * 0.8, sigma = std::sqrt(n * 0.2 * 0.8);
  double sum = 0, worst = 0;
  for (int s = 0; s < seeds; ++s) {
    SyntheticConfig c;
    c.single_view_fraction = 0.2;
    c.train_size = n;
    c.test_size = 1;
    c.seed = derive_seed(1, "data_statistics", static_cast<std::uint64_t>(s));
    const double mv = static_cast<double>(summarize(generate_dataset(c).train, c.num_classes).count(ViewType::kMultiView));
    sum += mv;
    worst = std::max(worst, std::abs(mv - expected) / sigma);
  }
  const double mean = sum / seeds;
  Outcome o;
  o.pass = std::abs(mean - expected) <= 0.01 * expected && worst <= 4;
  o.detail = "mean multi-view count " + num(mean) + " (target 8000 ± 80), largest deviation " + num(worst) + " sigma";
  return o;
}

Outcome determinism() {
  RunOptions o1, o2;
  o1.output_dir = work_dir() / "table2_a";
  o2.output_dir = work_dir() / "table2_b";
  o1.log = &std::cerr;
  const auto spec = recipe("table2");
  run_experiment(spec, o1);
  run_experiment(spec, o2);
  const auto a = slurp(*o1.output_dir / "results.csv");
  const auto b = slurp(*o2.output_dir / "results.csv");
  Outcome o;
  o.pass = !a.empty() && a == b && slurp(*o1.output_dir / "summary.txt") == slurp(*o2.output_dir / "summary.txt");
  o.detail = "table2 results.csv " + std::to_string(a.size()) + " bytes, " + (a == b ? "identical" : "DIFFERENT");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"objective identity", objective_identity},
      {"trivial-solution limit", trivial_solution_limit},
      {"modality failure", modality_failure},
      {"UMT cure", umt_cure},
      {"single-modality distillation asymmetry", distill_asymmetry},
      {"top-K class analysis", top_k_analysis},
      {"middle-fusion predictor distillation", middle_fusion},
      {"data generation statistics", data_statistics},
      {"determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    const auto start = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    char head[96];
    std::snprintf(head, sizeof head, "criterion %2d %s  %-40s", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str());
    lines.push_back(std::string(head) + " " + o.detail + " [" + num(seconds_since(start)) + " s]");
    std::cout << lines.back() << std::endl;
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l << "\n";
  fs::remove_all(work_dir());
  return failed == 0 ? 0 : 1;
}
