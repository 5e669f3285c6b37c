// umtlab: command-line driver for the fusion-training experiments.

#include "umt/harness.hpp"
#include "umt/nn/checkpoint.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iomanip>
#include <iostream>

namespace {

constexpr int kOk = 0;
constexpr int kRunFailed = 1;
constexpr int kConfigInvalid = 2;

int print_report(const umt::ExperimentReport& report) {
  umt::write_summary(report, std::cout);
  std::cout << "\nresults written to " << report.output_dir.string() << "\n";
  return report.any_failed() ? kRunFailed : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal fusion training lab: naive fusion, uni-modal teachers, distillation and probes"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, checkpoint_path, dataset_path, param, size = "small";
  std::vector<double> values;
  int modality = 2, repetition = 0, probe_steps = 500;
  double probe_lr = 0.1;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "run every configured strategy for every seed");
  run->add_option("spec", spec_path, "experiment spec (YAML)")->required()->check(CLI::ExistingFile);
  run->add_option("-o,--out", out_dir, "output directory (overrides the experiment spec)");
  run->add_flag("-q,--quiet", quiet, "suppress progress output");

  auto* sw = app.add_subcommand("sweep", "repeat an experiment over values of lambda, mu or rho");
  sw->add_option("spec", spec_path, "experiment spec (YAML)")->required()->check(CLI::ExistingFile);
  sw->add_option("--param", param, "lambda | mu | rho")->required();
  sw->add_option("--values", values, "comma-separated values")->required()->delimiter(',');
  sw->add_option("-o,--out", out_dir, "output directory (overrides the experiment spec)");
  sw->add_flag("-q,--quiet", quiet, "suppress progress output");

  auto* probe = app.add_subcommand("probe", "fit a linear probe on a frozen encoder from a checkpoint");
  probe->add_option("checkpoint", checkpoint_path, "model checkpoint")->required()->check(CLI::ExistingFile);
  probe->add_option("dataset", dataset_path, "dataset written by gen-data")->required()->check(CLI::ExistingFile);
  probe->add_option("--modality", modality, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  probe->add_option("--steps", probe_steps, "full-batch gradient steps")->capture_default_str();
  probe->add_option("--lr", probe_lr, "probe learning rate")->capture_default_str();

  auto* gc = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients of every loss");
  gc->add_option("--size", size, "small | medium")->check(CLI::IsMember({"small", "medium"}))->capture_default_str();

  auto* gen = app.add_subcommand("gen-data", "generate the dataset of one repetition of a spec");
  gen->add_option("spec", spec_path, "experiment spec (YAML)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "output file (.tsv/.txt for text, anything else binary)")->required();
  gen->add_option("--repetition", repetition, "repetition index")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigInvalid;
  }

  try {
    umt::RunOptions options;
    if (!out_dir.empty()) options.output_dir = out_dir;
    if (!quiet) options.log = &std::cerr;

    if (*run) {
      const auto spec = umt::load_spec(spec_path);
      return print_report(umt::run_experiment(spec, options));
    }
    if (*sw) {
      const auto spec = umt::load_spec(spec_path);
      const auto report = umt::sweep(spec, umt::sweep_parameter_from_string(param), values, options);
      bool failed = false;
      for (std::size_t i = 0; i < report.values.size(); ++i) {
        std::cout << "== " << param << " = " << umt::format_double(report.values[i]) << "\n";
        umt::write_summary(report.reports[i], std::cout);
        failed = failed || report.reports[i].any_failed();
      }
      return failed ? kRunFailed : kOk;
    }
    if (*probe) {
      const auto encoder = umt::load_encoder(checkpoint_path, modality);
      const auto ds = umt::load_dataset(dataset_path);
      umt::ProbeConfig pc;
      pc.max_steps = probe_steps;
      pc.learning_rate = probe_lr;
      const auto r = umt::linear_probe(encoder, ds, modality, pc);
      std::cout << std::fixed << std::setprecision(2) << "modality m" << modality << " probe: train "
                << 100 * r.train_accuracy << "%, test " << 100 * r.test_accuracy << "% (" << r.steps << " steps)\n";
      return kOk;
    }
    if (*gc) {
      const auto cases =
          umt::grad_check_suite(size == "medium" ? umt::GradCheckSize::kMedium : umt::GradCheckSize::kSmall);
      bool ok = true;
      for (const auto& c : cases) {
        std::printf("%-24s %s  max rel err %.3e  coords %zu  kinks %zu\n", c.name.c_str(),
                    c.report.passed ? "pass" : "FAIL", c.report.max_relative_error, c.report.checked,
                    c.report.flagged_kinks);
        ok = ok && c.report.passed;
      }
      return ok ? kOk : kRunFailed;
    }
    if (*gen) {
      const auto spec = umt::load_spec(spec_path);
      if (repetition < 0 || repetition >= static_cast<int>(spec.seeds.size())) {
        throw umt::ConfigError("repetition must be in [0, " + std::to_string(spec.seeds.size()) + ")");
      }
      auto data = spec.data;
      data.seed = umt::derive_seed(spec.seeds[static_cast<std::size_t>(repetition)], "data");
      const auto ds = umt::generate_dataset(data);
      umt::save_dataset(ds, out_dir);
      const auto summary = umt::dataset_summary(ds);
      std::cout << "wrote " << out_dir << ": train " << summary.train.total << " (multi-view "
                << summary.train.count(umt::ViewType::kMultiView) << ", m1-only "
                << summary.train.count(umt::ViewType::kSingleViewM1) << ", m2-only "
                << summary.train.count(umt::ViewType::kSingleViewM2) << "), test " << summary.test.total << "\n";
      return kOk;
    }
  } catch (const umt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRunFailed;
  }
  return kOk;
}
