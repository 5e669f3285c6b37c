#include "umt/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace umt {

PlotKind plot_kind_from_string(const std::string& name) {
  if (name == "training_curves") return PlotKind::kTrainingCurves;
  if (name == "per_class_bars") return PlotKind::kPerClassBars;
  if (name == "probe_table") return PlotKind::kProbeTable;
  throw ConfigError("unknown plot kind '" + name + "' (expected training_curves, per_class_bars or probe_table)");
}

std::string to_string(PlotKind kind) {
  switch (kind) {
    case PlotKind::kTrainingCurves: return "training_curves";
    case PlotKind::kPerClassBars: return "per_class_bars";
    case PlotKind::kProbeTable: return "probe_table";
  }
  return "unknown";
}

void write_training_curves(const DiagnosticsTrace& trace, std::ostream& os) {
  if (trace.empty()) throw std::runtime_error("no epochs recorded");
  os << "epoch,fusion_term,distill_m1,distill_m2,residual,grad_norm_m1,grad_norm_m2,train_acc,test_acc\n";
  for (const auto& e : trace) {
    os << e.epoch << ',' << format_double(e.fusion_term) << ',' << format_double(e.distill_m1) << ','
       << format_double(e.distill_m2) << ',' << format_double(e.residual) << ',' << format_double(e.grad_norm_m1)
       << ',' << format_double(e.grad_norm_m2) << ',' << format_double(e.train_accuracy) << ','
       << format_double(e.test_accuracy) << '\n';
  }
}

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fixed(double v, int digits = 1) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(digits);
  ss << v;
  return ss.str();
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Series {
  std::string name;
  std::vector<double> y;
};

// Static line chart, y in [0, 1].
void line_chart_svg(std::ostream& os, const std::string& title, const std::vector<double>& x,
                    const std::vector<Series>& series) {
  const double w = 640, h = 360, left = 50, right = 150, top = 30, bottom = 40;
  const double pw = w - left - right, ph = h - top - bottom;
  const double x0 = x.front(), x1 = std::max(x.back(), x0 + 1);
  auto px = [&](double v) { return left + pw * (v - x0) / (x1 - x0); };
  auto py = [&](double v) { return top + ph * (1.0 - std::clamp(v, 0.0, 1.0)); };
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"18\" font-size=\"13\">" << escape(title) << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n";
  for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    os << "<text x=\"" << left - 6 << "\" y=\"" << py(t) + 4 << "\" font-size=\"10\" text-anchor=\"end\">" << fixed(t, 2)
       << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 8 << "\" font-size=\"11\" text-anchor=\"middle\">epoch</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* colour = kPalette[s % 10];
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < x.size(); ++i) os << fixed(px(x[i]), 2) << ',' << fixed(py(series[s].y[i]), 2) << ' ';
    os << "\"/>\n";
    const double ly = top + 14.0 * static_cast<double>(s);
    os << "<line x1=\"" << left + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 30 << "\" y2=\"" << ly
       << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + pw + 34 << "\" y=\"" << ly + 4 << "\" font-size=\"10\">" << escape(series[s].name)
       << "</text>\n";
  }
  os << "</svg>\n";
}

// Static bar chart of values in [0, 1]; missing values are skipped.
void bar_chart_svg(std::ostream& os, const std::string& title, const std::vector<std::string>& labels,
                   const std::vector<std::optional<double>>& values) {
  const double bar = 36, gap = 14, left = 50, top = 30, ph = 240, bottom = 120;
  const double w = left + (bar + gap) * static_cast<double>(labels.size()) + 20;
  const double h = top + ph + bottom;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"18\" font-size=\"13\">" << escape(title) << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << w - 10 << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double x = left + gap / 2 + (bar + gap) * static_cast<double>(i);
    if (values[i]) {
      const double v = std::clamp(*values[i], 0.0, 1.0);
      os << "<rect x=\"" << x << "\" y=\"" << fixed(top + ph * (1 - v), 2) << "\" width=\"" << bar << "\" height=\""
         << fixed(ph * v, 2) << "\" fill=\"" << kPalette[i % 10] << "\"/>\n";
      os << "<text x=\"" << x + bar / 2 << "\" y=\"" << fixed(top + ph * (1 - v) - 3, 2)
         << "\" font-size=\"9\" text-anchor=\"middle\">" << fixed(100 * v) << "</text>\n";
    }
    const double ly = top + ph + 10;
    os << "<text x=\"" << x + bar / 2 << "\" y=\"" << ly << "\" font-size=\"10\" transform=\"rotate(45 " << x + bar / 2
       << ' ' << ly << ")\">" << escape(labels[i]) << "</text>\n";
  }
  os << "</svg>\n";
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

std::string optional_cell(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

}  // namespace

std::vector<std::filesystem::path> emit_plot_data(const ExperimentReport& report, PlotKind kind,
                                                  const std::filesystem::path& dir, bool svg) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  switch (kind) {
    case PlotKind::kTrainingCurves: {
      std::size_t emitted = 0;
      for (const auto& r : report.runs) {
        if (!r.completed) continue;
        if (r.trace.empty()) throw std::runtime_error("no epochs recorded for run '" + r.run_name + "'");
        const std::string stem = "training_curves_" + r.run_name + "_seed_" + std::to_string(r.seed);
        {
          auto os = open_out(dir / (stem + ".csv"));
          write_training_curves(r.trace, os);
        }
        written.push_back(dir / (stem + ".csv"));
        if (svg) {
          std::vector<double> x;
          Series train{"train_acc", {}}, test{"test_acc", {}}, residual{"residual", {}};
          for (const auto& e : r.trace) {
            x.push_back(e.epoch);
            train.y.push_back(e.train_accuracy);
            test.y.push_back(e.test_accuracy);
            residual.y.push_back(e.residual);
          }
          auto os = open_out(dir / (stem + ".svg"));
          line_chart_svg(os, r.run_name + " (seed " + std::to_string(r.seed) + ")", x, {train, test, residual});
          written.push_back(dir / (stem + ".svg"));
        }
        ++emitted;
      }
      if (emitted == 0) throw std::runtime_error("no epochs recorded");
      break;
    }
    case PlotKind::kPerClassBars: {
      if (report.top_k.empty()) throw std::runtime_error("report has no top-K comparison");
      for (const auto& t : report.top_k) {
        const auto& c = t.comparison;
        const std::string stem = "per_class_bars_seed_" + std::to_string(t.seed);
        {
          auto os = open_out(dir / (stem + ".csv"));
          os << "class," << c.reference.name;
          for (const auto& row : c.candidates) os << ',' << row.name;
          os << '\n';
          for (std::size_t i = 0; i < c.classes.size(); ++i) {
            os << c.classes[i] << ',' << optional_cell(c.reference.accuracies[i]);
            for (const auto& row : c.candidates) os << ',' << optional_cell(row.accuracies[i]);
            os << '\n';
          }
          os << "mean," << optional_cell(c.reference.mean);
          for (const auto& row : c.candidates) os << ',' << optional_cell(row.mean);
          os << '\n';
        }
        written.push_back(dir / (stem + ".csv"));
        if (svg) {
          std::vector<std::string> labels;
          std::vector<std::optional<double>> values;
          for (const auto& row : c.candidates) {
            labels.push_back(row.name);
            values.push_back(row.mean);
          }
          auto os = open_out(dir / (stem + ".svg"));
          bar_chart_svg(os, "m2 probe accuracy on the m1 teacher's top-" + std::to_string(c.classes.size()) +
                                " classes (seed " + std::to_string(t.seed) + ")",
                        labels, values);
          written.push_back(dir / (stem + ".svg"));
        }
      }
      break;
    }
    case PlotKind::kProbeTable: {
      const std::vector<std::pair<std::string, std::string>> cols = {
          {"probe_m1_train", "probe_m1_accuracy"}, {"probe_m1_test", "probe_m1_accuracy"},
          {"probe_m2_train", "probe_m2_accuracy"}, {"probe_m2_test", "probe_m2_accuracy"}};
      auto find = [](const std::vector<MetricRow>& rows, const std::string& split, const std::string& name) {
        std::optional<double> v;
        for (const auto& m : rows)
          if (m.split == split && m.name == name) v = m.value;
        return v;
      };
      {
        auto os = open_out(dir / "probe_table.csv");
        os << "run_name,strategy";
        for (const auto& c : cols) os << ',' << c.first << ',' << c.first << "_std";
        os << '\n';
        for (const auto& a : report.aggregates) {
          os << a.run_name << ',' << to_string(a.strategy);
          for (const auto& c : cols) {
            const std::string split = c.first.substr(c.first.size() - 5) == "train" ? "train" : "test";
            os << ',' << optional_cell(find(a.mean, split, c.second)) << ','
               << optional_cell(find(a.stddev, split, c.second));
          }
          os << '\n';
        }
      }
      written.push_back(dir / "probe_table.csv");
      if (svg) {
        std::vector<std::string> labels;
        std::vector<std::optional<double>> values;
        for (const auto& a : report.aggregates) {
          labels.push_back(a.run_name);
          values.push_back(find(a.mean, "test", "probe_m2_accuracy"));
        }
        auto os = open_out(dir / "probe_table.svg");
        bar_chart_svg(os, "m2 encoder probe test accuracy", labels, values);
        written.push_back(dir / "probe_table.svg");
      }
      break;
    }
  }
  return written;
}

}  // namespace umt
