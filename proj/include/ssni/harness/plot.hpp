#pragma once

#include <string>
#include <vector>

namespace ssni {

struct SweepPoint {
  double budget = 0.0;
  double mean_norm = 0.0;
  double std_norm = 0.0;
  int n = 0;
};

struct PlotPaths {
  std::string csv;
  std::string svg;
};

// Writes the budget-vs-norm series as a CSV (sorted ascending by budget) and
// an SVG scatter/line rendering. Tests read the CSV, never the pixels.
PlotPaths plot_norm_vs_eps(std::vector<SweepPoint> points, const std::string& out_dir,
                           const std::string& stem = "norm_vs_eps");

std::vector<SweepPoint> load_sweep_csv(const std::string& path);

}  // namespace ssni
