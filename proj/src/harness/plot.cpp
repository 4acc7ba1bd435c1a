#include "ssni/harness/plot.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ssni/io.hpp"

namespace ssni {

namespace {

std::string render_svg(const std::vector<SweepPoint>& pts) {
  constexpr int kW = 560, kH = 380;
  constexpr int kL = 70, kR = 20, kT = 20, kB = 50;
  double x_min = pts.front().budget, x_max = pts.back().budget;
  double y_min = pts.front().mean_norm, y_max = pts.front().mean_norm;
  for (const auto& p : pts) {
    y_min = std::min(y_min, p.mean_norm - p.std_norm);
    y_max = std::max(y_max, p.mean_norm + p.std_norm);
  }
  if (x_max == x_min) x_max = x_min + 1.0;
  if (y_max == y_min) y_max = y_min + 1.0;
  auto sx = [&](double x) {
    return kL + (x - x_min) / (x_max - x_min) * (kW - kL - kR);
  };
  auto sy = [&](double y) {
    return kH - kB - (y - y_min) / (y_max - y_min) * (kH - kT - kB);
  };

  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\""
     << kH << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR
     << "\" y2=\"" << kH - kB << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\""
     << kH - kB << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 12
     << "\" text-anchor=\"middle\" font-size=\"13\">perturbation budget</text>\n";
  os << "<text x=\"16\" y=\"" << (kT + kH - kB) / 2
     << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
     << (kT + kH - kB) / 2 << ")\">mean EPS norm</text>\n";

  if (pts.size() > 1) {
    os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : pts) os << sx(p.budget) << ',' << sy(p.mean_norm) << ' ';
    os << "\"/>\n";
  }
  for (const auto& p : pts) {
    if (p.std_norm > 0.0)
      os << "<line x1=\"" << sx(p.budget) << "\" y1=\"" << sy(p.mean_norm - p.std_norm)
         << "\" x2=\"" << sx(p.budget) << "\" y2=\"" << sy(p.mean_norm + p.std_norm)
         << "\" stroke=\"#1f77b4\" stroke-width=\"1\"/>\n";
    os << "<circle cx=\"" << sx(p.budget) << "\" cy=\"" << sy(p.mean_norm)
       << "\" r=\"3.5\" fill=\"#1f77b4\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace

PlotPaths plot_norm_vs_eps(std::vector<SweepPoint> points, const std::string& out_dir,
                           const std::string& stem) {
  if (points.empty())
    throw std::invalid_argument("plot_norm_vs_eps: empty results");
  std::sort(points.begin(), points.end(),
            [](const SweepPoint& a, const SweepPoint& b) { return a.budget < b.budget; });

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  PlotPaths paths;
  paths.csv = (fs::path(out_dir) / (stem + ".csv")).string();
  paths.svg = (fs::path(out_dir) / (stem + ".svg")).string();

  std::ostringstream csv;
  csv.precision(17);
  csv << "budget,mean_norm,std_norm,n\n";
  for (const auto& p : points)
    csv << p.budget << ',' << p.mean_norm << ',' << p.std_norm << ',' << p.n << '\n';
  io::atomic_write_file(paths.csv, csv.str());
  io::atomic_write_file(paths.svg, render_svg(points));
  return paths;
}

std::vector<SweepPoint> load_sweep_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open sweep csv " + path);
  std::string line;
  if (!std::getline(is, line) || line != "budget,mean_norm,std_norm,n")
    throw std::runtime_error("sweep csv: bad header in " + path);
  std::vector<SweepPoint> pts;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    SweepPoint p;
    char c1, c2, c3;
    std::istringstream ls(line);
    if (!(ls >> p.budget >> c1 >> p.mean_norm >> c2 >> p.std_norm >> c3 >> p.n) ||
        c1 != ',' || c2 != ',' || c3 != ',')
      throw std::runtime_error("sweep csv: bad row \"" + line + "\"");
    pts.push_back(p);
  }
  return pts;
}

}  // namespace ssni
