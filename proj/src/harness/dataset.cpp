#include "ssni/harness/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "ssni/io.hpp"
#include "ssni/rng.hpp"

namespace ssni {

namespace {

Dataset make_gaussian(const DatasetSpec& spec, std::size_t dim) {
  if (spec.n == 0) throw std::invalid_argument("dataset: n must be positive");
  if (spec.mu.size() != dim)
    throw std::invalid_argument("dataset: gaussian mu must have dim " +
                                std::to_string(dim));
  if (!(spec.sigma > 0.0)) throw std::invalid_argument("dataset: sigma must be > 0");
  Dataset d;
  d.xs = empty_batch(spec.n, {dim});
  for (std::size_t i = 0; i < spec.n; ++i) {
    RandomStream rng(derive_key({spec.seed, 0x67617573ULL, i}));
    auto row = row_span(d.xs, i);
    for (std::size_t j = 0; j < dim; ++j)
      row[j] = spec.mu[j] + spec.sigma * rng.next_gaussian();
  }
  return d;
}

Dataset make_two_moons(const DatasetSpec& spec) {
  if (spec.n == 0) throw std::invalid_argument("dataset: n must be positive");
  Dataset d;
  d.xs = empty_batch(spec.n, {2});
  d.labels.resize(spec.n);
  d.n_classes = 2;
  for (std::size_t i = 0; i < spec.n; ++i) {
    RandomStream rng(derive_key({spec.seed, 0x6d6f6f6eULL, i}));
    int label = static_cast<int>(i % 2);
    double theta = std::numbers::pi * rng.next_uniform();
    double x, y;
    if (label == 0) {
      x = std::cos(theta);
      y = std::sin(theta);
    } else {
      x = 1.0 - std::cos(theta);
      y = 0.5 - std::sin(theta);
    }
    auto row = row_span(d.xs, i);
    row[0] = x - 0.5 + spec.noise * rng.next_gaussian();
    row[1] = y - 0.25 + spec.noise * rng.next_gaussian();
    d.labels[i] = label;
  }
  return d;
}

// 8x8 grayscale shapes: disc, cross, horizontal stripes, vertical stripes,
// with jittered placement, intensity and pixel noise.
Dataset make_tiny_images(const DatasetSpec& spec) {
  if (spec.n == 0) throw std::invalid_argument("dataset: n must be positive");
  constexpr int kSide = 8;
  Dataset d;
  d.xs = empty_batch(spec.n, {1, kSide, kSide});
  d.labels.resize(spec.n);
  d.n_classes = 4;
  for (std::size_t i = 0; i < spec.n; ++i) {
    RandomStream rng(derive_key({spec.seed, 0x696d6773ULL, i}));
    int label = static_cast<int>(i % 4);
    int cy = 3 + static_cast<int>(rng.next_u64() % 2);
    int cx = 3 + static_cast<int>(rng.next_u64() % 2);
    int phase = static_cast<int>(rng.next_u64() % 2);
    double fg = 0.75 + 0.25 * rng.next_uniform();
    double bg = 0.05 + 0.10 * rng.next_uniform();
    auto row = row_span(d.xs, i);
    for (int y = 0; y < kSide; ++y) {
      for (int x = 0; x < kSide; ++x) {
        bool on = false;
        switch (label) {
          case 0: {  // disc
            double dy = y - cy, dx = x - cx;
            on = dy * dy + dx * dx <= 5.5;
            break;
          }
          case 1:  // cross
            on = (y == cy || x == cx);
            break;
          case 2:  // horizontal stripes
            on = ((y + phase) % 2 == 0);
            break;
          case 3:  // vertical stripes
            on = ((x + phase) % 2 == 0);
            break;
        }
        double v = (on ? fg : bg) + 0.03 * rng.next_gaussian();
        row[static_cast<std::size_t>(y) * kSide + x] = std::clamp(v, 0.0, 1.0);
      }
    }
    d.labels[i] = label;
  }
  return d;
}

}  // namespace

Dataset make_dataset(const DatasetSpec& spec) {
  switch (spec.kind) {
    case DatasetKind::gaussian1d:
      return make_gaussian(spec, 1);
    case DatasetKind::gaussian2d:
      return make_gaussian(spec, 2);
    case DatasetKind::two_moons:
      return make_two_moons(spec);
    case DatasetKind::tiny_images:
      return make_tiny_images(spec);
    case DatasetKind::directory:
      return load_dataset_dir(spec.dir);
  }
  throw std::invalid_argument("dataset: unknown kind");
}

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "gaussian1d") return DatasetKind::gaussian1d;
  if (s == "gaussian2d") return DatasetKind::gaussian2d;
  if (s == "two_moons") return DatasetKind::two_moons;
  if (s == "tiny_images") return DatasetKind::tiny_images;
  if (s == "directory") return DatasetKind::directory;
  throw std::invalid_argument("dataset: unknown kind \"" + s + "\"");
}

void save_dataset_dir(const Dataset& d, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  {
    std::ostringstream os(std::ios::binary);
    io::write_u32(os, static_cast<std::uint32_t>(d.xs.shape.size()));
    for (std::size_t s : d.xs.shape) io::write_u64(os, s);
    io::write_f64s(os, d.xs.data);
    io::atomic_write_file((fs::path(dir) / "data.bin").string(), os.str());
  }
  if (!d.labels.empty()) {
    std::ostringstream os(std::ios::binary);
    io::write_u64(os, d.labels.size());
    for (int l : d.labels) io::write_i32(os, l);
    io::atomic_write_file((fs::path(dir) / "labels.bin").string(), os.str());
  }
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["n"] = d.size();
  manifest["item_shape"] = item_shape(d.xs);
  manifest["n_classes"] = d.n_classes;
  manifest["has_labels"] = !d.labels.empty();
  io::atomic_write_file((fs::path(dir) / "manifest.json").string(),
                        manifest.dump(2) + "\n");
}

Dataset load_dataset_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  fs::path base(dir);
  std::ifstream mf(base / "manifest.json");
  if (!mf) throw std::runtime_error("dataset: missing manifest in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(mf);
  if (manifest.at("format_version").get<int>() != 1)
    throw std::runtime_error("dataset: unsupported manifest version");

  Dataset d;
  {
    std::ifstream is(base / "data.bin", std::ios::binary);
    if (!is) throw std::runtime_error("dataset: missing data.bin in " + dir);
    std::uint32_t rank = io::read_u32(is);
    std::vector<std::size_t> shape(rank);
    for (auto& s : shape) s = io::read_u64(is);
    d.xs = Tensor(shape, io::read_f64s(is));
  }
  d.n_classes = manifest.at("n_classes").get<int>();
  if (manifest.at("has_labels").get<bool>()) {
    std::ifstream is(base / "labels.bin", std::ios::binary);
    if (!is) throw std::runtime_error("dataset: missing labels.bin in " + dir);
    std::uint64_t n = io::read_u64(is);
    d.labels.resize(n);
    for (auto& l : d.labels) l = io::read_i32(is);
  }
  if (manifest.at("n").get<std::size_t>() != d.size())
    throw std::runtime_error("dataset: manifest row count does not match data");
  return d;
}

}  // namespace ssni
