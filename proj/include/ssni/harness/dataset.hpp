#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssni/tensor.hpp"

namespace ssni {

enum class DatasetKind { gaussian1d, gaussian2d, two_moons, tiny_images, directory };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::two_moons;
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  double noise = 0.08;            // two-moons jitter
  std::vector<double> mu{0.0};    // gaussian center
  double sigma = 1.0;             // gaussian scale
  std::string dir;                // directory source
};

struct Dataset {
  Tensor xs;                // batch tensor, one sample per row
  std::vector<int> labels;  // empty for unlabeled sources
  int n_classes = 0;

  std::size_t size() const { return batch_rows(xs); }
};

// Deterministic generation given the spec's seed. two_moons and tiny_images
// are labeled; the Gaussian sources are not.
Dataset make_dataset(const DatasetSpec& spec);

// Binary arrays plus a JSON manifest; load(save(d)) is bit-identical.
void save_dataset_dir(const Dataset& d, const std::string& dir);
Dataset load_dataset_dir(const std::string& dir);

DatasetKind dataset_kind_from_string(const std::string& s);

}  // namespace ssni
