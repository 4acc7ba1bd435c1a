#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssni {

// Dense row-major tensor of doubles. Rank-1 for vector data, rank-3 (c,h,w)
// for images. A batch is a tensor whose leading axis indexes samples; all
// numerics in this project run in 64-bit floats.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(count(shape), 0.0);
  }
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape))
      throw std::invalid_argument("tensor: data size does not match shape");
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::size_t numel() const { return data.size(); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
};

// ---- batch views -----------------------------------------------------------

inline std::size_t batch_rows(const Tensor& b) {
  if (b.shape.empty()) throw std::invalid_argument("batch: rank-0 tensor");
  return b.shape[0];
}

inline std::size_t row_numel(const Tensor& b) {
  std::size_t rows = batch_rows(b);
  return rows == 0 ? 0 : b.numel() / rows;
}

inline std::vector<std::size_t> item_shape(const Tensor& b) {
  if (b.shape.empty()) throw std::invalid_argument("batch: rank-0 tensor");
  return std::vector<std::size_t>(b.shape.begin() + 1, b.shape.end());
}

inline std::span<double> row_span(Tensor& b, std::size_t i) {
  std::size_t n = row_numel(b);
  return std::span<double>(b.data.data() + i * n, n);
}

inline std::span<const double> row_span(const Tensor& b, std::size_t i) {
  std::size_t n = row_numel(b);
  return std::span<const double>(b.data.data() + i * n, n);
}

inline Tensor batch_row(const Tensor& b, std::size_t i) {
  auto s = row_span(b, i);
  return Tensor(item_shape(b), std::vector<double>(s.begin(), s.end()));
}

inline void set_batch_row(Tensor& b, std::size_t i, const Tensor& x) {
  auto s = row_span(b, i);
  if (x.numel() != s.size()) throw std::invalid_argument("batch row: size mismatch");
  std::copy(x.data.begin(), x.data.end(), s.begin());
}

inline Tensor empty_batch(std::size_t rows, const std::vector<std::size_t>& item) {
  std::vector<std::size_t> s;
  s.reserve(item.size() + 1);
  s.push_back(rows);
  s.insert(s.end(), item.begin(), item.end());
  return Tensor(std::move(s));
}

// ---- small numeric helpers -------------------------------------------------

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double l2_norm(std::span<const double> v) {
  return std::sqrt(dot(v, v));
}

inline double l2_norm(const Tensor& t) {
  return l2_norm(std::span<const double>(t.data));
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline bool bits_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

}  // namespace ssni
