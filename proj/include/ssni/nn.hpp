#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ssni/rng.hpp"
#include "ssni/tensor.hpp"

namespace ssni::nn {

// Flat parameter/gradient storage shared by all layers of one network.
// Layers hold offsets into it; the optimizer and checkpoints only ever see
// the flat arrays.
struct ParamStore {
  std::vector<double> values;
  std::vector<double> grads;

  std::size_t alloc(std::size_t n) {
    std::size_t off = values.size();
    values.resize(off + n, 0.0);
    grads.resize(off + n, 0.0);
    return off;
  }
  void zero_grads() { std::fill(grads.begin(), grads.end(), 0.0); }
  std::size_t size() const { return values.size(); }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
  double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

// Dense layer. Weights are stored [in][out] so the inner loops run over the
// output index; all accumulation orders are fixed, which keeps evaluation
// bit-reproducible regardless of batching.
struct Linear {
  int in = 0, out = 0;
  std::size_t w = 0, b = 0;

  void init(ParamStore& ps, int in_dim, int out_dim, RandomStream& rng,
            double scale = 1.0);
  void forward(const ParamStore& ps, std::span<const double> x,
               std::span<double> y) const;
  // Accumulates into gx (if nonempty) and into parameter grads (if requested).
  void backward(ParamStore& ps, std::span<const double> x,
                std::span<const double> gy, std::span<double> gx,
                bool param_grads) const;
};

// 3x3 convolution, stride 1, zero padding 1, channels-last activations
// ([h][w][c]); weights stored [ky][kx][cin][cout].
struct Conv3x3 {
  int cin = 0, cout = 0;
  std::size_t w = 0, b = 0;

  void init(ParamStore& ps, int cin_, int cout_, RandomStream& rng,
            double scale = 1.0);
  void forward(const ParamStore& ps, const double* x, int h, int wd,
               double* y) const;
  void backward(ParamStore& ps, const double* x, int h, int wd,
                const double* gy, double* gx, bool param_grads) const;
};

// 2x2 average pooling and nearest-neighbour 2x upsampling (channels-last).
// Dimensions given are the *input* dimensions; backward variants accumulate.
void avgpool2(const double* x, int h, int w, int c, double* y);
void avgpool2_back(const double* gy, int h, int w, int c, double* gx);
void upsample2(const double* x, int h, int w, int c, double* y);
void upsample2_back(const double* gy, int h, int w, int c, double* gx);

// Sinusoidal timestep embedding (sin/cos pairs over a geometric frequency
// ladder); dim must be even.
std::vector<double> sinusoidal_embedding(int t, int dim);

struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m, v;
  long steps = 0;

  void step(ParamStore& ps);
};

int argmax(std::span<const double> v);

// Mean-reduced softmax cross-entropy for one sample; writes dL/dlogits.
double softmax_cross_entropy(std::span<const double> logits, int label,
                             std::span<double> grad_logits);

}  // namespace ssni::nn
