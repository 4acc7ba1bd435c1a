#include "ssni/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace ssni::nn {

void Linear::init(ParamStore& ps, int in_dim, int out_dim, RandomStream& rng,
                  double scale) {
  in = in_dim;
  out = out_dim;
  w = ps.alloc(static_cast<std::size_t>(in) * out);
  b = ps.alloc(static_cast<std::size_t>(out));
  double sd = scale / std::sqrt(static_cast<double>(in));
  for (int i = 0; i < in * out; ++i) ps.values[w + i] = sd * rng.next_gaussian();
}

void Linear::forward(const ParamStore& ps, std::span<const double> x,
                     std::span<double> y) const {
  const double* W = ps.values.data() + w;
  const double* B = ps.values.data() + b;
  for (int o = 0; o < out; ++o) y[o] = B[o];
  for (int i = 0; i < in; ++i) {
    double xi = x[i];
    const double* Wi = W + static_cast<std::size_t>(i) * out;
    for (int o = 0; o < out; ++o) y[o] += Wi[o] * xi;
  }
}

void Linear::backward(ParamStore& ps, std::span<const double> x,
                      std::span<const double> gy, std::span<double> gx,
                      bool param_grads) const {
  const double* W = ps.values.data() + w;
  if (!gx.empty()) {
    for (int i = 0; i < in; ++i) {
      const double* Wi = W + static_cast<std::size_t>(i) * out;
      double acc = 0.0;
      for (int o = 0; o < out; ++o) acc += Wi[o] * gy[o];
      gx[i] += acc;
    }
  }
  if (param_grads) {
    double* GW = ps.grads.data() + w;
    double* GB = ps.grads.data() + b;
    for (int o = 0; o < out; ++o) GB[o] += gy[o];
    for (int i = 0; i < in; ++i) {
      double xi = x[i];
      double* GWi = GW + static_cast<std::size_t>(i) * out;
      for (int o = 0; o < out; ++o) GWi[o] += xi * gy[o];
    }
  }
}

void Conv3x3::init(ParamStore& ps, int cin_, int cout_, RandomStream& rng,
                   double scale) {
  cin = cin_;
  cout = cout_;
  w = ps.alloc(9ull * cin * cout);
  b = ps.alloc(static_cast<std::size_t>(cout));
  double sd = scale / std::sqrt(9.0 * cin);
  for (std::size_t i = 0; i < 9ull * cin * cout; ++i)
    ps.values[w + i] = sd * rng.next_gaussian();
}

void Conv3x3::forward(const ParamStore& ps, const double* x, int h, int wd,
                      double* y) const {
  const double* W = ps.values.data() + w;
  const double* B = ps.values.data() + b;
  for (int p = 0; p < h * wd; ++p)
    for (int o = 0; o < cout; ++o) y[static_cast<std::size_t>(p) * cout + o] = B[o];

  for (int yy = 0; yy < h; ++yy) {
    for (int xx = 0; xx < wd; ++xx) {
      double* yp = y + (static_cast<std::size_t>(yy) * wd + xx) * cout;
      for (int ky = 0; ky < 3; ++ky) {
        int sy = yy + ky - 1;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          int sx = xx + kx - 1;
          if (sx < 0 || sx >= wd) continue;
          const double* xp = x + (static_cast<std::size_t>(sy) * wd + sx) * cin;
          const double* Wk = W + (static_cast<std::size_t>(ky) * 3 + kx) * cin * cout;
          for (int ci = 0; ci < cin; ++ci) {
            double v = xp[ci];
            const double* Wc = Wk + static_cast<std::size_t>(ci) * cout;
            for (int o = 0; o < cout; ++o) yp[o] += Wc[o] * v;
          }
        }
      }
    }
  }
}

void Conv3x3::backward(ParamStore& ps, const double* x, int h, int wd,
                       const double* gy, double* gx, bool param_grads) const {
  const double* W = ps.values.data() + w;
  double* GW = param_grads ? ps.grads.data() + w : nullptr;
  double* GB = param_grads ? ps.grads.data() + b : nullptr;

  if (param_grads) {
    for (int p = 0; p < h * wd; ++p) {
      const double* gp = gy + static_cast<std::size_t>(p) * cout;
      for (int o = 0; o < cout; ++o) GB[o] += gp[o];
    }
  }

  for (int yy = 0; yy < h; ++yy) {
    for (int xx = 0; xx < wd; ++xx) {
      const double* gp = gy + (static_cast<std::size_t>(yy) * wd + xx) * cout;
      for (int ky = 0; ky < 3; ++ky) {
        int sy = yy + ky - 1;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          int sx = xx + kx - 1;
          if (sx < 0 || sx >= wd) continue;
          std::size_t src = (static_cast<std::size_t>(sy) * wd + sx) * cin;
          const double* Wk = W + (static_cast<std::size_t>(ky) * 3 + kx) * cin * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const double* Wc = Wk + static_cast<std::size_t>(ci) * cout;
            if (gx != nullptr) {
              double acc = 0.0;
              for (int o = 0; o < cout; ++o) acc += Wc[o] * gp[o];
              gx[src + ci] += acc;
            }
            if (param_grads) {
              double v = x[src + ci];
              double* GWc = GW + (static_cast<std::size_t>(ky) * 3 + kx) * cin * cout +
                            static_cast<std::size_t>(ci) * cout;
              for (int o = 0; o < cout; ++o) GWc[o] += v * gp[o];
            }
          }
        }
      }
    }
  }
}

void avgpool2(const double* x, int h, int w, int c, double* y) {
  int oh = h / 2, ow = w / 2;
  for (int yy = 0; yy < oh; ++yy)
    for (int xx = 0; xx < ow; ++xx) {
      double* yp = y + (static_cast<std::size_t>(yy) * ow + xx) * c;
      const double* a = x + (static_cast<std::size_t>(2 * yy) * w + 2 * xx) * c;
      const double* bp = a + c;
      const double* cp = x + (static_cast<std::size_t>(2 * yy + 1) * w + 2 * xx) * c;
      const double* dp = cp + c;
      for (int ch = 0; ch < c; ++ch)
        yp[ch] = 0.25 * (a[ch] + bp[ch] + cp[ch] + dp[ch]);
    }
}

void avgpool2_back(const double* gy, int h, int w, int c, double* gx) {
  int oh = h / 2, ow = w / 2;
  for (int yy = 0; yy < oh; ++yy)
    for (int xx = 0; xx < ow; ++xx) {
      const double* gp = gy + (static_cast<std::size_t>(yy) * ow + xx) * c;
      double* a = gx + (static_cast<std::size_t>(2 * yy) * w + 2 * xx) * c;
      double* bp = a + c;
      double* cp = gx + (static_cast<std::size_t>(2 * yy + 1) * w + 2 * xx) * c;
      double* dp = cp + c;
      for (int ch = 0; ch < c; ++ch) {
        double g = 0.25 * gp[ch];
        a[ch] += g;
        bp[ch] += g;
        cp[ch] += g;
        dp[ch] += g;
      }
    }
}

void upsample2(const double* x, int h, int w, int c, double* y) {
  int oh = 2 * h, ow = 2 * w;
  for (int yy = 0; yy < oh; ++yy)
    for (int xx = 0; xx < ow; ++xx) {
      const double* xp = x + (static_cast<std::size_t>(yy / 2) * w + xx / 2) * c;
      double* yp = y + (static_cast<std::size_t>(yy) * ow + xx) * c;
      for (int ch = 0; ch < c; ++ch) yp[ch] = xp[ch];
    }
}

void upsample2_back(const double* gy, int h, int w, int c, double* gx) {
  int oh = 2 * h, ow = 2 * w;
  for (int yy = 0; yy < oh; ++yy)
    for (int xx = 0; xx < ow; ++xx) {
      const double* gp = gy + (static_cast<std::size_t>(yy) * ow + xx) * c;
      double* xp = gx + (static_cast<std::size_t>(yy / 2) * w + xx / 2) * c;
      for (int ch = 0; ch < c; ++ch) xp[ch] += gp[ch];
    }
}

std::vector<double> sinusoidal_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw std::invalid_argument("sinusoidal_embedding: dim must be even and >= 2");
  int half = dim / 2;
  std::vector<double> emb(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                           static_cast<double>(half));
    emb[static_cast<std::size_t>(2 * i)] = std::sin(t * freq);
    emb[static_cast<std::size_t>(2 * i) + 1] = std::cos(t * freq);
  }
  return emb;
}

void Adam::step(ParamStore& ps) {
  if (m.empty()) {
    m.assign(ps.size(), 0.0);
    v.assign(ps.size(), 0.0);
  }
  if (m.size() != ps.size())
    throw std::invalid_argument("adam: parameter count changed");
  ++steps;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    double g = ps.grads[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    ps.values[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
  }
}

int argmax(std::span<const double> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

double softmax_cross_entropy(std::span<const double> logits, int label,
                             std::span<double> grad_logits) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw std::invalid_argument("cross_entropy: label out of range");
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - mx);
  double log_sum = std::log(sum) + mx;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double p = std::exp(logits[i] - log_sum);
    grad_logits[i] = p - (static_cast<int>(i) == label ? 1.0 : 0.0);
  }
  return log_sum - logits[static_cast<std::size_t>(label)];
}

}  // namespace ssni::nn
