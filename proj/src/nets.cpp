#include "ssni/nets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ssni/checkpoint.hpp"
#include "ssni/io.hpp"
#include "ssni/rng.hpp"

namespace ssni {

namespace {

using ckpt::kMlpDenoiser;
using ckpt::kUnetDenoiser;
using ckpt::read_header;
using ckpt::write_header;
using Header = ckpt::Header;

void silu_vec(const std::vector<double>& z, std::vector<double>& s) {
  s.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) s[i] = nn::silu(z[i]);
}

// gz += gs * silu'(z)
void silu_back(const std::vector<double>& z, const std::vector<double>& gs,
               std::vector<double>& gz) {
  gz.assign(z.size(), 0.0);
  for (std::size_t i = 0; i < z.size(); ++i) gz[i] = gs[i] * nn::silu_grad(z[i]);
}

void check_eval_args(const Tensor& x_t, int t, const std::vector<std::size_t>& shape,
                     int T) {
  if (x_t.shape != shape)
    throw std::invalid_argument("denoiser: input shape " + shape_str(x_t.shape) +
                                " does not match " + shape_str(shape));
  if (t < 1 || t > T)
    throw std::invalid_argument("denoiser: t=" + std::to_string(t) +
                                " outside [1," + std::to_string(T) + "]");
}

}  // namespace

int Classifier::predict(const Tensor& x) const {
  auto l = logits(x);
  return nn::argmax(l);
}

// ---- MlpDenoiser --------------------------------------------------------------

struct MlpDenoiser::Workspace {
  std::vector<double> x, temb, tout, h, a0;
  std::vector<std::vector<double>> z1, u, a;  // per residual block
  std::vector<double> sA, y;
  // scratch for backward
  std::vector<double> ga, gtmp, gz1, gh, gx;
};

MlpDenoiser::MlpDenoiser(std::vector<std::size_t> input_shape, int schedule_T,
                         const TrainHyper& arch, std::uint64_t seed)
    : input_shape_(std::move(input_shape)),
      schedule_T_(schedule_T),
      seed_(seed),
      hidden_(arch.hidden),
      blocks_(arch.blocks),
      temb_dim_(arch.time_embed_dim) {
  if (input_shape_.size() != 1)
    throw std::invalid_argument("mlp denoiser: expects rank-1 inputs");
  if (schedule_T_ < 1) throw std::invalid_argument("mlp denoiser: schedule_T < 1");
  if (hidden_ < 1 || blocks_ < 0 || temb_dim_ < 2)
    throw std::invalid_argument("mlp denoiser: bad architecture");
  dim_ = static_cast<int>(input_shape_[0]);

  RandomStream rng(derive_key({seed_, 0x6d6c70ULL}));
  in_.init(ps_, dim_, hidden_, rng);
  tproj_.init(ps_, temb_dim_, hidden_, rng);
  block_a_.resize(static_cast<std::size_t>(blocks_));
  block_b_.resize(static_cast<std::size_t>(blocks_));
  for (int k = 0; k < blocks_; ++k) {
    block_a_[static_cast<std::size_t>(k)].init(ps_, hidden_, hidden_, rng);
    // residual branches start small so the initial map is near-identity
    block_b_[static_cast<std::size_t>(k)].init(ps_, hidden_, hidden_, rng, 0.1);
  }
  out_.init(ps_, hidden_, dim_, rng, 0.1);
}

Tensor MlpDenoiser::forward(const Tensor& x_t, int t, Workspace& ws) const {
  check_eval_args(x_t, t, input_shape_, schedule_T_);
  ws.x = x_t.data;
  ws.temb = nn::sinusoidal_embedding(t, temb_dim_);

  ws.h.assign(static_cast<std::size_t>(hidden_), 0.0);
  ws.tout.assign(static_cast<std::size_t>(hidden_), 0.0);
  in_.forward(ps_, ws.x, ws.h);
  tproj_.forward(ps_, ws.temb, ws.tout);
  for (int i = 0; i < hidden_; ++i) ws.h[static_cast<std::size_t>(i)] += ws.tout[static_cast<std::size_t>(i)];

  silu_vec(ws.h, ws.a0);
  ws.z1.assign(static_cast<std::size_t>(blocks_), {});
  ws.u.assign(static_cast<std::size_t>(blocks_), {});
  ws.a.assign(static_cast<std::size_t>(blocks_), {});
  const std::vector<double>* cur = &ws.a0;
  for (int k = 0; k < blocks_; ++k) {
    auto ku = static_cast<std::size_t>(k);
    ws.z1[ku].assign(static_cast<std::size_t>(hidden_), 0.0);
    block_a_[ku].forward(ps_, *cur, ws.z1[ku]);
    silu_vec(ws.z1[ku], ws.u[ku]);
    ws.a[ku].assign(static_cast<std::size_t>(hidden_), 0.0);
    block_b_[ku].forward(ps_, ws.u[ku], ws.a[ku]);
    for (int i = 0; i < hidden_; ++i) ws.a[ku][static_cast<std::size_t>(i)] += (*cur)[static_cast<std::size_t>(i)];
    cur = &ws.a[ku];
  }
  silu_vec(*cur, ws.sA);
  ws.y.assign(static_cast<std::size_t>(dim_), 0.0);
  out_.forward(ps_, ws.sA, ws.y);
  return Tensor(input_shape_, ws.y);
}

Tensor MlpDenoiser::backward(const Workspace& ws, const Tensor& grad_out,
                             bool param_grads) {
  const std::vector<double>& a_last = blocks_ > 0 ? ws.a.back() : ws.a0;

  std::vector<double> gsA(static_cast<std::size_t>(hidden_), 0.0);
  out_.backward(ps_, ws.sA, grad_out.data, gsA, param_grads);

  std::vector<double> ga;
  silu_back(a_last, gsA, ga);

  std::vector<double> gu(static_cast<std::size_t>(hidden_));
  std::vector<double> gz1;
  for (int k = blocks_ - 1; k >= 0; --k) {
    auto ku = static_cast<std::size_t>(k);
    const std::vector<double>& a_in = k > 0 ? ws.a[ku - 1] : ws.a0;
    std::fill(gu.begin(), gu.end(), 0.0);
    block_b_[ku].backward(ps_, ws.u[ku], ga, gu, param_grads);
    silu_back(ws.z1[ku], gu, gz1);
    // residual: d a_next / d a_in = I + branch
    block_a_[ku].backward(ps_, a_in, gz1, ga, param_grads);
  }

  std::vector<double> gh;
  silu_back(ws.h, ga, gh);
  std::vector<double> gx(static_cast<std::size_t>(dim_), 0.0);
  in_.backward(ps_, ws.x, gh, gx, param_grads);
  if (param_grads) {
    std::span<double> none;
    tproj_.backward(ps_, ws.temb, gh, none, true);
  }
  return Tensor(input_shape_, gx);
}

Tensor MlpDenoiser::evaluate(const Tensor& x_t, int t) const {
  Workspace ws;
  return forward(x_t, t, ws);
}

Tensor MlpDenoiser::vjp_input(const Tensor& x_t, int t, const Tensor& grad_out) const {
  if (grad_out.shape != input_shape_)
    throw std::invalid_argument("denoiser vjp: cotangent shape mismatch");
  Workspace ws;
  forward(x_t, t, ws);
  // input VJP never touches parameter grads
  return const_cast<MlpDenoiser*>(this)->backward(ws, grad_out, false);
}

void MlpDenoiser::save(std::ostream& os) const {
  write_header(os, kMlpDenoiser, input_shape_, schedule_T_, seed_);
  io::write_u32(os, 3);
  io::write_i32(os, hidden_);
  io::write_i32(os, blocks_);
  io::write_i32(os, temb_dim_);
  io::write_f64s(os, ps_.values);
}

std::unique_ptr<MlpDenoiser> MlpDenoiser::load(std::istream& is) {
  Header h = read_header(is);
  if (h.kind != kMlpDenoiser) throw std::runtime_error("checkpoint: not an MLP denoiser");
  std::uint32_t n_arch = io::read_u32(is);
  if (n_arch != 3) throw std::runtime_error("checkpoint: bad arch block");
  TrainHyper arch;
  arch.hidden = io::read_i32(is);
  arch.blocks = io::read_i32(is);
  arch.time_embed_dim = io::read_i32(is);
  auto net = std::make_unique<MlpDenoiser>(h.shape, h.schedule_T, arch, h.seed);
  auto values = io::read_f64s(is);
  if (values.size() != net->ps_.values.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  net->ps_.values = std::move(values);
  return net;
}

// ---- UnetDenoiser --------------------------------------------------------------

struct UnetDenoiser::Workspace {
  std::vector<double> temb;
  std::vector<double> x_hwc;
  std::vector<double> e0a, s0a, e0b, s0b;
  std::vector<double> p1, e1a, s1a, e1b, s1b;
  std::vector<double> p2, ma, sma, mb, smb;
  std::vector<double> u1, cat1, d1a, sd1a, d1b, sd1b;
  std::vector<double> u0, cat0, d0a, sd0a, d0b, sd0b;
  std::vector<double> y_hwc;
};

UnetDenoiser::UnetDenoiser(std::vector<std::size_t> input_shape, int schedule_T,
                           const TrainHyper& arch, std::uint64_t seed)
    : input_shape_(std::move(input_shape)),
      schedule_T_(schedule_T),
      seed_(seed),
      base_(arch.base_channels),
      temb_dim_(arch.time_embed_dim) {
  if (input_shape_.size() != 3)
    throw std::invalid_argument("unet denoiser: expects rank-3 (c,h,w) inputs");
  c_in_ = static_cast<int>(input_shape_[0]);
  h_ = static_cast<int>(input_shape_[1]);
  w_ = static_cast<int>(input_shape_[2]);
  if (h_ % 4 != 0 || w_ % 4 != 0 || h_ < 4 || w_ < 4)
    throw std::invalid_argument("unet denoiser: spatial dims must be multiples of 4");
  if (schedule_T_ < 1) throw std::invalid_argument("unet denoiser: schedule_T < 1");
  if (base_ < 1 || temb_dim_ < 2)
    throw std::invalid_argument("unet denoiser: bad architecture");

  int c0 = base_, c1 = 2 * base_, c2 = 4 * base_;
  RandomStream rng(derive_key({seed_, 0x756e6574ULL}));
  enc0a_.init(ps_, c_in_, c0, rng);
  enc0b_.init(ps_, c0, c0, rng);
  enc1a_.init(ps_, c0, c1, rng);
  enc1b_.init(ps_, c1, c1, rng);
  mida_.init(ps_, c1, c2, rng);
  midb_.init(ps_, c2, c2, rng);
  dec1a_.init(ps_, c2 + c1, c1, rng);
  dec1b_.init(ps_, c1, c1, rng);
  dec0a_.init(ps_, c1 + c0, c0, rng);
  dec0b_.init(ps_, c0, c0, rng);
  out_.init(ps_, c0, c_in_, rng, 0.1);
  tp0_.init(ps_, temb_dim_, c0, rng);
  tp1_.init(ps_, temb_dim_, c1, rng);
  tp2_.init(ps_, temb_dim_, c2, rng);
  tp3_.init(ps_, temb_dim_, c1, rng);
  tp4_.init(ps_, temb_dim_, c0, rng);
}

namespace {

void chw_to_hwc(const std::vector<double>& src, int c, int h, int w,
                std::vector<double>& dst) {
  dst.resize(src.size());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        dst[(static_cast<std::size_t>(y) * w + x) * c + ch] =
            src[(static_cast<std::size_t>(ch) * h + y) * w + x];
}

void hwc_to_chw(const std::vector<double>& src, int c, int h, int w,
                std::vector<double>& dst) {
  dst.resize(src.size());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        dst[(static_cast<std::size_t>(ch) * h + y) * w + x] =
            src[(static_cast<std::size_t>(y) * w + x) * c + ch];
}

void add_channel_bias(std::vector<double>& act, int pixels, int c,
                      const std::vector<double>& bias) {
  for (int p = 0; p < pixels; ++p)
    for (int ch = 0; ch < c; ++ch)
      act[static_cast<std::size_t>(p) * c + ch] += bias[static_cast<std::size_t>(ch)];
}

void channel_bias_grad(const std::vector<double>& g, int pixels, int c,
                       std::vector<double>& gbias) {
  gbias.assign(static_cast<std::size_t>(c), 0.0);
  for (int p = 0; p < pixels; ++p)
    for (int ch = 0; ch < c; ++ch)
      gbias[static_cast<std::size_t>(ch)] += g[static_cast<std::size_t>(p) * c + ch];
}

void concat_channels(const std::vector<double>& a, int ca,
                     const std::vector<double>& b, int cb, int pixels,
                     std::vector<double>& out) {
  out.resize(static_cast<std::size_t>(pixels) * (ca + cb));
  for (int p = 0; p < pixels; ++p) {
    double* op = out.data() + static_cast<std::size_t>(p) * (ca + cb);
    const double* ap = a.data() + static_cast<std::size_t>(p) * ca;
    const double* bp = b.data() + static_cast<std::size_t>(p) * cb;
    std::copy(ap, ap + ca, op);
    std::copy(bp, bp + cb, op + ca);
  }
}

void split_channels_grad(const std::vector<double>& g, int ca, int cb, int pixels,
                         std::vector<double>& ga, std::vector<double>& gb) {
  for (int p = 0; p < pixels; ++p) {
    const double* gp = g.data() + static_cast<std::size_t>(p) * (ca + cb);
    double* ap = ga.data() + static_cast<std::size_t>(p) * ca;
    double* bp = gb.data() + static_cast<std::size_t>(p) * cb;
    for (int i = 0; i < ca; ++i) ap[i] += gp[i];
    for (int i = 0; i < cb; ++i) bp[i] += gp[ca + i];
  }
}

}  // namespace

Tensor UnetDenoiser::forward(const Tensor& x_t, int t, Workspace& ws) const {
  check_eval_args(x_t, t, input_shape_, schedule_T_);
  int c0 = base_, c1 = 2 * base_, c2 = 4 * base_;
  int h0 = h_, w0 = w_, h1 = h_ / 2, w1 = w_ / 2, h2 = h_ / 4, w2 = w_ / 4;
  int px0 = h0 * w0, px1 = h1 * w1, px2 = h2 * w2;

  ws.temb = nn::sinusoidal_embedding(t, temb_dim_);
  std::vector<double> tb0(static_cast<std::size_t>(c0), 0.0),
      tb1(static_cast<std::size_t>(c1), 0.0), tb2(static_cast<std::size_t>(c2), 0.0),
      tb3(static_cast<std::size_t>(c1), 0.0), tb4(static_cast<std::size_t>(c0), 0.0);
  tp0_.forward(ps_, ws.temb, tb0);
  tp1_.forward(ps_, ws.temb, tb1);
  tp2_.forward(ps_, ws.temb, tb2);
  tp3_.forward(ps_, ws.temb, tb3);
  tp4_.forward(ps_, ws.temb, tb4);

  chw_to_hwc(x_t.data, c_in_, h0, w0, ws.x_hwc);

  ws.e0a.assign(static_cast<std::size_t>(px0) * c0, 0.0);
  enc0a_.forward(ps_, ws.x_hwc.data(), h0, w0, ws.e0a.data());
  add_channel_bias(ws.e0a, px0, c0, tb0);
  silu_vec(ws.e0a, ws.s0a);
  ws.e0b.assign(static_cast<std::size_t>(px0) * c0, 0.0);
  enc0b_.forward(ps_, ws.s0a.data(), h0, w0, ws.e0b.data());
  silu_vec(ws.e0b, ws.s0b);

  ws.p1.assign(static_cast<std::size_t>(px1) * c0, 0.0);
  nn::avgpool2(ws.s0b.data(), h0, w0, c0, ws.p1.data());
  ws.e1a.assign(static_cast<std::size_t>(px1) * c1, 0.0);
  enc1a_.forward(ps_, ws.p1.data(), h1, w1, ws.e1a.data());
  add_channel_bias(ws.e1a, px1, c1, tb1);
  silu_vec(ws.e1a, ws.s1a);
  ws.e1b.assign(static_cast<std::size_t>(px1) * c1, 0.0);
  enc1b_.forward(ps_, ws.s1a.data(), h1, w1, ws.e1b.data());
  silu_vec(ws.e1b, ws.s1b);

  ws.p2.assign(static_cast<std::size_t>(px2) * c1, 0.0);
  nn::avgpool2(ws.s1b.data(), h1, w1, c1, ws.p2.data());
  ws.ma.assign(static_cast<std::size_t>(px2) * c2, 0.0);
  mida_.forward(ps_, ws.p2.data(), h2, w2, ws.ma.data());
  add_channel_bias(ws.ma, px2, c2, tb2);
  silu_vec(ws.ma, ws.sma);
  ws.mb.assign(static_cast<std::size_t>(px2) * c2, 0.0);
  midb_.forward(ps_, ws.sma.data(), h2, w2, ws.mb.data());
  silu_vec(ws.mb, ws.smb);

  ws.u1.assign(static_cast<std::size_t>(px1) * c2, 0.0);
  nn::upsample2(ws.smb.data(), h2, w2, c2, ws.u1.data());
  concat_channels(ws.u1, c2, ws.s1b, c1, px1, ws.cat1);
  ws.d1a.assign(static_cast<std::size_t>(px1) * c1, 0.0);
  dec1a_.forward(ps_, ws.cat1.data(), h1, w1, ws.d1a.data());
  add_channel_bias(ws.d1a, px1, c1, tb3);
  silu_vec(ws.d1a, ws.sd1a);
  ws.d1b.assign(static_cast<std::size_t>(px1) * c1, 0.0);
  dec1b_.forward(ps_, ws.sd1a.data(), h1, w1, ws.d1b.data());
  silu_vec(ws.d1b, ws.sd1b);

  ws.u0.assign(static_cast<std::size_t>(px0) * c1, 0.0);
  nn::upsample2(ws.sd1b.data(), h1, w1, c1, ws.u0.data());
  concat_channels(ws.u0, c1, ws.s0b, c0, px0, ws.cat0);
  ws.d0a.assign(static_cast<std::size_t>(px0) * c0, 0.0);
  dec0a_.forward(ps_, ws.cat0.data(), h0, w0, ws.d0a.data());
  add_channel_bias(ws.d0a, px0, c0, tb4);
  silu_vec(ws.d0a, ws.sd0a);
  ws.d0b.assign(static_cast<std::size_t>(px0) * c0, 0.0);
  dec0b_.forward(ps_, ws.sd0a.data(), h0, w0, ws.d0b.data());
  silu_vec(ws.d0b, ws.sd0b);

  ws.y_hwc.assign(static_cast<std::size_t>(px0) * c_in_, 0.0);
  out_.forward(ps_, ws.sd0b.data(), h0, w0, ws.y_hwc.data());

  Tensor y(input_shape_);
  hwc_to_chw(ws.y_hwc, c_in_, h0, w0, y.data);
  return y;
}

Tensor UnetDenoiser::backward(const Workspace& ws, const Tensor& grad_out,
                              bool param_grads) {
  int c0 = base_, c1 = 2 * base_, c2 = 4 * base_;
  int h0 = h_, w0 = w_, h1 = h_ / 2, w1 = w_ / 2, h2 = h_ / 4, w2 = w_ / 4;
  int px0 = h0 * w0, px1 = h1 * w1, px2 = h2 * w2;
  std::span<double> none;

  std::vector<double> gy_hwc;
  chw_to_hwc(grad_out.data, c_in_, h0, w0, gy_hwc);

  std::vector<double> gsd0b(static_cast<std::size_t>(px0) * c0, 0.0);
  out_.backward(ps_, ws.sd0b.data(), h0, w0, gy_hwc.data(), gsd0b.data(), param_grads);

  std::vector<double> gd0b;
  silu_back(ws.d0b, gsd0b, gd0b);
  std::vector<double> gsd0a(static_cast<std::size_t>(px0) * c0, 0.0);
  dec0b_.backward(ps_, ws.sd0a.data(), h0, w0, gd0b.data(), gsd0a.data(), param_grads);

  std::vector<double> gd0a;
  silu_back(ws.d0a, gsd0a, gd0a);
  if (param_grads) {
    std::vector<double> gtb4;
    channel_bias_grad(gd0a, px0, c0, gtb4);
    tp4_.backward(ps_, ws.temb, gtb4, none, true);
  }
  std::vector<double> gcat0(static_cast<std::size_t>(px0) * (c1 + c0), 0.0);
  dec0a_.backward(ps_, ws.cat0.data(), h0, w0, gd0a.data(), gcat0.data(), param_grads);

  std::vector<double> gu0(static_cast<std::size_t>(px0) * c1, 0.0);
  std::vector<double> gs0b(static_cast<std::size_t>(px0) * c0, 0.0);
  split_channels_grad(gcat0, c1, c0, px0, gu0, gs0b);

  std::vector<double> gsd1b(static_cast<std::size_t>(px1) * c1, 0.0);
  nn::upsample2_back(gu0.data(), h1, w1, c1, gsd1b.data());

  std::vector<double> gd1b;
  silu_back(ws.d1b, gsd1b, gd1b);
  std::vector<double> gsd1a(static_cast<std::size_t>(px1) * c1, 0.0);
  dec1b_.backward(ps_, ws.sd1a.data(), h1, w1, gd1b.data(), gsd1a.data(), param_grads);

  std::vector<double> gd1a;
  silu_back(ws.d1a, gsd1a, gd1a);
  if (param_grads) {
    std::vector<double> gtb3;
    channel_bias_grad(gd1a, px1, c1, gtb3);
    tp3_.backward(ps_, ws.temb, gtb3, none, true);
  }
  std::vector<double> gcat1(static_cast<std::size_t>(px1) * (c2 + c1), 0.0);
  dec1a_.backward(ps_, ws.cat1.data(), h1, w1, gd1a.data(), gcat1.data(), param_grads);

  std::vector<double> gu1(static_cast<std::size_t>(px1) * c2, 0.0);
  std::vector<double> gs1b(static_cast<std::size_t>(px1) * c1, 0.0);
  split_channels_grad(gcat1, c2, c1, px1, gu1, gs1b);

  std::vector<double> gsmb(static_cast<std::size_t>(px2) * c2, 0.0);
  nn::upsample2_back(gu1.data(), h2, w2, c2, gsmb.data());

  std::vector<double> gmb;
  silu_back(ws.mb, gsmb, gmb);
  std::vector<double> gsma(static_cast<std::size_t>(px2) * c2, 0.0);
  midb_.backward(ps_, ws.sma.data(), h2, w2, gmb.data(), gsma.data(), param_grads);

  std::vector<double> gma;
  silu_back(ws.ma, gsma, gma);
  if (param_grads) {
    std::vector<double> gtb2;
    channel_bias_grad(gma, px2, c2, gtb2);
    tp2_.backward(ps_, ws.temb, gtb2, none, true);
  }
  std::vector<double> gp2(static_cast<std::size_t>(px2) * c1, 0.0);
  mida_.backward(ps_, ws.p2.data(), h2, w2, gma.data(), gp2.data(), param_grads);

  // gs1b also receives the skip-path gradient from the pooled branch
  nn::avgpool2_back(gp2.data(), h1, w1, c1, gs1b.data());

  std::vector<double> ge1b;
  silu_back(ws.e1b, gs1b, ge1b);
  std::vector<double> gs1a(static_cast<std::size_t>(px1) * c1, 0.0);
  enc1b_.backward(ps_, ws.s1a.data(), h1, w1, ge1b.data(), gs1a.data(), param_grads);

  std::vector<double> ge1a;
  silu_back(ws.e1a, gs1a, ge1a);
  if (param_grads) {
    std::vector<double> gtb1;
    channel_bias_grad(ge1a, px1, c1, gtb1);
    tp1_.backward(ps_, ws.temb, gtb1, none, true);
  }
  std::vector<double> gp1(static_cast<std::size_t>(px1) * c0, 0.0);
  enc1a_.backward(ps_, ws.p1.data(), h1, w1, ge1a.data(), gp1.data(), param_grads);

  nn::avgpool2_back(gp1.data(), h0, w0, c0, gs0b.data());

  std::vector<double> ge0b;
  silu_back(ws.e0b, gs0b, ge0b);
  std::vector<double> gs0a(static_cast<std::size_t>(px0) * c0, 0.0);
  enc0b_.backward(ps_, ws.s0a.data(), h0, w0, ge0b.data(), gs0a.data(), param_grads);

  std::vector<double> ge0a;
  silu_back(ws.e0a, gs0a, ge0a);
  if (param_grads) {
    std::vector<double> gtb0;
    channel_bias_grad(ge0a, px0, c0, gtb0);
    tp0_.backward(ps_, ws.temb, gtb0, none, true);
  }
  std::vector<double> gx_hwc(static_cast<std::size_t>(px0) * c_in_, 0.0);
  enc0a_.backward(ps_, ws.x_hwc.data(), h0, w0, ge0a.data(), gx_hwc.data(), param_grads);

  Tensor gx(input_shape_);
  hwc_to_chw(gx_hwc, c_in_, h0, w0, gx.data);
  return gx;
}

Tensor UnetDenoiser::evaluate(const Tensor& x_t, int t) const {
  Workspace ws;
  return forward(x_t, t, ws);
}

Tensor UnetDenoiser::vjp_input(const Tensor& x_t, int t, const Tensor& grad_out) const {
  if (grad_out.shape != input_shape_)
    throw std::invalid_argument("denoiser vjp: cotangent shape mismatch");
  Workspace ws;
  forward(x_t, t, ws);
  return const_cast<UnetDenoiser*>(this)->backward(ws, grad_out, false);
}

void UnetDenoiser::save(std::ostream& os) const {
  write_header(os, kUnetDenoiser, input_shape_, schedule_T_, seed_);
  io::write_u32(os, 2);
  io::write_i32(os, base_);
  io::write_i32(os, temb_dim_);
  io::write_f64s(os, ps_.values);
}

std::unique_ptr<UnetDenoiser> UnetDenoiser::load(std::istream& is) {
  Header h = read_header(is);
  if (h.kind != kUnetDenoiser) throw std::runtime_error("checkpoint: not a conv denoiser");
  std::uint32_t n_arch = io::read_u32(is);
  if (n_arch != 2) throw std::runtime_error("checkpoint: bad arch block");
  TrainHyper arch;
  arch.base_channels = io::read_i32(is);
  arch.time_embed_dim = io::read_i32(is);
  auto net = std::make_unique<UnetDenoiser>(h.shape, h.schedule_T, arch, h.seed);
  auto values = io::read_f64s(is);
  if (values.size() != net->ps_.values.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  net->ps_.values = std::move(values);
  return net;
}

// ---- training ------------------------------------------------------------------

namespace {

template <class Net>
double holdout_loss(const Net& net, const Tensor& holdout,
                    const NoiseSchedule& schedule, std::uint64_t seed) {
  std::size_t rows = batch_rows(holdout);
  double total = 0.0;
  typename Net::Workspace ws;
  for (std::size_t i = 0; i < rows; ++i) {
    RandomStream rng(derive_key({seed, 0x686f6c64ULL, i}));
    int t = 1 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(schedule.T));
    Tensor x0 = batch_row(holdout, i);
    Tensor noise = rng.gaussian_like(x0);
    Tensor x_t = forward_diffuse(x0, t, noise, schedule);
    Tensor pred = net.forward(x_t, t, ws);
    double mse = 0.0;
    for (std::size_t j = 0; j < pred.numel(); ++j) {
      double dlt = pred.data[j] - noise.data[j];
      mse += dlt * dlt;
    }
    total += mse / static_cast<double>(pred.numel());
  }
  return rows == 0 ? 0.0 : total / static_cast<double>(rows);
}

template <class Net>
void run_training(Net& net, const Tensor& train, const NoiseSchedule& schedule,
                  const TrainHyper& hyper, std::uint64_t seed,
                  std::vector<double>& curve) {
  std::size_t n = batch_rows(train);
  nn::Adam opt;
  opt.lr = hyper.lr;
  typename Net::Workspace ws;
  for (int step = 0; step < hyper.steps; ++step) {
    RandomStream rng(derive_key({seed, 0x7472696eULL, static_cast<std::uint64_t>(step)}));
    net.store().zero_grads();
    double loss = 0.0;
    for (int b = 0; b < hyper.batch_size; ++b) {
      std::size_t idx = rng.next_u64() % n;
      int t = 1 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(schedule.T));
      Tensor x0 = batch_row(train, idx);
      Tensor noise = rng.gaussian_like(x0);
      Tensor x_t = forward_diffuse(x0, t, noise, schedule);
      Tensor pred = net.forward(x_t, t, ws);
      Tensor grad(pred.shape);
      double denom = static_cast<double>(hyper.batch_size) *
                     static_cast<double>(pred.numel());
      double mse = 0.0;
      for (std::size_t j = 0; j < pred.numel(); ++j) {
        double dlt = pred.data[j] - noise.data[j];
        mse += dlt * dlt;
        grad.data[j] = 2.0 * dlt / denom;
      }
      loss += mse / static_cast<double>(pred.numel());
      net.backward(ws, grad, true);
    }
    loss /= static_cast<double>(hyper.batch_size);
    if (!std::isfinite(loss))
      throw std::runtime_error("train_denoiser: non-finite loss " +
                               std::to_string(loss) + " at step " +
                               std::to_string(step) + "; lower the learning rate");
    curve.push_back(loss);
    opt.step(net.store());
  }
}

}  // namespace

TrainResult train_denoiser(const Tensor& dataset, const NoiseSchedule& schedule,
                           const TrainHyper& hyper, std::uint64_t seed) {
  std::size_t n = batch_rows(dataset);
  if (n == 0) throw std::invalid_argument("train_denoiser: empty dataset");
  if (hyper.steps < 0 || hyper.batch_size < 1 || !(hyper.lr > 0.0))
    throw std::invalid_argument("train_denoiser: bad hyperparameters");
  auto item = item_shape(dataset);
  if (item.size() != 1 && item.size() != 3)
    throw std::invalid_argument("train_denoiser: items must be rank-1 or rank-3");

  // held-out split, fixed by seed
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  RandomStream split_rng(derive_key({seed, 0x73706c69ULL}));
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[split_rng.next_u64() % i]);
  std::size_t n_hold = 0;
  if (n > 1 && hyper.holdout_frac > 0.0)
    n_hold = static_cast<std::size_t>(
        std::max(1.0, std::floor(hyper.holdout_frac * static_cast<double>(n))));
  if (n_hold >= n) n_hold = n - 1;

  Tensor holdout = empty_batch(n_hold == 0 ? n : n_hold, item);
  Tensor train = empty_batch(n - n_hold, item);
  if (n_hold == 0) {
    holdout = dataset;
    train = dataset;
  } else {
    for (std::size_t i = 0; i < n_hold; ++i)
      set_batch_row(holdout, i, batch_row(dataset, order[i]));
    for (std::size_t i = n_hold; i < n; ++i)
      set_batch_row(train, i - n_hold, batch_row(dataset, order[i]));
  }

  TrainResult result;
  if (item.size() == 1) {
    auto net = std::make_unique<MlpDenoiser>(item, schedule.T, hyper, seed);
    result.holdout_before = holdout_loss(*net, holdout, schedule, seed);
    run_training(*net, train, schedule, hyper, seed, result.loss_curve);
    result.holdout_after = holdout_loss(*net, holdout, schedule, seed);
    result.denoiser = std::move(net);
  } else {
    auto net = std::make_unique<UnetDenoiser>(item, schedule.T, hyper, seed);
    result.holdout_before = holdout_loss(*net, holdout, schedule, seed);
    run_training(*net, train, schedule, hyper, seed, result.loss_curve);
    result.holdout_after = holdout_loss(*net, holdout, schedule, seed);
    result.denoiser = std::move(net);
  }
  return result;
}

// ---- score evaluation ------------------------------------------------------------

Tensor score_from_denoiser(const Denoiser& d, const Tensor& x, int t,
                           const NoiseSchedule& schedule) {
  if (t == 0)
    throw std::invalid_argument(
        "score_from_denoiser: undefined at t=0 in the eps parameterization");
  if (t < 1 || t > schedule.T)
    throw std::invalid_argument("score_from_denoiser: t out of range");
  Tensor eps = d.evaluate(x, t);
  double scale = -1.0 / std::sqrt(1.0 - schedule.alpha_bar(t));
  for (double& v : eps.data) v *= scale;
  return eps;
}

Tensor analytic_gaussian_score(const Tensor& mu0, double sigma0sq,
                               const NoiseSchedule& schedule, const Tensor& x, int t) {
  if (!(sigma0sq > 0.0))
    throw std::invalid_argument("analytic_gaussian_score: sigma0sq must be positive");
  if (t < 0 || t > schedule.T)
    throw std::invalid_argument("analytic_gaussian_score: t out of range");
  if (!x.same_shape(mu0))
    throw std::invalid_argument("analytic_gaussian_score: x/mu0 shape mismatch");
  double ab = schedule.alpha_bar(t);
  double mean_coef = std::sqrt(ab);
  double var = ab * sigma0sq + (1.0 - ab);
  Tensor s(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i)
    s.data[i] = -(x.data[i] - mean_coef * mu0.data[i]) / var;
  return s;
}

ScoreEstimator ScoreEstimator::derived(const Denoiser& d, const NoiseSchedule& schedule) {
  ScoreEstimator e;
  e.mode_ = ScoreBacking::derived;
  e.denoiser_ = &d;
  e.schedule_ = &schedule;
  return e;
}

ScoreEstimator ScoreEstimator::analytic(Tensor mu0, double sigma0sq,
                                        const NoiseSchedule& schedule) {
  if (!(sigma0sq > 0.0))
    throw std::invalid_argument("score estimator: sigma0sq must be positive");
  ScoreEstimator e;
  e.mode_ = ScoreBacking::analytic;
  e.mu0_ = std::move(mu0);
  e.sigma0sq_ = sigma0sq;
  e.schedule_ = &schedule;
  return e;
}

Tensor ScoreEstimator::score(const Tensor& x, int t) const {
  if (mode_ == ScoreBacking::derived)
    return score_from_denoiser(*denoiser_, x, t, *schedule_);
  return analytic_gaussian_score(mu0_, sigma0sq_, *schedule_, x, t);
}

// ---- checkpoints -------------------------------------------------------------------

void save_denoiser(const std::string& path, const Denoiser& d) {
  std::ostringstream os(std::ios::binary);
  if (auto* mlp = dynamic_cast<const MlpDenoiser*>(&d)) {
    mlp->save(os);
  } else if (auto* unet = dynamic_cast<const UnetDenoiser*>(&d)) {
    unet->save(os);
  } else {
    throw std::invalid_argument("save_denoiser: unknown denoiser type");
  }
  io::atomic_write_file(path, os.str());
}

std::unique_ptr<Denoiser> load_denoiser(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  Header h = read_header(is);
  is.seekg(0);
  if (h.kind == kMlpDenoiser) return MlpDenoiser::load(is);
  if (h.kind == kUnetDenoiser) return UnetDenoiser::load(is);
  throw std::runtime_error("checkpoint: unknown kind " + std::to_string(h.kind));
}

}  // namespace ssni
