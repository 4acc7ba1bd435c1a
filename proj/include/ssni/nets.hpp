#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "ssni/nn.hpp"
#include "ssni/schedule.hpp"
#include "ssni/tensor.hpp"

namespace ssni {

struct TrainHyper {
  int steps = 2000;
  int batch_size = 128;
  double lr = 1e-3;
  int hidden = 96;         // residual-MLP width
  int blocks = 2;          // residual blocks
  int base_channels = 12;  // image-net channel base
  int time_embed_dim = 32;
  double holdout_frac = 0.1;
};

// Epsilon-prediction network. Evaluation is deterministic given fixed
// parameters; vjp_input backpropagates an output cotangent to the input,
// which is what attack-time differentiation needs.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual const std::vector<std::size_t>& input_shape() const = 0;
  virtual int schedule_T() const = 0;
  virtual std::uint64_t creation_seed() const = 0;

  // eps_hat(x_t, t), t in [1, schedule_T]; output has the shape of x_t.
  virtual Tensor evaluate(const Tensor& x_t, int t) const = 0;
  // (d eps_hat / d x_t)^T * grad_out
  virtual Tensor vjp_input(const Tensor& x_t, int t, const Tensor& grad_out) const = 0;
};

// Minimal classifier surface the defense and the attacks need.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual int n_classes() const = 0;
  virtual std::vector<double> logits(const Tensor& x) const = 0;
  virtual Tensor vjp_input(const Tensor& x, std::span<const double> grad_logits) const = 0;
  int predict(const Tensor& x) const;
};

// ---- concrete denoisers -----------------------------------------------------

// Residual MLP for vector data; the timestep enters through a sinusoidal
// embedding projected onto the hidden width.
class MlpDenoiser final : public Denoiser {
 public:
  MlpDenoiser(std::vector<std::size_t> input_shape, int schedule_T,
              const TrainHyper& arch, std::uint64_t seed);

  const std::vector<std::size_t>& input_shape() const override { return input_shape_; }
  int schedule_T() const override { return schedule_T_; }
  std::uint64_t creation_seed() const override { return seed_; }
  Tensor evaluate(const Tensor& x_t, int t) const override;
  Tensor vjp_input(const Tensor& x_t, int t, const Tensor& grad_out) const override;

  struct Workspace;
  Tensor forward(const Tensor& x_t, int t, Workspace& ws) const;
  Tensor backward(const Workspace& ws, const Tensor& grad_out, bool param_grads);

  nn::ParamStore& store() { return ps_; }
  const nn::ParamStore& store() const { return ps_; }

  void save(std::ostream& os) const;
  static std::unique_ptr<MlpDenoiser> load(std::istream& is);

 private:
  std::vector<std::size_t> input_shape_;
  int schedule_T_ = 0;
  std::uint64_t seed_ = 0;
  int dim_ = 0, hidden_ = 0, blocks_ = 0, temb_dim_ = 0;
  nn::ParamStore ps_;
  nn::Linear in_, tproj_, out_;
  std::vector<nn::Linear> block_a_, block_b_;
};

// Three-level encoder/decoder conv net for tiny images with skip connections
// and per-stage timestep biases. Spatial dims must be divisible by 4.
class UnetDenoiser final : public Denoiser {
 public:
  UnetDenoiser(std::vector<std::size_t> input_shape, int schedule_T,
               const TrainHyper& arch, std::uint64_t seed);

  const std::vector<std::size_t>& input_shape() const override { return input_shape_; }
  int schedule_T() const override { return schedule_T_; }
  std::uint64_t creation_seed() const override { return seed_; }
  Tensor evaluate(const Tensor& x_t, int t) const override;
  Tensor vjp_input(const Tensor& x_t, int t, const Tensor& grad_out) const override;

  struct Workspace;
  Tensor forward(const Tensor& x_t, int t, Workspace& ws) const;
  Tensor backward(const Workspace& ws, const Tensor& grad_out, bool param_grads);

  nn::ParamStore& store() { return ps_; }
  const nn::ParamStore& store() const { return ps_; }

  void save(std::ostream& os) const;
  static std::unique_ptr<UnetDenoiser> load(std::istream& is);

 private:
  std::vector<std::size_t> input_shape_;
  int schedule_T_ = 0;
  std::uint64_t seed_ = 0;
  int c_in_ = 0, h_ = 0, w_ = 0, base_ = 0, temb_dim_ = 0;
  nn::ParamStore ps_;
  nn::Conv3x3 enc0a_, enc0b_, enc1a_, enc1b_, mida_, midb_;
  nn::Conv3x3 dec1a_, dec1b_, dec0a_, dec0b_, out_;
  nn::Linear tp0_, tp1_, tp2_, tp3_, tp4_;
};

// ---- denoiser training -------------------------------------------------------

struct TrainResult {
  std::unique_ptr<Denoiser> denoiser;
  std::vector<double> loss_curve;  // per-step training loss (mean per-dim MSE)
  double holdout_before = 0.0;
  double holdout_after = 0.0;
};

// Trains an epsilon predictor on the rows of `dataset` (a batch tensor).
// Rank-1 items get the residual MLP, rank-3 items the conv net. Training
// aborts with a diagnostic if the loss turns non-finite.
TrainResult train_denoiser(const Tensor& dataset, const NoiseSchedule& schedule,
                           const TrainHyper& hyper, std::uint64_t seed);

// ---- score evaluation --------------------------------------------------------

// s(x,t) = -eps_hat(x,t) / sqrt(1 - alpha_bar_t); t = 0 is rejected because
// the identity degenerates there.
Tensor score_from_denoiser(const Denoiser& d, const Tensor& x, int t,
                           const NoiseSchedule& schedule);

// Closed-form score of the diffused isotropic-Gaussian marginal
// N(sqrt(alpha_bar_t) mu0, (alpha_bar_t sigma0sq + 1 - alpha_bar_t) I).
Tensor analytic_gaussian_score(const Tensor& mu0, double sigma0sq,
                               const NoiseSchedule& schedule, const Tensor& x, int t);

enum class ScoreBacking { derived, analytic };

// Score function with either a denoiser-derived or an analytic Gaussian
// backing; both expose the same call surface to the EPS machinery.
class ScoreEstimator {
 public:
  static ScoreEstimator derived(const Denoiser& d, const NoiseSchedule& schedule);
  static ScoreEstimator analytic(Tensor mu0, double sigma0sq,
                                 const NoiseSchedule& schedule);

  ScoreBacking mode() const { return mode_; }
  const NoiseSchedule& schedule() const { return *schedule_; }
  Tensor score(const Tensor& x, int t) const;

 private:
  ScoreEstimator() = default;
  ScoreBacking mode_ = ScoreBacking::analytic;
  const Denoiser* denoiser_ = nullptr;
  const NoiseSchedule* schedule_ = nullptr;
  Tensor mu0_;
  double sigma0sq_ = 1.0;
};

// ---- checkpoints --------------------------------------------------------------

// Versioned binary blob; round-trips parameters bit-exactly.
void save_denoiser(const std::string& path, const Denoiser& d);
std::unique_ptr<Denoiser> load_denoiser(const std::string& path);

}  // namespace ssni
