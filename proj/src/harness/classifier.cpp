#include "ssni/harness/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ssni/checkpoint.hpp"
#include "ssni/io.hpp"
#include "ssni/rng.hpp"

namespace ssni {

struct MlpClassifier::Workspace {
  std::vector<double> x, z1, a1, z2, a2, logits;
};

MlpClassifier::MlpClassifier(std::vector<std::size_t> input_shape, int n_classes,
                             int hidden, std::uint64_t seed)
    : input_shape_(std::move(input_shape)),
      n_classes_(n_classes),
      hidden_(hidden),
      seed_(seed) {
  if (n_classes_ < 2) throw std::invalid_argument("classifier: need >= 2 classes");
  if (hidden_ < 1) throw std::invalid_argument("classifier: hidden width must be >= 1");
  dim_ = static_cast<int>(Tensor::count(input_shape_));
  RandomStream rng(derive_key({seed_, 0x636c6673ULL}));
  l1_.init(ps_, dim_, hidden_, rng);
  l2_.init(ps_, hidden_, hidden_, rng);
  head_.init(ps_, hidden_, n_classes_, rng);
}

std::vector<double> MlpClassifier::forward(const Tensor& x, Workspace& ws) const {
  if (x.shape != input_shape_)
    throw std::invalid_argument("classifier: input shape " + shape_str(x.shape) +
                                " does not match " + shape_str(input_shape_));
  ws.x = x.data;
  ws.z1.assign(static_cast<std::size_t>(hidden_), 0.0);
  l1_.forward(ps_, ws.x, ws.z1);
  ws.a1.resize(ws.z1.size());
  for (std::size_t i = 0; i < ws.z1.size(); ++i) ws.a1[i] = nn::silu(ws.z1[i]);
  ws.z2.assign(static_cast<std::size_t>(hidden_), 0.0);
  l2_.forward(ps_, ws.a1, ws.z2);
  ws.a2.resize(ws.z2.size());
  for (std::size_t i = 0; i < ws.z2.size(); ++i) ws.a2[i] = nn::silu(ws.z2[i]);
  ws.logits.assign(static_cast<std::size_t>(n_classes_), 0.0);
  head_.forward(ps_, ws.a2, ws.logits);
  return ws.logits;
}

Tensor MlpClassifier::backward(const Workspace& ws, std::span<const double> grad_logits,
                               bool param_grads) {
  std::vector<double> ga2(static_cast<std::size_t>(hidden_), 0.0);
  head_.backward(ps_, ws.a2, grad_logits, ga2, param_grads);
  std::vector<double> gz2(ws.z2.size());
  for (std::size_t i = 0; i < gz2.size(); ++i) gz2[i] = ga2[i] * nn::silu_grad(ws.z2[i]);
  std::vector<double> ga1(static_cast<std::size_t>(hidden_), 0.0);
  l2_.backward(ps_, ws.a1, gz2, ga1, param_grads);
  std::vector<double> gz1(ws.z1.size());
  for (std::size_t i = 0; i < gz1.size(); ++i) gz1[i] = ga1[i] * nn::silu_grad(ws.z1[i]);
  std::vector<double> gx(static_cast<std::size_t>(dim_), 0.0);
  l1_.backward(ps_, ws.x, gz1, gx, param_grads);
  return Tensor(input_shape_, gx);
}

std::vector<double> MlpClassifier::logits(const Tensor& x) const {
  Workspace ws;
  return forward(x, ws);
}

Tensor MlpClassifier::vjp_input(const Tensor& x, std::span<const double> grad_logits) const {
  if (grad_logits.size() != static_cast<std::size_t>(n_classes_))
    throw std::invalid_argument("classifier vjp: cotangent size mismatch");
  Workspace ws;
  forward(x, ws);
  return const_cast<MlpClassifier*>(this)->backward(ws, grad_logits, false);
}

void MlpClassifier::save(std::ostream& os) const {
  ckpt::write_header(os, ckpt::kMlpClassifier, input_shape_, 0, seed_);
  io::write_u32(os, 2);
  io::write_i32(os, n_classes_);
  io::write_i32(os, hidden_);
  io::write_f64s(os, ps_.values);
}

std::unique_ptr<MlpClassifier> MlpClassifier::load(std::istream& is) {
  ckpt::Header h = ckpt::read_header(is);
  if (h.kind != ckpt::kMlpClassifier)
    throw std::runtime_error("checkpoint: not a classifier");
  std::uint32_t n_arch = io::read_u32(is);
  if (n_arch != 2) throw std::runtime_error("checkpoint: bad arch block");
  int n_classes = io::read_i32(is);
  int hidden = io::read_i32(is);
  auto net = std::make_unique<MlpClassifier>(h.shape, n_classes, hidden, h.seed);
  auto values = io::read_f64s(is);
  if (values.size() != net->ps_.values.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  net->ps_.values = std::move(values);
  return net;
}

ClassifierTrainResult train_classifier(const Dataset& dataset, const TrainHyper& hyper,
                                       std::uint64_t seed) {
  std::size_t n = dataset.size();
  if (n == 0) throw std::invalid_argument("train_classifier: empty dataset");
  if (dataset.labels.size() != n || dataset.n_classes < 2)
    throw std::invalid_argument("train_classifier: needs a labeled dataset");
  if (hyper.steps < 0 || hyper.batch_size < 1 || !(hyper.lr > 0.0))
    throw std::invalid_argument("train_classifier: bad hyperparameters");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  RandomStream split_rng(derive_key({seed, 0x73706c63ULL}));
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[split_rng.next_u64() % i]);
  std::size_t n_hold = 0;
  if (n > 1 && hyper.holdout_frac > 0.0)
    n_hold = static_cast<std::size_t>(
        std::max(1.0, std::floor(hyper.holdout_frac * static_cast<double>(n))));
  if (n_hold >= n) n_hold = n - 1;

  auto item = item_shape(dataset.xs);
  ClassifierTrainResult result;
  result.classifier =
      std::make_unique<MlpClassifier>(item, dataset.n_classes, hyper.hidden, seed);
  MlpClassifier& net = *result.classifier;

  nn::Adam opt;
  opt.lr = hyper.lr;
  MlpClassifier::Workspace ws;
  std::size_t n_train = n - n_hold;
  for (int step = 0; step < hyper.steps; ++step) {
    RandomStream rng(derive_key({seed, 0x74726e63ULL, static_cast<std::uint64_t>(step)}));
    net.store().zero_grads();
    double loss = 0.0;
    for (int b = 0; b < hyper.batch_size; ++b) {
      std::size_t idx = order[n_hold + rng.next_u64() % n_train];
      Tensor x = batch_row(dataset.xs, idx);
      auto logits = net.forward(x, ws);
      std::vector<double> gl(logits.size(), 0.0);
      loss += nn::softmax_cross_entropy(logits, dataset.labels[idx], gl);
      double inv = 1.0 / static_cast<double>(hyper.batch_size);
      for (double& g : gl) g *= inv;
      net.backward(ws, gl, true);
    }
    loss /= static_cast<double>(hyper.batch_size);
    if (!std::isfinite(loss))
      throw std::runtime_error("train_classifier: non-finite loss at step " +
                               std::to_string(step) + "; lower the learning rate");
    result.loss_curve.push_back(loss);
    opt.step(net.store());
  }

  // held-out accuracy (training slice when no held-out rows exist)
  std::size_t eval_n = n_hold == 0 ? n : n_hold;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < eval_n; ++i) {
    std::size_t idx = order[i];
    correct += net.predict(batch_row(dataset.xs, idx)) == dataset.labels[idx] ? 1 : 0;
  }
  result.holdout_accuracy = static_cast<double>(correct) / static_cast<double>(eval_n);
  return result;
}

double classifier_accuracy(const Classifier& clf, const Tensor& xs,
                           std::span<const int> labels) {
  std::size_t rows = batch_rows(xs);
  if (labels.size() != rows)
    throw std::invalid_argument("classifier_accuracy: label count mismatch");
  if (rows == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < rows; ++i)
    correct += clf.predict(batch_row(xs, i)) == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(rows);
}

void save_classifier(const std::string& path, const MlpClassifier& c) {
  std::ostringstream os(std::ios::binary);
  c.save(os);
  io::atomic_write_file(path, os.str());
}

std::unique_ptr<MlpClassifier> load_classifier(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  return MlpClassifier::load(is);
}

}  // namespace ssni
