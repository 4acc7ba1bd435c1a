#pragma once

#include <iosfwd>
#include <memory>
#include <string>

#include "ssni/harness/dataset.hpp"
#include "ssni/nets.hpp"

namespace ssni {

// Two-hidden-layer MLP over flattened inputs; stands in for the large
// pre-trained classifiers at desk scale.
class MlpClassifier final : public Classifier {
 public:
  MlpClassifier(std::vector<std::size_t> input_shape, int n_classes, int hidden,
                std::uint64_t seed);

  int n_classes() const override { return n_classes_; }
  std::vector<double> logits(const Tensor& x) const override;
  Tensor vjp_input(const Tensor& x, std::span<const double> grad_logits) const override;

  const std::vector<std::size_t>& input_shape() const { return input_shape_; }
  std::uint64_t creation_seed() const { return seed_; }
  nn::ParamStore& store() { return ps_; }

  struct Workspace;
  std::vector<double> forward(const Tensor& x, Workspace& ws) const;
  Tensor backward(const Workspace& ws, std::span<const double> grad_logits,
                  bool param_grads);

  void save(std::ostream& os) const;
  static std::unique_ptr<MlpClassifier> load(std::istream& is);

 private:
  std::vector<std::size_t> input_shape_;
  int n_classes_ = 0, dim_ = 0, hidden_ = 0;
  std::uint64_t seed_ = 0;
  nn::ParamStore ps_;
  nn::Linear l1_, l2_, head_;
};

struct ClassifierTrainResult {
  std::unique_ptr<MlpClassifier> classifier;
  std::vector<double> loss_curve;
  double holdout_accuracy = 0.0;
};

// Cross-entropy training with a seed-fixed held-out split; aborts on a
// non-finite loss.
ClassifierTrainResult train_classifier(const Dataset& dataset, const TrainHyper& hyper,
                                       std::uint64_t seed);

double classifier_accuracy(const Classifier& clf, const Tensor& xs,
                           std::span<const int> labels);

void save_classifier(const std::string& path, const MlpClassifier& c);
std::unique_ptr<MlpClassifier> load_classifier(const std::string& path);

}  // namespace ssni
