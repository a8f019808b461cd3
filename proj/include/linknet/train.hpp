#pragma once

// Toy-scale supervised training: weighted softmax cross-entropy, plain
// RMSProp, a synthetic shapes dataset, and train / evaluate loops.

#include "linknet/executor.hpp"
#include "linknet/gradcheck.hpp"
#include "linknet/linknet.hpp"
#include "linknet/metrics.hpp"

#include <Eigen/Core>

#include <functional>
#include <optional>
#include <vector>

namespace linknet {

struct TrainConfig {
  double learning_rate = 5e-4;
  Index batch_size = 4;
  int epochs = 15;
  std::uint64_t seed = 7;
  double rms_decay = 0.9;
  double rms_epsilon = 1e-8;
  bool use_class_weights = true;
  std::int32_t ignore_label = kDefaultIgnoreLabel;

  void validate() const;
};

/// Per-parameter squared-gradient accumulators, keyed like the gradients.
template <typename Scalar>
struct OptState {
  ParamStore<Scalar> accum;
};

struct Sample {
  TensorF image;                     // (C, H, W), values in [0, 1]
  TensorI labels;                    // (H, W)
  std::optional<TensorI> instances;  // (H, W), 0 = no instance
};

using Dataset = std::vector<Sample>;

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
struct LossResult {
  double loss = 0.0;
  Tensor<Scalar> grad_logits;
};

/// Softmax cross-entropy per pixel, weighted by weights[label] and
/// normalised by the summed weights of scored pixels. logits (N, C, H, W),
/// labels (N, H, W). Ignored pixels contribute neither loss nor gradient.
template <typename Scalar>
LossResult<Scalar> weighted_cross_entropy(const Tensor<Scalar>& logits, const TensorI& labels,
                                          const Eigen::VectorXd& weights,
                                          std::int32_t ignore_label = kDefaultIgnoreLabel) {
  if (logits.rank() != 4) throw ShapeError("loss: logits must be (N,C,H,W), got " + to_string(logits.shape()));
  const Index n = logits.dim(0), c = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  if (labels.shape() != Shape{n, logits.dim(2), logits.dim(3)})
    throw ShapeError("loss: labels " + to_string(labels.shape()) + " do not match logits " + to_string(logits.shape()));
  if (weights.size() != c) throw ShapeError("loss: need one weight per class");

  LossResult<Scalar> r{0.0, Tensor<Scalar>(logits.shape())};
  double weight_sum = 0.0;
  std::vector<double> prob(static_cast<std::size_t>(c));
  for (Index b = 0; b < n; ++b)
    for (Index k = 0; k < plane; ++k) {
      const std::int32_t t = labels[b * plane + k];
      if (t == ignore_label) continue;
      if (t < 0 || t >= c) throw std::out_of_range("loss: label " + std::to_string(t) + " outside class range");
      const Scalar* base = logits.data() + b * c * plane + k;
      double mx = base[0];
      for (Index j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(base[j * plane]));
      double z = 0.0;
      for (Index j = 0; j < c; ++j) {
        prob[static_cast<std::size_t>(j)] = std::exp(static_cast<double>(base[j * plane]) - mx);
        z += prob[static_cast<std::size_t>(j)];
      }
      const double w = weights[t];
      r.loss += w * (std::log(z) + mx - static_cast<double>(base[t * plane]));
      weight_sum += w;
      Scalar* g = r.grad_logits.data() + b * c * plane + k;
      for (Index j = 0; j < c; ++j)
        g[j * plane] = static_cast<Scalar>(w * (prob[static_cast<std::size_t>(j)] / z - (j == t ? 1.0 : 0.0)));
    }
  if (weight_sum <= 0.0) throw std::invalid_argument("loss: every pixel is ignored");
  r.loss /= weight_sum;
  r.grad_logits.array() /= static_cast<Scalar>(weight_sum);
  return r;
}

/// r <- rho*r + (1-rho)*g^2;  theta <- theta - lr*g/(sqrt(r) + eps).
template <typename Scalar>
void rmsprop_step(ParamStore<Scalar>& params, const ParamStore<Scalar>& grads, OptState<Scalar>& state,
                  const TrainConfig& config) {
  const double rho = config.rms_decay, lr = config.learning_rate, eps = config.rms_epsilon;
  for (const auto& [key, g] : grads) {
    Tensor<Scalar>& theta = params.at(key);
    require_same_shape(theta, g, "rmsprop");
    auto [it, fresh] = state.accum.try_emplace(key, g.shape());
    Tensor<Scalar>& r = it->second;
    for (Index i = 0; i < g.size(); ++i) {
      const double gi = g[i];
      const double ri = rho * r[i] + (1.0 - rho) * gi * gi;
      r[i] = static_cast<Scalar>(ri);
      theta[i] = static_cast<Scalar>(theta[i] - lr * gi / (std::sqrt(ri) + eps));
    }
  }
}

/// Background class 0 plus rectangles, discs and horizontal bands of the
/// other classes, each filled with a class colour plus Gaussian noise.
/// Every shape gets its own instance id.
Dataset make_toy_dataset(Index num_samples, Index height, Index width, Index num_classes, std::uint64_t seed);

/// Two-class set where one disc of class 1 covers about
/// `minority_fraction` of each image.
Dataset make_imbalanced_dataset(Index num_samples, Index height, Index width, double minority_fraction,
                                std::uint64_t seed);

/// Pixel frequencies of every class over a dataset.
Eigen::VectorXd dataset_frequencies(const Dataset& data, Index num_classes,
                                    std::int32_t ignore_label = kDefaultIgnoreLabel);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;  // mean of batch losses
  double miou = 0.0;  // from the train-mode predictions seen during the epoch
};

struct TrainResult {
  ParamStore<float> params;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Stacks samples[indices] into (B, C, H, W) images and (B, H, W) labels.
std::pair<TensorF, TensorI> make_batch(const Dataset& data, std::span<const std::size_t> indices);

/// Per-pixel argmax over the class axis; ties go to the lower class id.
TensorI argmax_classes(const TensorF& logits);

TrainResult train_loop(const Graph& g, ParamStore<float> params, const Dataset& data, const TrainConfig& config,
                       const EpochCallback& on_epoch = {});

MetricsReport evaluate(const Graph& g, const ParamStore<float>& params, const Dataset& data,
                       std::int32_t ignore_label = kDefaultIgnoreLabel);

/// Scores given predictions (one (H, W) map per sample) against the dataset.
MetricsReport score_predictions(const Dataset& data, const std::vector<TensorI>& predictions, Index num_classes,
                                std::int32_t ignore_label = kDefaultIgnoreLabel);

// Model gradcheck probes skip entries whose analytic gradient is below this;
// there central differences are dominated by rounding.
inline constexpr double kGradcheckFloor = 1e-6;

/// Finite-difference check of the full model: width-/16 net, input
/// (4, 3, 32, 32), 3 classes, train-mode forward and the unweighted loss,
/// all in double. Probes `num_params` randomly drawn parameter entries; a
/// step that flips a ReLU or pooling decision is halved (down to h/64).
GradcheckReport model_gradcheck(std::uint64_t seed, double tolerance = 1e-4, int num_params = 20, double h = 1e-5);

}  // namespace linknet
