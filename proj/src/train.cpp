#include "linknet/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace linknet {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
  if (!(rms_decay > 0.0 && rms_decay < 1.0)) throw std::invalid_argument("rms_decay must be in (0, 1)");
  if (!(rms_epsilon > 0.0)) throw std::invalid_argument("rms_epsilon must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
}

// ---------------------------------------------------------------- toy data

namespace {

std::array<double, 3> class_color(Index c) {
  static constexpr std::array<std::array<double, 3>, 12> kPalette{{
      {0.15, 0.15, 0.15}, {0.85, 0.20, 0.20}, {0.20, 0.75, 0.25}, {0.25, 0.35, 0.90},
      {0.90, 0.85, 0.20}, {0.80, 0.30, 0.85}, {0.20, 0.85, 0.85}, {0.95, 0.55, 0.15},
      {0.55, 0.35, 0.15}, {0.60, 0.60, 0.60}, {0.95, 0.95, 0.95}, {0.45, 0.10, 0.45},
  }};
  if (c < static_cast<Index>(kPalette.size())) return kPalette[static_cast<std::size_t>(c)];
  // Golden-ratio hue walk for larger label sets.
  const double h = std::fmod(0.61803398875 * static_cast<double>(c), 1.0);
  return {0.5 + 0.4 * std::cos(6.2831853 * h), 0.5 + 0.4 * std::cos(6.2831853 * (h + 1.0 / 3)),
          0.5 + 0.4 * std::cos(6.2831853 * (h + 2.0 / 3))};
}

struct Canvas {
  Index h, w;
  std::vector<std::int32_t> label, instance;
  Canvas(Index h_, Index w_)
      : h(h_), w(w_), label(static_cast<std::size_t>(h_ * w_), 0), instance(static_cast<std::size_t>(h_ * w_), 0) {}

  template <typename Inside>
  void paint(std::int32_t cls, std::int32_t inst, Inside inside) {
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j)
        if (inside(i, j)) {
          label[static_cast<std::size_t>(i * w + j)] = cls;
          instance[static_cast<std::size_t>(i * w + j)] = inst;
        }
  }

  Index pixels_of(std::int32_t cls) const { return std::count(label.begin(), label.end(), cls); }
};

Index rand_in(Prng& rng, Index lo, Index hi) {  // inclusive
  return lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

void draw_shape(Canvas& cv, Prng& rng, std::int32_t cls, std::int32_t inst) {
  const Index h = cv.h, w = cv.w;
  switch (rng.below(3)) {
    case 0: {  // rectangle
      const Index rh = rand_in(rng, std::max<Index>(2, h / 6), std::max<Index>(2, h / 2));
      const Index rw = rand_in(rng, std::max<Index>(2, w / 6), std::max<Index>(2, w / 2));
      const Index top = rand_in(rng, 0, h - rh), left = rand_in(rng, 0, w - rw);
      cv.paint(cls, inst, [&](Index i, Index j) { return i >= top && i < top + rh && j >= left && j < left + rw; });
      break;
    }
    case 1: {  // disc
      const double r = rng.uniform(std::max(1.5, h / 8.0), std::max(2.0, h / 4.0));
      const double ci = rng.uniform(r, static_cast<double>(h) - r), cj = rng.uniform(r, static_cast<double>(w) - r);
      cv.paint(cls, inst, [&](Index i, Index j) {
        const double di = static_cast<double>(i) + 0.5 - ci, dj = static_cast<double>(j) + 0.5 - cj;
        return di * di + dj * dj <= r * r;
      });
      break;
    }
    default: {  // horizontal band
      const Index bh = rand_in(rng, std::max<Index>(1, h / 8), std::max<Index>(1, h / 4));
      const Index top = rand_in(rng, 0, h - bh);
      cv.paint(cls, inst, [&](Index i, Index) { return i >= top && i < top + bh; });
      break;
    }
  }
}

Sample render(const Canvas& cv, Prng& rng, double noise) {
  Sample s{TensorF({3, cv.h, cv.w}), TensorI({cv.h, cv.w}, cv.label), TensorI({cv.h, cv.w}, cv.instance)};
  const Index plane = cv.h * cv.w;
  for (Index k = 0; k < plane; ++k) {
    const auto color = class_color(cv.label[static_cast<std::size_t>(k)]);
    for (Index ch = 0; ch < 3; ++ch) {
      const double v = color[static_cast<std::size_t>(ch)] + noise * rng.normal();
      s.image[ch * plane + k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return s;
}

constexpr double kPixelNoise = 0.08;
constexpr Index kMinVisiblePixels = 4;

}  // namespace

Dataset make_toy_dataset(Index num_samples, Index height, Index width, Index num_classes, std::uint64_t seed) {
  if (num_samples < 0 || height < 8 || width < 8) throw std::invalid_argument("toy dataset: bad size");
  if (num_classes < 1 || num_classes > 255) throw std::invalid_argument("toy dataset: classes must be in [1, 255]");
  Prng rng(seed);
  Dataset out;
  out.reserve(static_cast<std::size_t>(num_samples));
  for (Index s = 0; s < num_samples; ++s) {
    Canvas cv(height, width);
    std::vector<std::int32_t> order(static_cast<std::size_t>(num_classes - 1));
    std::iota(order.begin(), order.end(), 1);
    rng.shuffle(order);
    std::int32_t inst = 0;
    for (std::int32_t cls : order) {
      draw_shape(cv, rng, cls, ++inst);
      if (rng.uniform() < 0.3) draw_shape(cv, rng, cls, ++inst);
    }
    // Classes buried under later shapes are drawn once more on top.
    for (std::int32_t cls : order)
      if (cv.pixels_of(cls) < kMinVisiblePixels) draw_shape(cv, rng, cls, ++inst);
    out.push_back(render(cv, rng, kPixelNoise));
  }
  return out;
}

Dataset make_imbalanced_dataset(Index num_samples, Index height, Index width, double minority_fraction,
                                std::uint64_t seed) {
  if (!(minority_fraction > 0.0 && minority_fraction < 1.0))
    throw std::invalid_argument("minority_fraction must be in (0, 1)");
  Prng rng(seed);
  Dataset out;
  const double r = std::sqrt(minority_fraction * static_cast<double>(height * width) / 3.14159265358979);
  for (Index s = 0; s < num_samples; ++s) {
    Canvas cv(height, width);
    const double ci = rng.uniform(std::min(r, height / 2.0), std::max(height - r, height / 2.0));
    const double cj = rng.uniform(std::min(r, width / 2.0), std::max(width - r, width / 2.0));
    cv.paint(1, 1, [&](Index i, Index j) {
      const double di = static_cast<double>(i) + 0.5 - ci, dj = static_cast<double>(j) + 0.5 - cj;
      return di * di + dj * dj <= r * r;
    });
    out.push_back(render(cv, rng, kPixelNoise));
  }
  return out;
}

Eigen::VectorXd dataset_frequencies(const Dataset& data, Index num_classes, std::int32_t ignore_label) {
  PixelFrequencyCounter counter(num_classes, ignore_label);
  for (const Sample& s : data) counter.add(s.labels.values());
  return counter.frequencies();
}

// ---------------------------------------------------------------- loops

std::pair<TensorF, TensorI> make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("empty batch");
  const Sample& first = data.at(indices[0]);
  const Index c = first.image.dim(0), h = first.image.dim(1), w = first.image.dim(2);
  const auto b = static_cast<Index>(indices.size());
  TensorF images({b, c, h, w});
  TensorI labels({b, h, w});
  for (Index k = 0; k < b; ++k) {
    const Sample& s = data.at(indices[static_cast<std::size_t>(k)]);
    if (s.image.shape() != first.image.shape() || s.labels.shape() != Shape{h, w})
      throw ShapeError("batch samples differ in shape");
    std::copy(s.image.values().begin(), s.image.values().end(), images.data() + k * c * h * w);
    std::copy(s.labels.values().begin(), s.labels.values().end(), labels.data() + k * h * w);
  }
  return {std::move(images), std::move(labels)};
}

TensorI argmax_classes(const TensorF& logits) {
  const Index n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3), plane = h * w;
  TensorI out({n, h, w});
  for (Index b = 0; b < n; ++b)
    for (Index k = 0; k < plane; ++k) {
      const float* p = logits.data() + b * c * plane + k;
      std::int32_t best = 0;
      for (Index j = 1; j < c; ++j)
        if (p[j * plane] > p[best * plane]) best = static_cast<std::int32_t>(j);
      out[b * plane + k] = best;
    }
  return out;
}

TrainResult train_loop(const Graph& g, ParamStore<float> params, const Dataset& data, const TrainConfig& config,
                       const EpochCallback& on_epoch) {
  config.validate();
  check_params(g, params);
  if (data.empty()) throw std::invalid_argument("training set is empty");
  const Index num_classes = g.node(g.output()).conv.out_channels;

  const Eigen::VectorXd weights = config.use_class_weights
                                      ? class_weights(dataset_frequencies(data, num_classes, config.ignore_label))
                                      : Eigen::VectorXd::Ones(num_classes);
  Prng rng(config.seed);
  OptState<float> opt;
  TrainResult result;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    ConfusionMatrix cm(num_classes, config.ignore_label);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      auto [images, labels] = make_batch(data, std::span(order).subspan(start, end - start));
      auto fwd = forward(g, params, images, Mode::Train);
      auto loss = weighted_cross_entropy(fwd.logits, labels, weights, config.ignore_label);
      if (!std::isfinite(loss.loss))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches));
      cm.accumulate(labels.values(), argmax_classes(fwd.logits).values());
      auto grads = backward(g, params, fwd.cache, loss.grad_logits);
      apply_running_stats(params, std::move(fwd.running_stats));
      rmsprop_step(params, grads, opt, config);
      loss_sum += loss.loss;
      ++batches;
    }
    EpochLog entry{epoch, loss_sum / static_cast<double>(batches), mean_iou(cm)};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  result.params = std::move(params);
  return result;
}

MetricsReport score_predictions(const Dataset& data, const std::vector<TensorI>& predictions, Index num_classes,
                                std::int32_t ignore_label) {
  if (predictions.size() != data.size()) throw std::invalid_argument("one prediction per sample required");
  ConfusionMatrix cm(num_classes, ignore_label);
  InstanceSizeTable sizes(num_classes, ignore_label);
  for (const Sample& s : data)
    if (s.instances) sizes.add(s.labels.values(), s.instances->values());
  InstanceIouAccumulator inst(sizes.averages(), ignore_label);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& s = data[i];
    const TensorI& pred = predictions[i];
    if (pred.size() != s.labels.size()) throw ShapeError("prediction size does not match label map");
    cm.accumulate(s.labels.values(), pred.values());
    if (s.instances) {
      inst.add(s.labels.values(), s.instances->values(), pred.values());
    } else {
      const std::vector<std::int32_t> zeros(static_cast<std::size_t>(s.labels.size()), 0);
      inst.add(s.labels.values(), zeros, pred.values());
    }
  }
  MetricsReport r;
  r.class_iou = class_iou(cm);
  r.class_iiou = inst.per_class();
  r.miou = nan_mean(r.class_iou);
  r.iiou = nan_mean(r.class_iiou);
  return r;
}

MetricsReport evaluate(const Graph& g, const ParamStore<float>& params, const Dataset& data,
                       std::int32_t ignore_label) {
  check_params(g, params);
  const Index num_classes = g.node(g.output()).conv.out_channels;
  std::vector<TensorI> predictions;
  predictions.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t idx[1] = {i};
    auto [image, labels] = make_batch(data, idx);
    auto fwd = forward(g, params, image, Mode::Infer);
    predictions.push_back(argmax_classes(fwd.logits).reshaped(data[i].labels.shape()));
  }
  return score_predictions(data, predictions, num_classes, ignore_label);
}

namespace {

// ReLU sign pattern and max-pool winners of a train-mode forward.
std::vector<Index> activation_pattern(const Graph& g, const ForwardCache<double>& cache) {
  std::vector<Index> pattern;
  for (std::size_t i = 0; i < g.nodes().size(); ++i) {
    const Node& n = g.nodes()[i];
    if (n.kind == NodeKind::Relu)
      for (double v : cache.values[static_cast<std::size_t>(n.inputs[0])].values()) pattern.push_back(v > 0.0);
    else if (n.kind == NodeKind::MaxPool) {
      const auto& am = cache.argmax.at(static_cast<NodeId>(i));
      pattern.insert(pattern.end(), am.begin(), am.end());
    }
  }
  return pattern;
}

}  // namespace

GradcheckReport model_gradcheck(std::uint64_t seed, double tolerance, int num_params, double h) {
  LinkConfig config = LinkConfig::scaled(16);
  config.num_classes = 3;
  config.height = 32;
  config.width = 32;
  const Graph g = build_linknet(config);
  ParamStore<double> params = init_params<double>(g, seed);

  Prng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  // Random gamma/beta/bias so every parameter gets a generic gradient.
  for (const ParamInfo& p : g.params())
    if (p.role == ParamRole::Gamma) params.at(p.key) = random_uniform<double>(rng, p.shape, 0.5, 1.5);
    else if (p.role == ParamRole::Beta || p.role == ParamRole::Bias) params.at(p.key) = random_normal<double>(rng, p.shape, 0.1);
  const auto x = random_normal<double>(rng, {4, 3, 32, 32});
  TensorI labels({4, 32, 32});
  for (auto& v : labels.values()) v = static_cast<std::int32_t>(rng.below(3));
  const Eigen::VectorXd weights = Eigen::VectorXd::Ones(3);

  auto fwd = forward(g, params, x, Mode::Train);
  const auto base_pattern = activation_pattern(g, fwd.cache);
  const auto grads = backward(g, params, fwd.cache, weighted_cross_entropy(fwd.logits, labels, weights).grad_logits);

  // Loss at a perturbed entry, or nullopt when the step changes a ReLU sign
  // or a pooling winner.
  auto perturbed = [&](const std::string& key, Index e, double delta) -> std::optional<double> {
    ParamStore<double> p = params;
    p.at(key)[e] += delta;
    auto r = forward(g, p, x, Mode::Train);
    if (activation_pattern(g, r.cache) != base_pattern) return std::nullopt;
    return weighted_cross_entropy(r.logits, labels, weights).loss;
  };

  std::vector<std::string> keys;
  for (const auto& [k, t] : grads) keys.push_back(k);

  GradcheckReport report;
  report.name = "model";
  report.tolerance = tolerance;
  int attempts = 0;
  while (report.checked < num_params && attempts++ < 100 * num_params) {
    const auto ki = static_cast<std::size_t>(rng.below(keys.size()));
    const TensorD& gk = grads.at(keys[ki]);
    const auto e = static_cast<Index>(rng.below(static_cast<std::uint64_t>(gk.size())));
    const double analytic = gk[e];
    if (std::abs(analytic) < kGradcheckFloor) continue;
    std::optional<double> numeric;
    for (double step = h; step >= h / 64 && !numeric; step /= 2) {
      const auto up = perturbed(keys[ki], e, step), down = perturbed(keys[ki], e, -step);
      if (up && down) numeric = (*up - *down) / (2 * step);
    }
    if (!numeric) continue;
    const double err = relative_error(analytic, *numeric);
    if (report.checked == 0 || err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_input = ki;
      report.worst_element = e;
      report.worst_analytic = analytic;
      report.worst_numeric = *numeric;
    }
    ++report.checked;
  }
  report.passed = report.checked == num_params && report.max_rel_error <= tolerance;
  return report;
}

}  // namespace linknet
