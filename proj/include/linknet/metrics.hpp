#pragma once

// Segmentation scores: confusion matrices, class IoU, instance-weighted
// iIoU, and the log-frequency class weights used by the loss.

#include "linknet/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace linknet {

inline constexpr std::int32_t kDefaultIgnoreLabel = 255;

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Entry (t, p) counts pixels of true class t predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(Index num_classes, std::int32_t ignore_label = kDefaultIgnoreLabel);

  Index num_classes() const { return counts_.rows(); }
  std::int32_t ignore_label() const { return ignore_; }
  const CountMatrix& counts() const { return counts_; }
  std::int64_t total() const { return counts_.sum(); }

  /// Adds one count per pixel; pixels labelled ignore_label are skipped.
  void accumulate(std::span<const std::int32_t> labels, std::span<const std::int32_t> predictions);
  void merge(const ConfusionMatrix& other);

 private:
  CountMatrix counts_;
  std::int32_t ignore_;
};

/// TP/(TP+FP+FN) per class; NaN where the denominator is zero.
Eigen::VectorXd class_iou(const ConfusionMatrix& cm);

/// Unweighted mean over classes with a defined IoU.
double mean_iou(const ConfusionMatrix& cm);

/// Mean of the finite entries of `per_class` (NaN if there are none).
double nan_mean(const Eigen::VectorXd& per_class);

/// Average pixel size of the instances of each class over a set of images.
/// Instance ids are per image; 0 means "no instance". Classes without
/// instances get NaN.
class InstanceSizeTable {
 public:
  explicit InstanceSizeTable(Index num_classes, std::int32_t ignore_label = kDefaultIgnoreLabel);
  void add(std::span<const std::int32_t> labels, std::span<const std::int32_t> instances);
  Eigen::VectorXd averages() const;

 private:
  Eigen::VectorXd total_pixels_;
  Eigen::VectorXd instance_count_;
  std::int32_t ignore_;
};

/// Instance-weighted IoU. True-positive and false-negative pixels that
/// belong to an instance are weighted by avg_size(class) / size(instance);
/// pixels outside instances and false positives weigh 1. Classes without
/// instances report their plain IoU.
class InstanceIouAccumulator {
 public:
  InstanceIouAccumulator(Eigen::VectorXd average_sizes, std::int32_t ignore_label = kDefaultIgnoreLabel);

  void add(std::span<const std::int32_t> labels, std::span<const std::int32_t> instances,
           std::span<const std::int32_t> predictions);
  void merge(const InstanceIouAccumulator& other);

  Eigen::VectorXd per_class() const;
  double mean() const { return nan_mean(per_class()); }

 private:
  Eigen::VectorXd avg_;
  Eigen::VectorXd itp_, ifn_, fp_;
  ConfusionMatrix cm_;
  std::vector<bool> has_instances_;
};

/// Single-image convenience wrapper around InstanceIouAccumulator.
Eigen::VectorXd iiou(std::span<const std::int32_t> labels, std::span<const std::int32_t> instances,
                     std::span<const std::int32_t> predictions, const Eigen::VectorXd& average_sizes,
                     std::int32_t ignore_label = kDefaultIgnoreLabel);

/// w_c = 1 / ln(1.02 + p_c).
Eigen::VectorXd class_weights(const Eigen::VectorXd& pixel_frequencies);

/// Accumulates per-class pixel counts; frequencies() gives p_c over scored
/// pixels (ignore_label excluded from numerator and denominator).
class PixelFrequencyCounter {
 public:
  explicit PixelFrequencyCounter(Index num_classes, std::int32_t ignore_label = kDefaultIgnoreLabel);
  void add(std::span<const std::int32_t> labels);
  Eigen::VectorXd frequencies() const;

 private:
  Eigen::VectorXd counts_;
  std::int32_t ignore_;
};

struct MetricsReport {
  Eigen::VectorXd class_iou;
  Eigen::VectorXd class_iiou;
  double miou = 0.0;
  double iiou = 0.0;
};

/// Per-class table plus a "mIoU=<v> iIoU=<v>" summary line.
void write_metrics(std::ostream& os, const MetricsReport& report);
/// Tab-separated records: "class\t<c>\t<iou>\t<iiou>" per class, then
/// "summary\tmiou\t<v>\tiiou\t<v>".
void write_metrics_records(std::ostream& os, const MetricsReport& report);

}  // namespace linknet
