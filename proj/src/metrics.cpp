#include "linknet/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>

namespace linknet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_label(std::int32_t v, Index num_classes, const char* what) {
  if (v < 0 || v >= num_classes)
    throw std::out_of_range(std::string(what) + " " + std::to_string(v) + " outside [0, " +
                            std::to_string(num_classes) + ")");
}

void check_sizes(std::size_t a, std::size_t b) {
  if (a != b) throw ShapeError("label/prediction maps differ in size: " + std::to_string(a) + " vs " + std::to_string(b));
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(Index num_classes, std::int32_t ignore_label)
    : counts_(CountMatrix::Zero(num_classes, num_classes)), ignore_(ignore_label) {
  if (num_classes < 1) throw std::invalid_argument("confusion matrix needs >= 1 class");
}

void ConfusionMatrix::accumulate(std::span<const std::int32_t> labels, std::span<const std::int32_t> predictions) {
  check_sizes(labels.size(), predictions.size());
  const Index c = num_classes();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == ignore_) continue;
    check_label(labels[i], c, "label");
    check_label(predictions[i], c, "prediction");
    ++counts_(labels[i], predictions[i]);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes() != num_classes()) throw std::invalid_argument("merging confusion matrices of different size");
  counts_ += other.counts_;
}

Eigen::VectorXd class_iou(const ConfusionMatrix& cm) {
  const CountMatrix& m = cm.counts();
  const Index c = m.rows();
  Eigen::VectorXd iou(c);
  for (Index k = 0; k < c; ++k) {
    const auto tp = static_cast<double>(m(k, k));
    const auto fn = static_cast<double>(m.row(k).sum()) - tp;
    const auto fp = static_cast<double>(m.col(k).sum()) - tp;
    const double denom = tp + fp + fn;
    iou[k] = denom > 0 ? tp / denom : kNaN;
  }
  return iou;
}

double nan_mean(const Eigen::VectorXd& v) {
  double sum = 0;
  Index n = 0;
  for (Index k = 0; k < v.size(); ++k)
    if (std::isfinite(v[k])) {
      sum += v[k];
      ++n;
    }
  return n ? sum / static_cast<double>(n) : kNaN;
}

double mean_iou(const ConfusionMatrix& cm) { return nan_mean(class_iou(cm)); }

// ---------------------------------------------------------------- instances

InstanceSizeTable::InstanceSizeTable(Index num_classes, std::int32_t ignore_label)
    : total_pixels_(Eigen::VectorXd::Zero(num_classes)),
      instance_count_(Eigen::VectorXd::Zero(num_classes)),
      ignore_(ignore_label) {}

namespace {

struct InstanceStats {
  std::int32_t label = -1;
  Index size = 0;
};

// Pixel count and class of every instance in one image.
std::map<std::int32_t, InstanceStats> collect_instances(std::span<const std::int32_t> labels,
                                                        std::span<const std::int32_t> instances, Index num_classes,
                                                        std::int32_t ignore) {
  check_sizes(labels.size(), instances.size());
  std::map<std::int32_t, InstanceStats> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (instances[i] == 0 || labels[i] == ignore) continue;
    check_label(labels[i], num_classes, "label");
    InstanceStats& s = out[instances[i]];
    if (s.label >= 0 && s.label != labels[i])
      throw std::invalid_argument("instance " + std::to_string(instances[i]) + " spans classes " +
                                  std::to_string(s.label) + " and " + std::to_string(labels[i]));
    s.label = labels[i];
    ++s.size;
  }
  return out;
}

}  // namespace

void InstanceSizeTable::add(std::span<const std::int32_t> labels, std::span<const std::int32_t> instances) {
  for (const auto& [id, s] : collect_instances(labels, instances, total_pixels_.size(), ignore_)) {
    total_pixels_[s.label] += static_cast<double>(s.size);
    instance_count_[s.label] += 1.0;
  }
}

Eigen::VectorXd InstanceSizeTable::averages() const {
  Eigen::VectorXd avg(total_pixels_.size());
  for (Index k = 0; k < avg.size(); ++k)
    avg[k] = instance_count_[k] > 0 ? total_pixels_[k] / instance_count_[k] : kNaN;
  return avg;
}

InstanceIouAccumulator::InstanceIouAccumulator(Eigen::VectorXd average_sizes, std::int32_t ignore_label)
    : avg_(std::move(average_sizes)),
      itp_(Eigen::VectorXd::Zero(avg_.size())),
      ifn_(Eigen::VectorXd::Zero(avg_.size())),
      fp_(Eigen::VectorXd::Zero(avg_.size())),
      cm_(avg_.size(), ignore_label),
      has_instances_(static_cast<std::size_t>(avg_.size()), false) {}

void InstanceIouAccumulator::add(std::span<const std::int32_t> labels, std::span<const std::int32_t> instances,
                                 std::span<const std::int32_t> predictions) {
  check_sizes(labels.size(), predictions.size());
  const Index c = avg_.size();
  const std::int32_t ignore = cm_.ignore_label();
  const auto stats = collect_instances(labels, instances, c, ignore);
  cm_.accumulate(labels, predictions);
  for (const auto& [id, s] : stats) has_instances_[static_cast<std::size_t>(s.label)] = true;

  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::int32_t t = labels[i];
    if (t == ignore) continue;
    const std::int32_t p = predictions[i];
    double w = 1.0;
    if (instances[i] != 0) {
      const double avg = avg_[t];
      if (!std::isfinite(avg))
        throw std::invalid_argument("no average instance size for class " + std::to_string(t));
      w = avg / static_cast<double>(stats.at(instances[i]).size);
    }
    if (p == t) {
      itp_[t] += w;
    } else {
      ifn_[t] += w;
      fp_[p] += 1.0;
    }
  }
}

void InstanceIouAccumulator::merge(const InstanceIouAccumulator& other) {
  if (other.avg_.size() != avg_.size()) throw std::invalid_argument("merging iIoU accumulators of different size");
  itp_ += other.itp_;
  ifn_ += other.ifn_;
  fp_ += other.fp_;
  cm_.merge(other.cm_);
  for (std::size_t k = 0; k < has_instances_.size(); ++k)
    has_instances_[k] = has_instances_[k] || other.has_instances_[k];
}

Eigen::VectorXd InstanceIouAccumulator::per_class() const {
  const Eigen::VectorXd plain = class_iou(cm_);
  Eigen::VectorXd out(avg_.size());
  for (Index k = 0; k < out.size(); ++k) {
    if (!has_instances_[static_cast<std::size_t>(k)]) {
      out[k] = plain[k];
      continue;
    }
    const double denom = itp_[k] + fp_[k] + ifn_[k];
    out[k] = denom > 0 ? itp_[k] / denom : kNaN;
  }
  return out;
}

Eigen::VectorXd iiou(std::span<const std::int32_t> labels, std::span<const std::int32_t> instances,
                     std::span<const std::int32_t> predictions, const Eigen::VectorXd& average_sizes,
                     std::int32_t ignore_label) {
  InstanceIouAccumulator acc(average_sizes, ignore_label);
  acc.add(labels, instances, predictions);
  return acc.per_class();
}

// ---------------------------------------------------------------- weights

Eigen::VectorXd class_weights(const Eigen::VectorXd& p) {
  Eigen::VectorXd w(p.size());
  for (Index k = 0; k < p.size(); ++k) {
    if (!(p[k] >= 0.0 && p[k] <= 1.0))
      throw std::invalid_argument("class frequency " + std::to_string(p[k]) + " outside [0, 1]");
    w[k] = 1.0 / std::log(1.02 + p[k]);
  }
  return w;
}

PixelFrequencyCounter::PixelFrequencyCounter(Index num_classes, std::int32_t ignore_label)
    : counts_(Eigen::VectorXd::Zero(num_classes)), ignore_(ignore_label) {}

void PixelFrequencyCounter::add(std::span<const std::int32_t> labels) {
  for (std::int32_t v : labels) {
    if (v == ignore_) continue;
    check_label(v, counts_.size(), "label");
    counts_[v] += 1.0;
  }
}

Eigen::VectorXd PixelFrequencyCounter::frequencies() const {
  const double total = counts_.sum();
  if (total <= 0) throw std::invalid_argument("no scored pixels");
  return counts_ / total;
}

// ---------------------------------------------------------------- reports

void write_metrics(std::ostream& os, const MetricsReport& r) {
  const auto flags = os.flags();
  const auto prec = os.precision();
  os << std::fixed << std::setprecision(4);
  os << "class        IoU       iIoU\n";
  for (Index k = 0; k < r.class_iou.size(); ++k) {
    os << std::setw(5) << k << "  " << std::setw(9) << r.class_iou[k] << "  " << std::setw(9)
       << (k < r.class_iiou.size() ? r.class_iiou[k] : kNaN) << '\n';
  }
  os << "mIoU=" << r.miou << " iIoU=" << r.iiou << '\n';
  os.flags(flags);
  os.precision(prec);
}

void write_metrics_records(std::ostream& os, const MetricsReport& r) {
  const auto prec = os.precision();
  os << std::setprecision(17);
  for (Index k = 0; k < r.class_iou.size(); ++k)
    os << "class\t" << k << '\t' << r.class_iou[k] << '\t' << (k < r.class_iiou.size() ? r.class_iiou[k] : kNaN)
       << '\n';
  os << "summary\tmiou\t" << r.miou << "\tiiou\t" << r.iiou << '\n';
  os.precision(prec);
}

}  // namespace linknet
