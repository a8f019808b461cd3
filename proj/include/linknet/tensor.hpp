#pragma once

// Dense row-major tensors templated on the element type, plus the
// deterministic generator used for every random draw in the project.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace linknet {

using Index = std::int64_t;
using Shape = std::vector<Index>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

inline Index element_count(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  Index n = 1;
  for (Index d : shape) {
    if (d < 1) throw ShapeError("tensor dimensions must be >= 1, got " + to_string(shape));
    n *= d;
  }
  return n;
}

template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;
  using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(element_count(shape_)), fill) {}

  Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<Index>(data_.size()) != element_count(shape_))
      throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                       to_string(shape_));
  }

  Tensor(Shape shape, std::initializer_list<Scalar> data)
      : Tensor(std::move(shape), std::vector<Scalar>(data)) {}

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }
  const std::vector<Scalar>& storage() const { return data_; }

  ArrayMap array() { return ArrayMap(data_.data(), size()); }
  ConstArrayMap array() const { return ConstArrayMap(data_.data(), size()); }

  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  const Scalar& operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  // NCHW offset ((n*C + c)*H + h)*W + w.
  Index offset(Index n, Index c, Index h, Index w) const {
    return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }
  Scalar& operator()(Index n, Index c, Index h, Index w) { return data_[offset(n, c, h, w)]; }
  const Scalar& operator()(Index n, Index c, Index h, Index w) const {
    return data_[offset(n, c, h, w)];
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const {
    Tensor out;
    if (element_count(shape) != size())
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
    return Tensor<Other>(shape_, std::move(out));
  }

  bool all_finite() const {
    for (const Scalar& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<Scalar> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;
using TensorI = Tensor<std::int32_t>;

template <typename Scalar>
Tensor<Scalar> zeros(const Shape& shape) {
  return Tensor<Scalar>(shape, Scalar(0));
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "add");
  Tensor<Scalar> out(a.shape());
  out.array() = a.array() + b.array();
  return out;
}

template <typename Scalar>
void add_inplace(Tensor<Scalar>& acc, const Tensor<Scalar>& b) {
  require_same_shape(acc, b, "add_inplace");
  acc.array() += b.array();
}

template <typename Scalar>
double dot(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "dot");
  return (a.array().template cast<double>() * b.array().template cast<double>()).sum();
}

struct Padding {
  Index top = 0, bottom = 0, left = 0, right = 0;
};

template <typename Scalar>
Tensor<Scalar> pad2d(const Tensor<Scalar>& x, Padding pad, Scalar fill) {
  if (x.rank() != 4) throw ShapeError("pad2d expects a rank-4 tensor, got " + to_string(x.shape()));
  if (pad.top < 0 || pad.bottom < 0 || pad.left < 0 || pad.right < 0)
    throw std::invalid_argument("pad2d: negative padding");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = h + pad.top + pad.bottom, ow = w + pad.left + pad.right;
  Tensor<Scalar> out({n, c, oh, ow}, fill);
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch)
      for (Index i = 0; i < h; ++i)
        std::copy_n(&x(b, ch, i, 0), w, &out(b, ch, i + pad.top, pad.left));
  return out;
}

/// SplitMix64 generator. The integer stream is fixed for a given seed on
/// every platform; real-valued draws are derived from it with plain
/// arithmetic so they are reproducible wherever libm agrees.
class Prng {
 public:
  using result_type = std::uint64_t;

  explicit Prng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Prng::below(0)");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  // Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal() {
    if (spare_) {
      double v = *spare_;
      spare_.reset();
      return v;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(kTwoPi * u2);
    return r * std::cos(kTwoPi * u2);
  }

  Prng split() { return Prng(next_u64()); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return next_u64(); }

 private:
  std::uint64_t state_;
  std::optional<double> spare_;
};

/// Samples N(0, 2/fan_in) into a tensor of the given shape.
template <typename Scalar>
Tensor<Scalar> he_normal_init(Prng& rng, const Shape& shape, Index fan_in) {
  if (fan_in < 1) throw std::invalid_argument("he_normal_init: fan_in must be >= 1");
  Tensor<Scalar> out(shape);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Scalar& v : out.values()) v = static_cast<Scalar>(stddev * rng.normal());
  return out;
}

template <typename Scalar>
Tensor<Scalar> random_normal(Prng& rng, const Shape& shape, double stddev = 1.0) {
  Tensor<Scalar> out(shape);
  for (Scalar& v : out.values()) v = static_cast<Scalar>(stddev * rng.normal());
  return out;
}

template <typename Scalar>
Tensor<Scalar> random_uniform(Prng& rng, const Shape& shape, double lo, double hi) {
  Tensor<Scalar> out(shape);
  for (Scalar& v : out.values()) v = static_cast<Scalar>(rng.uniform(lo, hi));
  return out;
}

}  // namespace linknet
