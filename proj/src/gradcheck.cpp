#include "linknet/gradcheck.hpp"

#include "linknet/ops.hpp"

namespace linknet {

GradcheckReport gradcheck(const ScalarFunction& f, std::vector<TensorD> inputs,
                          const std::vector<TensorD>& analytic, double tolerance, double h,
                          std::vector<Probe> probes) {
  if (analytic.size() != inputs.size()) throw std::invalid_argument("gradcheck: one gradient per input required");
  for (std::size_t k = 0; k < inputs.size(); ++k) require_same_shape(inputs[k], analytic[k], "gradcheck");
  if (probes.empty())
    for (std::size_t k = 0; k < inputs.size(); ++k)
      for (Index e = 0; e < inputs[k].size(); ++e) probes.push_back({k, e});

  GradcheckReport rep;
  rep.tolerance = tolerance;
  for (const Probe& p : probes) {
    double& slot = inputs.at(p.input)[p.element];
    const double saved = slot;
    slot = saved + h;
    const double fp = f(inputs);
    slot = saved - h;
    const double fm = f(inputs);
    slot = saved;
    const double numeric = (fp - fm) / (2 * h);
    const double a = analytic[p.input][p.element];
    const double err = relative_error(a, numeric);
    if (err > rep.max_rel_error || rep.worst_element < 0) {
      rep.max_rel_error = std::max(rep.max_rel_error, err);
      rep.worst_input = p.input;
      rep.worst_element = p.element;
      rep.worst_analytic = a;
      rep.worst_numeric = numeric;
    }
    ++rep.checked;
  }
  rep.passed = rep.max_rel_error <= tolerance;
  return rep;
}

GradcheckReport gradcheck_op(const TensorFunction& op, const VjpFunction& vjp,
                             const std::vector<TensorD>& inputs, Prng& rng, double tolerance, double h,
                             double grad_scale) {
  const TensorD out = op(inputs);
  const TensorD cotangent = random_normal<double>(rng, out.shape());
  std::vector<TensorD> grads = vjp(inputs, cotangent);
  for (TensorD& g : grads) g.array() *= grad_scale;
  auto f = [&](const std::vector<TensorD>& in) { return dot(op(in), cotangent); };
  return gradcheck(f, inputs, grads, tolerance, h);
}

namespace {

TensorD random_input(Prng& rng, const Shape& shape) { return random_normal<double>(rng, shape); }

// Values on a shuffled grid spaced 0.5 apart: pooling windows have unique
// maxima separated by far more than the finite-difference step.
TensorD distinct_input(Prng& rng, const Shape& shape) {
  TensorD t(shape);
  std::vector<Index> order(static_cast<std::size_t>(t.size()));
  std::iota(order.begin(), order.end(), Index{0});
  rng.shuffle(order);
  for (Index i = 0; i < t.size(); ++i) t[i] = 0.5 * static_cast<double>(order[static_cast<std::size_t>(i)]);
  return t;
}

// Keeps every entry at least 1e-2 away from the ReLU kink.
TensorD off_kink_input(Prng& rng, const Shape& shape) {
  TensorD t = random_input(rng, shape);
  for (double& v : t.values())
    if (std::abs(v) < 0.05) v = v < 0 ? v - 0.05 : v + 0.05;
  return t;
}

GradcheckReport conv_check(Prng& rng, double tol, double grad_scale) {
  const ConvSpec s{2, 3, {3, 3}, {1, 1}, {1, 1}, {0, 0}, true};
  const std::vector<TensorD> in{random_input(rng, {2, 2, 4, 4}), random_input(rng, {3, 2, 3, 3}),
                                random_input(rng, {3})};
  auto op = [s](const std::vector<TensorD>& v) { return conv2d(v[0], s, v[1], &v[2]); };
  auto vjp = [s](const std::vector<TensorD>& v, const TensorD& g) {
    auto r = conv2d_vjp(v[0], s, v[1], g);
    return std::vector<TensorD>{r.grad_x, r.grad_weight, *r.grad_bias};
  };
  return gradcheck_op(op, vjp, in, rng, tol, 1e-4, grad_scale);
}

}  // namespace

std::vector<GradcheckReport> primitive_gradchecks(std::uint64_t seed, double tol) {
  Prng rng(seed);
  std::vector<GradcheckReport> out;
  auto push = [&](std::string name, GradcheckReport r) {
    r.name = std::move(name);
    out.push_back(std::move(r));
  };

  push("conv2d", conv_check(rng, tol, 1.0));
  {
    const ConvSpec s{2, 2, {3, 3}, {2, 2}, {1, 1}, {0, 0}, false};
    const std::vector<TensorD> in{random_input(rng, {1, 2, 4, 4}), random_input(rng, {2, 2, 3, 3})};
    auto op = [s](const std::vector<TensorD>& v) { return conv2d(v[0], s, v[1]); };
    auto vjp = [s](const std::vector<TensorD>& v, const TensorD& g) {
      auto r = conv2d_vjp(v[0], s, v[1], g);
      return std::vector<TensorD>{r.grad_x, r.grad_weight};
    };
    push("conv2d_strided", gradcheck_op(op, vjp, in, rng, tol));
  }
  {
    const ConvSpec s{2, 3, {3, 3}, {2, 2}, {1, 1}, {1, 1}, true};
    const std::vector<TensorD> in{random_input(rng, {2, 2, 2, 2}), random_input(rng, {2, 3, 3, 3}),
                                  random_input(rng, {3})};
    auto op = [s](const std::vector<TensorD>& v) { return conv_transpose2d(v[0], s, v[1], &v[2]); };
    auto vjp = [s](const std::vector<TensorD>& v, const TensorD& g) {
      auto r = conv_transpose2d_vjp(v[0], s, v[1], g);
      return std::vector<TensorD>{r.grad_x, r.grad_weight, *r.grad_bias};
    };
    push("conv_transpose2d", gradcheck_op(op, vjp, in, rng, tol));
  }
  {
    const ConvSpec s{3, 2, {2, 2}, {2, 2}, {0, 0}, {0, 0}, false};
    const std::vector<TensorD> in{random_input(rng, {1, 3, 2, 2}), random_input(rng, {3, 2, 2, 2})};
    auto op = [s](const std::vector<TensorD>& v) { return conv_transpose2d(v[0], s, v[1]); };
    auto vjp = [s](const std::vector<TensorD>& v, const TensorD& g) {
      auto r = conv_transpose2d_vjp(v[0], s, v[1], g);
      return std::vector<TensorD>{r.grad_x, r.grad_weight};
    };
    push("conv_transpose2d_2x2", gradcheck_op(op, vjp, in, rng, tol));
  }
  {
    const std::vector<TensorD> in{random_input(rng, {2, 2, 3, 3}), random_input(rng, {2}),
                                  random_input(rng, {2})};
    auto state_of = [](const std::vector<TensorD>& v) {
      auto st = BatchNormState<double>::identity(2);
      st.gamma = v[1];
      st.beta = v[2];
      return st;
    };
    auto op = [state_of](const std::vector<TensorD>& v) {
      return batchnorm2d(v[0], state_of(v), Mode::Train).y;
    };
    auto vjp = [state_of](const std::vector<TensorD>& v, const TensorD& g) {
      auto fwd = batchnorm2d(v[0], state_of(v), Mode::Train);
      auto r = batchnorm2d_vjp(fwd.cache, g);
      return std::vector<TensorD>{r.grad_x, r.grad_gamma, r.grad_beta};
    };
    push("batchnorm2d", gradcheck_op(op, vjp, in, rng, tol));
  }
  {
    const std::vector<TensorD> in{off_kink_input(rng, {2, 2, 4, 4})};
    auto op = [](const std::vector<TensorD>& v) { return relu(v[0]); };
    auto vjp = [](const std::vector<TensorD>& v, const TensorD& g) {
      return std::vector<TensorD>{relu_vjp(v[0], g)};
    };
    push("relu", gradcheck_op(op, vjp, in, rng, tol));
  }
  {
    const std::vector<TensorD> in{distinct_input(rng, {2, 2, 4, 4})};
    auto op = [](const std::vector<TensorD>& v) { return maxpool2d(v[0]).y; };
    auto vjp = [](const std::vector<TensorD>& v, const TensorD& g) {
      auto fwd = maxpool2d(v[0]);
      return std::vector<TensorD>{maxpool2d_vjp(fwd.argmax, g, v[0].shape())};
    };
    push("maxpool2d", gradcheck_op(op, vjp, in, rng, tol));
  }
  return out;
}

GradcheckReport corrupted_gradient_selftest(std::uint64_t seed, double tol) {
  Prng rng(seed);
  GradcheckReport r = conv_check(rng, tol, 1.01);
  r.name = "conv2d_corrupted";
  return r;
}

}  // namespace linknet
