#pragma once

// Central finite-difference checker, run in double precision.

#include "linknet/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace linknet {

struct GradcheckReport {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  Index worst_element = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  Index checked = 0;
  double tolerance = 0.0;
  bool passed = false;
};

// One scalar entry to probe: inputs[input][element].
struct Probe {
  std::size_t input = 0;
  Index element = 0;
};

using ScalarFunction = std::function<double(const std::vector<TensorD>&)>;
using TensorFunction = std::function<TensorD(const std::vector<TensorD>&)>;
// Given inputs and dL/d(output), returns dL/d(input_k) for every input.
using VjpFunction = std::function<std::vector<TensorD>(const std::vector<TensorD>&, const TensorD&)>;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
}

/// Compares `analytic` gradients of the scalar `f` at `inputs` with central
/// differences of step `h`, on the listed probes (all elements if empty).
GradcheckReport gradcheck(const ScalarFunction& f, std::vector<TensorD> inputs,
                          const std::vector<TensorD>& analytic, double tolerance, double h = 1e-4,
                          std::vector<Probe> probes = {});

/// Checks an op through the scalar <op(inputs), r> for a random cotangent r.
/// `grad_scale` multiplies the analytic gradient (1.0 normally; the
/// corrupted-gradient self test uses 1.01).
GradcheckReport gradcheck_op(const TensorFunction& op, const VjpFunction& vjp,
                             const std::vector<TensorD>& inputs, Prng& rng, double tolerance,
                             double h = 1e-4, double grad_scale = 1.0);

/// Finite-difference checks of every layer primitive on tensors of at most
/// 4x4 spatial extent, one report per primitive and seed.
std::vector<GradcheckReport> primitive_gradchecks(std::uint64_t seed, double tolerance = 1e-5);

/// Same battery with the conv gradient scaled by 1.01; every report is
/// expected to fail.
GradcheckReport corrupted_gradient_selftest(std::uint64_t seed, double tolerance = 1e-5);

}  // namespace linknet
