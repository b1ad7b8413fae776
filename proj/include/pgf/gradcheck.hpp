// Copyright 2026 The PGF Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/// \file gradcheck.hpp
/// Central finite-difference verification of analytic backward passes, plus
/// the seeded suite of op instances used by the `gradcheck` CLI command.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pgf/losses.hpp"
#include "pgf/rng.hpp"
#include "pgf/tensor.hpp"

namespace pgf {

/// A single-input op. `backward(x, g)` returns dL/dx given g = dL/d(forward(x)).
/// Ops without an analytic gradient leave `backward` empty.
struct DifferentiableOp {
  std::string name;
  std::function<Tensor(const Tensor&)> forward;
  std::function<Tensor(const Tensor&, const Tensor&)> backward;
};

/// Compares the analytic gradient of L(x) = sum(forward(x) * R) against central
/// differences, R being a fixed seeded projection. Returns the max relative
/// error |a - n| / max(|a|, |n|, 1e-8) over every input element.
inline double grad_check(const DifferentiableOp& op, const Tensor& input, double epsilon,
                         std::uint64_t projection_seed = 17) {
  require(static_cast<bool>(op.forward), "grad_check: op '" + op.name + "' has no forward");
  require(static_cast<bool>(op.backward),
          "grad_check: op '" + op.name + "' has no analytic backward");
  require(epsilon > 0.0, "grad_check: epsilon must be positive");
  const Tensor out = op.forward(input);
  Rng rng(projection_seed);
  const Tensor proj = random_tensor(out.shape(), rng, 0.5, 1.5);
  const auto objective = [&](const Tensor& x) {
    const Tensor y = op.forward(x);
    require_same_shape(y, proj, "grad_check objective");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += y.data()[i] * proj.data()[i];
    return acc;
  };
  const Tensor analytic = op.backward(input, proj);
  require_same_shape(analytic, input, "grad_check analytic gradient");
  double worst = 0.0;
  Tensor probe = input;
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double saved = probe.data()[i];
    probe.data()[i] = saved + epsilon;
    const double up = objective(probe);
    probe.data()[i] = saved - epsilon;
    const double down = objective(probe);
    probe.data()[i] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = analytic.data()[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Seeded op instances

struct GradCase {
  DifferentiableOp op;
  Tensor input;
  double epsilon = 1e-5;
};

namespace detail {

inline Tensor vec_as_tensor(const std::vector<double>& v) {
  return Tensor(Shape{v.size(), 1, 1}, v);
}

// Keeps samples away from non-differentiable points by at least `gap`.
inline void push_away(Tensor& t, double knot, double gap) {
  for (double& v : t.data())
    if (std::abs(v - knot) < gap) v = v < knot ? knot - gap : knot + gap;
}

}  // namespace detail

inline GradCase conv2d_case(std::uint64_t seed, std::size_t dilation = 1) {
  Rng rng(mix_seed(seed, "conv2d"));
  ConvParams p = ConvParams::same(3, 2, 3, true, dilation);
  randomize(p, rng);
  const std::size_t side = 4 + 2 * dilation;
  return {{"conv2d" + std::string(dilation > 1 ? "_dilated" : ""),
           [p](const Tensor& x) { return conv2d(x, p); },
           [p](const Tensor& x, const Tensor& g) { return conv2d_backward(x, p, g).input; }},
          random_tensor({2, side, side}, rng)};
}

/// Differentiates conv2d with respect to its weights (packed as (n, 1, 1)).
inline GradCase conv2d_weights_case(std::uint64_t seed) {
  Rng rng(mix_seed(seed, "conv2d_weights"));
  ConvParams base = ConvParams::zeros(2, 2, 3, true, 2, 1, 1);
  const Tensor x = random_tensor({2, 7, 7}, rng);
  randomize(base, rng);
  const auto with = [base](const Tensor& w) {
    ConvParams p = base;
    p.weights.assign(w.data().begin(), w.data().end());
    return p;
  };
  return {{"conv2d_weights",
           [x, with](const Tensor& w) { return conv2d(x, with(w)); },
           [x, with](const Tensor& w, const Tensor& g) {
             return detail::vec_as_tensor(conv2d_backward(x, with(w), g).weights);
           }},
          detail::vec_as_tensor(base.weights)};
}

inline GradCase mlp_case(std::uint64_t seed) {
  Rng rng(mix_seed(seed, "mlp"));
  MlpParams p = MlpParams::zeros(6, 4, 5);
  randomize(p, rng);
  Tensor x = random_tensor({6, 1, 1}, rng);
  // Keep hidden pre-activations away from the relu kink.
  for (std::size_t h = 0; h < p.hidden; ++h) {
    double pre = p.b1[h];
    for (std::size_t i = 0; i < p.in; ++i) pre += p.w1[h * p.in + i] * x.data()[i];
    if (std::abs(pre) < 0.05) p.b1[h] += pre >= 0.0 ? 0.1 : -0.1;
  }
  return {{"mlp",
           [p](const Tensor& v) { return detail::vec_as_tensor(mlp(v.data(), p)); },
           [p](const Tensor& v, const Tensor& g) {
             return detail::vec_as_tensor(mlp_backward(v.data(), p, g.data()).input);
           }},
          x};
}

inline GradCase activation_case(std::uint64_t seed, Activation kind) {
  Rng rng(mix_seed(seed, "activation"));
  Tensor x = random_tensor({2, 4, 4}, rng, -4.0, 4.0);
  if (kind == Activation::kRelu) detail::push_away(x, 0.0, 0.01);
  const char* name = kind == Activation::kSigmoid ? "sigmoid"
                     : kind == Activation::kTanh  ? "tanh"
                                                  : "relu";
  return {{name, [kind](const Tensor& v) { return activation(v, kind); },
           [kind](const Tensor& v, const Tensor& g) { return activation_backward(v, g, kind); }},
          x};
}

inline GradCase pool_spatial_case(std::uint64_t seed, PoolMode mode) {
  Rng rng(mix_seed(seed, "pool_spatial"));
  return {{mode == PoolMode::kMax ? "pool_spatial_max" : "pool_spatial_avg",
           [mode](const Tensor& x) { return detail::vec_as_tensor(pool_spatial(x, mode)); },
           [mode](const Tensor& x, const Tensor& g) {
             return pool_spatial_backward(x, g.data(), mode);
           }},
          random_tensor({3, 4, 5}, rng)};
}

inline GradCase pool_channel_case(std::uint64_t seed, PoolMode mode) {
  Rng rng(mix_seed(seed, "pool_channel"));
  return {{mode == PoolMode::kMax ? "pool_channel_max" : "pool_channel_avg",
           [mode](const Tensor& x) { return pool_channel(x, mode); },
           [mode](const Tensor& x, const Tensor& g) { return pool_channel_backward(x, g, mode); }},
          random_tensor({4, 3, 5}, rng)};
}

inline GradCase maxpool2d_case(std::uint64_t seed) {
  Rng rng(mix_seed(seed, "maxpool2d"));
  return {{"maxpool2d", [](const Tensor& x) { return maxpool2d(x, 2, 2); },
           [](const Tensor& x, const Tensor& g) { return maxpool2d_backward(x, 2, 2, g); }},
          random_tensor({2, 6, 6}, rng)};
}

inline GradCase mul_case(std::uint64_t seed) {
  Rng rng(mix_seed(seed, "mul"));
  const Tensor other = random_tensor({2, 3, 3}, rng);
  return {{"mul", [other](const Tensor& x) { return mul(x, other); },
           [other](const Tensor& x, const Tensor& g) { return mul_backward(x, other, g).first; }},
          random_tensor({2, 3, 3}, rng)};
}

inline GradCase add_case(std::uint64_t seed) {
  Rng rng(mix_seed(seed, "add"));
  const Tensor other = random_tensor({2, 3, 3}, rng);
  return {{"add", [other](const Tensor& x) { return add(x, other); },
           [](const Tensor&, const Tensor& g) { return g; }},
          random_tensor({2, 3, 3}, rng)};
}

inline GradCase focal_case(std::uint64_t seed) {
  Rng rng(mix_seed(seed, "focal"));
  // Background targets stop at 0.9: closer to 1 the (1 - t)^4 factor shrinks
  // the gradient below the difference quotient's rounding floor.
  Tensor target = random_tensor({2, 5, 5}, rng, 0.0, 0.9);
  target(0, 2, 2) = 1.0;
  target(1, 1, 3) = 1.0;
  const Tensor pred = random_tensor({2, 5, 5}, rng, 0.05, 0.95);
  return {{"focal_loss",
           [target](const Tensor& p) { return Tensor(Shape{1, 1, 1}, {focal_loss(p, target).value}); },
           [target](const Tensor& p, const Tensor& g) {
             return scale(focal_loss(p, target).grad, g.data()[0]);
           }},
          pred, 1e-4};
}

inline GradCase smooth_l1_case(std::uint64_t seed) {
  Rng rng(mix_seed(seed, "smooth_l1"));
  const Tensor target = random_tensor({3, 4, 4}, rng, -2.0, 2.0);
  Tensor pred = random_tensor({3, 4, 4}, rng, -2.0, 2.0);
  // The knot |d| = 1 is excluded from sampling.
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double d = pred.data()[i] - target.data()[i];
    if (std::abs(std::abs(d) - 1.0) < 0.05) d = d > 0 ? (d > 1.0 ? 1.1 : 0.9) : (d < -1.0 ? -1.1 : -0.9);
    pred.data()[i] = target.data()[i] + d;
  }
  Tensor mask(1, 4, 4);
  for (double& m : mask.data()) m = uniform(rng, 0.0, 1.0) < 0.5 ? 1.0 : 0.0;
  mask(0, 0, 0) = 1.0;
  return {{"smooth_l1",
           [target, mask](const Tensor& p) {
             return Tensor(Shape{1, 1, 1}, {smooth_l1(p, target, mask).value});
           },
           [target, mask](const Tensor& p, const Tensor& g) {
             return scale(smooth_l1(p, target, mask).grad, g.data()[0]);
           }},
          pred};
}

/// Every op on the supervised path, instantiated for one seed.
inline std::vector<GradCase> gradcheck_suite(std::uint64_t seed) {
  return {conv2d_case(seed),
          conv2d_case(seed, 3),
          conv2d_weights_case(seed),
          mlp_case(seed),
          activation_case(seed, Activation::kSigmoid),
          activation_case(seed, Activation::kTanh),
          activation_case(seed, Activation::kRelu),
          pool_spatial_case(seed, PoolMode::kMax),
          pool_spatial_case(seed, PoolMode::kAvg),
          pool_channel_case(seed, PoolMode::kMax),
          pool_channel_case(seed, PoolMode::kAvg),
          maxpool2d_case(seed),
          mul_case(seed),
          add_case(seed),
          focal_case(seed),
          smooth_l1_case(seed)};
}

struct GradSummary {
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
};

/// Runs the suite for seeds first_seed .. first_seed + instances - 1 and keeps
/// the worst relative error per op, in suite order.
inline std::vector<GradSummary> run_gradcheck(std::uint64_t first_seed, std::size_t instances) {
  std::vector<GradSummary> out;
  for (std::size_t k = 0; k < instances; ++k) {
    const auto cases = gradcheck_suite(first_seed + k);
    if (out.empty())
      for (const auto& c : cases) out.push_back({c.op.name, 0, 0.0});
    for (std::size_t i = 0; i < cases.size(); ++i) {
      out[i].max_rel_error =
          std::max(out[i].max_rel_error, grad_check(cases[i].op, cases[i].input, cases[i].epsilon));
      ++out[i].instances;
    }
  }
  return out;
}

}  // namespace pgf
