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

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "pgf/tensor.hpp"

namespace pgf {

using Rng = std::mt19937_64;

// splitmix64 finalizer
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::string_view tag) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return mix_seed(a, h);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

/// He-normal weights (fan-in scaled), small uniform bias.
inline void init_he(ConvParams& p, Rng& rng, double gain = 1.0) {
  const double fan_in = static_cast<double>(p.in_ch * p.kh * p.kw);
  const double stddev = gain * std::sqrt(2.0 / fan_in);
  for (double& w : p.weights) w = normal(rng, 0.0, stddev);
  for (double& b : p.bias) b = 0.0;
}

inline void init_he(MlpParams& p, Rng& rng) {
  const double s1 = std::sqrt(2.0 / static_cast<double>(p.in));
  const double s2 = std::sqrt(1.0 / static_cast<double>(p.hidden));
  for (double& w : p.w1) w = normal(rng, 0.0, s1);
  for (double& w : p.w2) w = normal(rng, 0.0, s2);
  for (double& b : p.b1) b = 0.0;
  for (double& b : p.b2) b = 0.0;
}

inline void randomize(ConvParams& p, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (double& w : p.weights) w = uniform(rng, lo, hi);
  for (double& b : p.bias) b = uniform(rng, lo, hi);
}

inline void randomize(MlpParams& p, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto* v : {&p.w1, &p.b1, &p.w2, &p.b2})
    for (double& w : *v) w = uniform(rng, lo, hi);
}

}  // namespace pgf
