#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "lips/tensor.hpp"

namespace lips {

/// Seeded generator for synthetic weights. Floats are derived from the raw
/// 64-bit engine output so the sequence does not depend on the standard
/// library's distribution implementations.
class WeightInit {
 public:
  explicit WeightInit(uint64_t seed) : engine_(seed) {}

  /// Uniform in [-bound, bound).
  float uniform(float bound) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return static_cast<float>((2.0 * u - 1.0) * bound);
  }

  Tensor uniform(Shape shape, float bound) {
    Tensor t(std::move(shape));
    for (float& v : t.data()) v = uniform(bound);
    return t;
  }

  /// Variance-preserving (LeCun) uniform init for a layer with `fan_in` inputs.
  Tensor fan_in(Shape shape, int64_t fan_in) {
    return uniform(std::move(shape), std::sqrt(3.0f / static_cast<float>(fan_in)));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace lips
