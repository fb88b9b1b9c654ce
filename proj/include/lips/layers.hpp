#pragma once

#include <string>

#include "lips/init.hpp"
#include "lips/kernels.hpp"
#include "lips/tensor.hpp"

namespace lips {

/// Convolution parameters with their fixed geometry.
struct ConvLayer {
  Tensor weight;  // C_out x C_in x k x k
  Tensor bias;    // C_out
  int stride = 1;
  int padding = 0;

  int64_t out_channels() const { return weight.dim(0); }
  int64_t in_channels() const { return weight.dim(1); }
  int64_t kernel() const { return weight.dim(2); }

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }

  template <class Self, class F>
  static void fields(Self& self, const std::string& prefix, F&& f) {
    f(prefix + ".weight", self.weight);
    f(prefix + ".bias", self.bias);
  }
};

struct LinearLayer {
  Tensor weight;  // C_out x C_in
  Tensor bias;    // C_out

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }

  template <class Self, class F>
  static void fields(Self& self, const std::string& prefix, F&& f) {
    f(prefix + ".weight", self.weight);
    f(prefix + ".bias", self.bias);
  }
};

struct NormLayer {
  Tensor gamma;
  Tensor beta;

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

  template <class Self, class F>
  static void fields(Self& self, const std::string& prefix, F&& f) {
    f(prefix + ".gamma", self.gamma);
    f(prefix + ".beta", self.beta);
  }
};

inline ConvLayer make_conv(WeightInit& init, int64_t cin, int64_t cout, int k, int stride) {
  ConvLayer conv;
  conv.weight = init.fan_in({cout, cin, k, k}, cin * k * k);
  conv.bias = init.uniform({cout}, 0.05f);
  conv.stride = stride;
  conv.padding = k / 2;
  return conv;
}

inline LinearLayer make_linear(WeightInit& init, int64_t cin, int64_t cout) {
  return {init.fan_in({cout, cin}, cin), init.uniform({cout}, 0.05f)};
}

inline NormLayer make_norm(int64_t channels) {
  return {Tensor({channels}, 1.0f), Tensor({channels}, 0.0f)};
}

inline int64_t conv_params(int64_t cin, int64_t cout, int64_t k) { return cout * cin * k * k + cout; }
inline int64_t linear_params(int64_t cin, int64_t cout) { return cout * cin + cout; }

}  // namespace lips
