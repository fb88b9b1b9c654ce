#pragma once

#include <span>

#include "lips/tensor.hpp"

// Reference dense kernels. All functions are pure; instrumented MAC counts
// are reported through lips::instrument when a counter scope is active.
namespace lips {

/// Cross-correlation of a C_in x H x W map with a C_out x C_in x k x k
/// kernel. `bias` may be empty (treated as zero) or hold C_out values.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding);

Shape conv2d_output_shape(const Shape& input, const Shape& weight, int stride, int padding);

/// Row-wise affine map: out[n] = weight * in[n] + bias.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Softmax along the last axis with max subtraction.
Tensor softmax(const Tensor& input);
void softmax_inplace(std::span<float> row);

Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);

Tensor relu(Tensor input);
float sigmoid(float x);

/// Bilinear lookup of a C x H x W map at normalized (x, y) points in
/// [0, 1]^2. Pixel centers sit at ((i + 0.5) / W, (j + 0.5) / H); samples
/// outside the grid read zeros. `points` is P x 2 with columns (x, y).
Tensor bilinear_sample(const Tensor& feature, const Tensor& points);

/// Contracts d bilinear_sample / d points with `upstream` (P x C).
/// Returns P x 2 in (x, y) order.
Tensor bilinear_sample_grad(const Tensor& feature, const Tensor& points, const Tensor& upstream);

/// Dense resampling with the same convention as bilinear_sample.
Tensor bilinear_resize(const Tensor& feature, int64_t out_h, int64_t out_w);

/// 2-D sine/cosine positional encoding, C x h x w. The first C/2 channels
/// encode y, the last C/2 encode x.
Tensor sine_positional_encoding(int64_t h, int64_t w, int64_t channels,
                                double temperature = 10000.0);

Tensor add(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& a, const Tensor& b);

/// (C, H, W) feature map to (H*W, C) tokens, and back.
Tensor flatten_hw(const Tensor& feature);
Tensor unflatten_hw(const Tensor& tokens, int64_t offset, int64_t h, int64_t w);

namespace detail {

// Single-point bilinear read across channels [c0, c0 + n) into out[0..n).
// Coordinates are in pixel units relative to pixel centers (x_px = x*W - 0.5).
void sample_pixel(const Tensor& feature, int64_t c0, int64_t n, double x_px, double y_px,
                  float* out);

// Gradient of sum_c upstream[c] * sample_c with respect to (x_px, y_px).
void sample_pixel_grad(const Tensor& feature, int64_t c0, int64_t n, double x_px, double y_px,
                       const float* upstream, double* gx, double* gy);

}  // namespace detail
}  // namespace lips
