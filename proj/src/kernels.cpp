#include "lips/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lips/instrument.hpp"

namespace lips {

Shape conv2d_output_shape(const Shape& input, const Shape& weight, int stride, int padding) {
  require_shape(input.size() == 3, "conv2d input must be C x H x W, got " + shape_to_string(input));
  require_shape(weight.size() == 4 && weight[2] == weight[3],
                "conv2d weight must be C_out x C_in x k x k, got " + shape_to_string(weight));
  require_shape(weight[1] == input[0], "conv2d channel mismatch: input " + shape_to_string(input) +
                                           ", weight " + shape_to_string(weight));
  require_shape(stride >= 1 && padding >= 0, "conv2d stride must be >= 1 and padding >= 0");
  const int64_t k = weight[2];
  const int64_t oh = (input[1] + 2 * padding - k) / stride + 1;
  const int64_t ow = (input[2] + 2 * padding - k) / stride + 1;
  require_shape(input[1] + 2 * padding - k >= 0 && input[2] + 2 * padding - k >= 0 && oh >= 1 &&
                    ow >= 1,
                "conv2d output extent is not positive");
  return {weight[0], oh, ow};
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
  const Shape out_shape = conv2d_output_shape(input.shape(), weight.shape(), stride, padding);
  const int64_t cout = out_shape[0], oh = out_shape[1], ow = out_shape[2];
  const int64_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int64_t k = weight.dim(2);
  require_shape(bias.empty() || bias.size() == cout, "conv2d bias length must equal C_out");

  Tensor out(out_shape);
  const float* src = input.data().data();
  const float* wt = weight.data().data();
  float* dst = out.data().data();
  for (int64_t co = 0; co < cout; ++co) {
    float* plane = dst + co * oh * ow;
    if (!bias.empty()) std::fill(plane, plane + oh * ow, bias[co]);
    for (int64_t ci = 0; ci < cin; ++ci) {
      const float* in_plane = src + ci * h * w;
      for (int64_t ky = 0; ky < k; ++ky) {
        for (int64_t kx = 0; kx < k; ++kx) {
          const float wv = wt[((co * cin + ci) * k + ky) * k + kx];
          if (wv == 0.0f) continue;
          for (int64_t oy = 0; oy < oh; ++oy) {
            const int64_t iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            const float* row = in_plane + iy * w;
            float* orow = plane + oy * ow;
            for (int64_t ox = 0; ox < ow; ++ox) {
              const int64_t ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= w) continue;
              orow[ox] += wv * row[ix];
            }
          }
        }
      }
    }
  }
  instrument::add_macs(oh * ow * cout * cin * k * k);
  instrument::add_call("conv2d");
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_shape(input.rank() == 2 && weight.rank() == 2,
                "linear expects N x C_in input and C_out x C_in weight");
  const int64_t n = input.dim(0), cin = input.dim(1), cout = weight.dim(0);
  require_shape(weight.dim(1) == cin, "linear inner dimension mismatch: input " +
                                          shape_to_string(input.shape()) + ", weight " +
                                          shape_to_string(weight.shape()));
  require_shape(bias.empty() || bias.size() == cout, "linear bias length must equal C_out");

  Tensor out({n, cout});
  const float* x = input.data().data();
  const float* wt = weight.data().data();
  float* y = out.data().data();
  for (int64_t r = 0; r < n; ++r) {
    const float* xr = x + r * cin;
    for (int64_t o = 0; o < cout; ++o) {
      const float* wr = wt + o * cin;
      float acc = bias.empty() ? 0.0f : bias[o];
      for (int64_t i = 0; i < cin; ++i) acc += wr[i] * xr[i];
      y[r * cout + o] = acc;
    }
  }
  instrument::add_macs(n * cin * cout);
  instrument::add_call("linear");
  return out;
}

void softmax_inplace(std::span<float> row) {
  if (row.empty()) return;
  const float mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (float& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  const float inv = static_cast<float>(1.0 / sum);
  for (float& v : row) v *= inv;
}

Tensor softmax(const Tensor& input) {
  Tensor out = input;
  const int64_t k = input.shape().back();
  auto data = out.data();
  for (int64_t off = 0; off < out.size(); off += k) {
    softmax_inplace(data.subspan(static_cast<size_t>(off), static_cast<size_t>(k)));
  }
  return out;
}

Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, float eps) {
  const int64_t c = input.shape().back();
  require_shape(gamma.size() == c && beta.size() == c, "layer_norm gamma/beta length mismatch");
  Tensor out = input;
  auto data = out.data();
  for (int64_t off = 0; off < out.size(); off += c) {
    double mean = 0.0;
    for (int64_t i = 0; i < c; ++i) mean += data[off + i];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t i = 0; i < c; ++i) {
      const double d = data[off + i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t i = 0; i < c; ++i) {
      data[off + i] = static_cast<float>((data[off + i] - mean) * inv) * gamma[i] + beta[i];
    }
  }
  return out;
}

Tensor relu(Tensor input) {
  for (float& v : input.data()) v = std::max(v, 0.0f);
  return input;
}

float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

namespace detail {

void sample_pixel(const Tensor& feature, int64_t c0, int64_t n, double x_px, double y_px,
                  float* out) {
  const int64_t h = feature.dim(1), w = feature.dim(2);
  const double fx0 = std::floor(x_px), fy0 = std::floor(y_px);
  const int64_t x0 = static_cast<int64_t>(fx0), y0 = static_cast<int64_t>(fy0);
  const double ax = x_px - fx0, ay = y_px - fy0;
  const float w00 = static_cast<float>((1 - ax) * (1 - ay));
  const float w01 = static_cast<float>(ax * (1 - ay));
  const float w10 = static_cast<float>((1 - ax) * ay);
  const float w11 = static_cast<float>(ax * ay);
  const bool vx0 = x0 >= 0 && x0 < w, vx1 = x0 + 1 >= 0 && x0 + 1 < w;
  const bool vy0 = y0 >= 0 && y0 < h, vy1 = y0 + 1 >= 0 && y0 + 1 < h;
  const float* base = feature.data().data();
  for (int64_t i = 0; i < n; ++i) {
    const float* plane = base + (c0 + i) * h * w;
    float v = 0.0f;
    if (vy0 && vx0) v += w00 * plane[y0 * w + x0];
    if (vy0 && vx1) v += w01 * plane[y0 * w + x0 + 1];
    if (vy1 && vx0) v += w10 * plane[(y0 + 1) * w + x0];
    if (vy1 && vx1) v += w11 * plane[(y0 + 1) * w + x0 + 1];
    out[i] = v;
  }
}

void sample_pixel_grad(const Tensor& feature, int64_t c0, int64_t n, double x_px, double y_px,
                       const float* upstream, double* gx, double* gy) {
  const int64_t h = feature.dim(1), w = feature.dim(2);
  const double fx0 = std::floor(x_px), fy0 = std::floor(y_px);
  const int64_t x0 = static_cast<int64_t>(fx0), y0 = static_cast<int64_t>(fy0);
  const double ax = x_px - fx0, ay = y_px - fy0;
  const float* base = feature.data().data();
  auto read = [&](const float* plane, int64_t y, int64_t x) -> double {
    return (y >= 0 && y < h && x >= 0 && x < w) ? plane[y * w + x] : 0.0;
  };
  double sx = 0.0, sy = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const float* plane = base + (c0 + i) * h * w;
    const double v00 = read(plane, y0, x0), v01 = read(plane, y0, x0 + 1);
    const double v10 = read(plane, y0 + 1, x0), v11 = read(plane, y0 + 1, x0 + 1);
    const double dx = (1 - ay) * (v01 - v00) + ay * (v11 - v10);
    const double dy = (1 - ax) * (v10 - v00) + ax * (v11 - v01);
    sx += upstream[i] * dx;
    sy += upstream[i] * dy;
  }
  *gx = sx;
  *gy = sy;
}

}  // namespace detail

Tensor bilinear_sample(const Tensor& feature, const Tensor& points) {
  require_shape(feature.rank() == 3, "bilinear_sample feature must be C x H x W");
  require_shape(points.rank() == 2 && points.dim(1) == 2, "bilinear_sample points must be P x 2");
  const int64_t c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  const int64_t p = points.dim(0);
  Tensor out({p, c});
  for (int64_t i = 0; i < p; ++i) {
    const double x_px = static_cast<double>(points.at(i, 0)) * w - 0.5;
    const double y_px = static_cast<double>(points.at(i, 1)) * h - 0.5;
    detail::sample_pixel(feature, 0, c, x_px, y_px, &out.at(i, 0));
  }
  instrument::add_macs(p * c * 4);
  return out;
}

Tensor bilinear_sample_grad(const Tensor& feature, const Tensor& points, const Tensor& upstream) {
  require_shape(feature.rank() == 3, "bilinear_sample_grad feature must be C x H x W");
  require_shape(points.rank() == 2 && points.dim(1) == 2, "points must be P x 2");
  const int64_t c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  const int64_t p = points.dim(0);
  require_shape(upstream.rank() == 2 && upstream.dim(0) == p && upstream.dim(1) == c,
                "upstream must be P x C");
  Tensor grad({p, 2});
  for (int64_t i = 0; i < p; ++i) {
    const double x_px = static_cast<double>(points.at(i, 0)) * w - 0.5;
    const double y_px = static_cast<double>(points.at(i, 1)) * h - 0.5;
    double gx = 0.0, gy = 0.0;
    detail::sample_pixel_grad(feature, 0, c, x_px, y_px, &upstream.at(i, 0), &gx, &gy);
    grad.at(i, 0) = static_cast<float>(gx * w);
    grad.at(i, 1) = static_cast<float>(gy * h);
  }
  return grad;
}

Tensor bilinear_resize(const Tensor& feature, int64_t out_h, int64_t out_w) {
  require_shape(feature.rank() == 3, "bilinear_resize feature must be C x H x W");
  require_shape(out_h > 0 && out_w > 0, "bilinear_resize target extents must be positive");
  const int64_t c = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  if (out_h == h && out_w == w) return feature;

  // Source coordinates are clamped to the hull of pixel centers, so the
  // border pixels are replicated rather than blended with zeros.
  auto source = [](int64_t i, int64_t out_n, int64_t in_n, int64_t& i0, int64_t& i1, float& a) {
    double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in_n) /
                   static_cast<double>(out_n) -
               0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in_n - 1));
    i0 = static_cast<int64_t>(std::floor(s));
    i1 = std::min(i0 + 1, in_n - 1);
    a = static_cast<float>(s - static_cast<double>(i0));
  };

  std::vector<int64_t> x0(out_w), x1(out_w);
  std::vector<float> ax(out_w);
  for (int64_t j = 0; j < out_w; ++j) source(j, out_w, w, x0[j], x1[j], ax[j]);

  Tensor out({c, out_h, out_w});
  for (int64_t i = 0; i < out_h; ++i) {
    int64_t y0, y1;
    float ay;
    source(i, out_h, h, y0, y1, ay);
    for (int64_t ch = 0; ch < c; ++ch) {
      for (int64_t j = 0; j < out_w; ++j) {
        const float top = (1 - ax[j]) * feature.at(ch, y0, x0[j]) + ax[j] * feature.at(ch, y0, x1[j]);
        const float bot = (1 - ax[j]) * feature.at(ch, y1, x0[j]) + ax[j] * feature.at(ch, y1, x1[j]);
        out.at(ch, i, j) = (1 - ay) * top + ay * bot;
      }
    }
  }
  instrument::add_macs(c * out_h * out_w * 4);
  instrument::add_call("bilinear_resize");
  return out;
}

Tensor sine_positional_encoding(int64_t h, int64_t w, int64_t channels, double temperature) {
  require_config(channels > 0 && channels % 4 == 0,
                 "sine positional encoding needs a positive channel count divisible by 4, got " +
                     std::to_string(channels));
  require_config(h > 0 && w > 0, "sine positional encoding needs positive extents");
  const int64_t half = channels / 2;
  constexpr double kTwoPi = 2.0 * std::numbers::pi;

  std::vector<double> inv_freq(static_cast<size_t>(half));
  for (int64_t i = 0; i < half; ++i) {
    inv_freq[i] = 1.0 / std::pow(temperature, 2.0 * static_cast<double>(i / 2) / half);
  }
  Tensor out({channels, h, w});
  for (int64_t y = 0; y < h; ++y) {
    const double ny = static_cast<double>(y + 1) / static_cast<double>(h) * kTwoPi;
    for (int64_t x = 0; x < w; ++x) {
      const double nx = static_cast<double>(x + 1) / static_cast<double>(w) * kTwoPi;
      for (int64_t i = 0; i < half; ++i) {
        const double ay = ny * inv_freq[i];
        const double axv = nx * inv_freq[i];
        out.at(i, y, x) = static_cast<float>(i % 2 == 0 ? std::sin(ay) : std::cos(ay));
        out.at(half + i, y, x) = static_cast<float>(i % 2 == 0 ? std::sin(axv) : std::cos(axv));
      }
    }
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  add_inplace(out, b);
  return out;
}

void add_inplace(Tensor& a, const Tensor& b) {
  require_shape(a.shape() == b.shape(), "add shape mismatch: " + shape_to_string(a.shape()) +
                                            " vs " + shape_to_string(b.shape()));
  auto da = a.data();
  auto db = b.data();
  for (size_t i = 0; i < da.size(); ++i) da[i] += db[i];
}

Tensor flatten_hw(const Tensor& feature) {
  require_shape(feature.rank() == 3, "flatten_hw expects C x H x W");
  const int64_t c = feature.dim(0), hw = feature.dim(1) * feature.dim(2);
  Tensor out({hw, c});
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t i = 0; i < hw; ++i) out.at(i, ch) = feature[ch * hw + i];
  }
  return out;
}

Tensor unflatten_hw(const Tensor& tokens, int64_t offset, int64_t h, int64_t w) {
  require_shape(tokens.rank() == 2 && offset >= 0 && offset + h * w <= tokens.dim(0),
                "unflatten_hw range out of bounds");
  const int64_t c = tokens.dim(1);
  Tensor out({c, h, w});
  for (int64_t i = 0; i < h * w; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) out[ch * h * w + i] = tokens.at(offset + i, ch);
  }
  return out;
}

}  // namespace lips
