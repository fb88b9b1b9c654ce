#include "lips/encoder.hpp"

#include <algorithm>

#include "lips/init.hpp"
#include "lips/instrument.hpp"
#include "lips/kernels.hpp"

namespace lips {
const FeatureLevel& FeaturePyramid::level(int index) const {
  for (const auto& l : levels) {
    if (l.level_index == index) return l;
  }
  throw InvalidConfigError("pyramid has no level " + std::to_string(index));
}

EncoderWeights build_toy_encoder(uint64_t seed, std::array<int64_t, 4> channels) {
  for (size_t i = 0; i < channels.size(); ++i) {
    require_config(channels[i] > 0, "encoder channels must be positive");
    require_config(i == 0 || channels[i] > channels[i - 1], "encoder channels must be ascending");
  }
  WeightInit init(seed);
  EncoderWeights w;
  w.channels = channels;
  w.stem1 = make_conv(init, 3, channels[0], 3, 2);
  w.stem2 = make_conv(init, channels[0], channels[0], 3, 2);
  for (size_t i = 0; i < 3; ++i) w.stages[i] = make_conv(init, channels[i], channels[i + 1], 3, 2);
  return w;
}

int64_t toy_encoder_parameter_count(const std::array<int64_t, 4>& c) {
  auto conv = [](int64_t cin, int64_t cout) { return cout * cin * 9 + cout; };
  return conv(3, c[0]) + conv(c[0], c[0]) + conv(c[0], c[1]) + conv(c[1], c[2]) + conv(c[2], c[3]);
}

FeaturePyramid run_encoder(const EncoderWeights& weights, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw InvalidInputError("encoder input must be 3 x H x W, got " +
                            shape_to_string(image.shape()));
  }
  if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0) {
    throw InvalidInputError("input extents must be multiples of 32, got " +
                            shape_to_string(image.shape()));
  }
  StageScope stage(Stage::encoder);
  FeaturePyramid pyramid;
  Tensor x = relu(weights.stem1(image));
  x = relu(weights.stem2(x));
  pyramid.levels.push_back({1, kPyramidStrides[0], x});
  for (size_t i = 0; i < 3; ++i) {
    x = relu(weights.stages[i](x));
    pyramid.levels.push_back({static_cast<int>(i) + 2, kPyramidStrides[i + 1], x});
  }
  return pyramid;
}

void validate(const RoutingConfig& cfg) {
  require_config(!cfg.selected_levels.empty(), "routing must select at least one level");
  for (size_t i = 0; i < cfg.selected_levels.size(); ++i) {
    const int l = cfg.selected_levels[i];
    require_config(l >= 1 && l <= 4, "routed level must be in 1..4, got " + std::to_string(l));
    require_config(i == 0 || l > cfg.selected_levels[i - 1],
                   "routed levels must be strictly ascending");
    require_config(cfg.stride_for(l) >= 1, "compression stride must be positive");
  }
  require_config(cfg.kernel >= 1 && cfg.kernel % 2 == 1, "compression kernel must be odd");
  require_config(cfg.output_channels > 0, "routing output channels must be positive");
}

CompressionWeights build_compression(uint64_t seed, const RoutingConfig& cfg,
                                     const std::array<int64_t, 4>& encoder_channels) {
  validate(cfg);
  WeightInit init(seed);
  CompressionWeights w;
  for (int l = 1; l <= 4; ++l) {
    w.levels[static_cast<size_t>(l - 1)] =
        make_conv(init, encoder_channels[static_cast<size_t>(l - 1)], cfg.output_channels,
                  cfg.kernel, cfg.stride_for(l));
  }
  w.active = cfg.selected_levels;
  return w;
}

std::vector<FeatureLevel> route_and_compress(const FeaturePyramid& pyramid,
                                             const RoutingConfig& cfg,
                                             const CompressionWeights& weights) {
  validate(cfg);
  StageScope stage(Stage::routing);
  std::vector<FeatureLevel> out;
  for (int l : cfg.selected_levels) {
    const FeatureLevel& src = pyramid.level(l);
    const ConvLayer& conv = weights.levels[static_cast<size_t>(l - 1)];
    require_config(std::find(weights.active.begin(), weights.active.end(), l) !=
                       weights.active.end(),
                   "no compression weights for level " + std::to_string(l));
    FeatureLevel routed;
    routed.level_index = l;
    routed.stride = src.stride * cfg.stride_for(l);
    routed.tensor = conv2d(src.tensor, conv.weight, conv.bias, cfg.stride_for(l), cfg.padding());
    out.push_back(std::move(routed));
  }
  return out;
}

}  // namespace lips
