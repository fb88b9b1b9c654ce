#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "lips/encoder.hpp"
#include "lips/pixel_decoder.hpp"
#include "lips/query_decoder.hpp"

namespace lips {

/// Which analytic cost stands in for the encoder stage.
enum class EncoderCost { toy, resnet50, afformer_base };

std::string_view encoder_cost_name(EncoderCost c);
EncoderCost parse_encoder_cost(std::string_view name);

/// Full architecture description.
struct ModelConfig {
  std::string preset = "custom";
  int64_t input_h = 640;
  int64_t input_w = 640;
  std::array<int64_t, 4> encoder_channels = kDefaultEncoderChannels;
  uint64_t seed = 0;
  EncoderCost encoder_cost = EncoderCost::toy;
  RoutingConfig routing;
  PixelDecoderConfig pixel_decoder;
  QueryDecoderConfig query_decoder;
};

void validate(const ModelConfig& cfg);

const std::vector<std::string>& preset_names();

/// mask2former_r50_like, lips_full, lips_3, lips_2 or lips_1.
ModelConfig preset_config(std::string_view name);

/// Flat `key = value` text with `[section]` headers. A top-level
/// `preset = name` line seeds every field before the overrides apply.
ModelConfig parse_config(std::istream& in, const std::string& source = "config");
ModelConfig load_config(const std::string& path);
void write_config(std::ostream& out, const ModelConfig& cfg);

}  // namespace lips
