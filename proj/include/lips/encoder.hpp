#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lips/layers.hpp"
#include "lips/tensor.hpp"

namespace lips {

/// One level of a feature hierarchy. `level_index` runs 1..4 with 1 the
/// highest resolution; `stride` is input pixels per feature cell.
struct FeatureLevel {
  int level_index = 0;
  int64_t stride = 0;
  Tensor tensor;  // C x H x W
};

struct FeaturePyramid {
  std::vector<FeatureLevel> levels;  // ordered by level_index

  const FeatureLevel& level(int index) const;
};

inline constexpr std::array<int64_t, 4> kDefaultEncoderChannels = {32, 64, 128, 256};
inline constexpr std::array<int64_t, 4> kPyramidStrides = {4, 8, 16, 32};

/// Stand-in hierarchical encoder: a two-conv stride-4 stem followed by three
/// stride-2 stages, each a 3x3 conv with ReLU.
struct EncoderWeights {
  std::array<int64_t, 4> channels{};
  ConvLayer stem1;
  ConvLayer stem2;
  std::array<ConvLayer, 3> stages;

  template <class Self, class F>
  static void fields(Self& self, F&& f) {
    ConvLayer::fields(self.stem1, "encoder.stem1", f);
    ConvLayer::fields(self.stem2, "encoder.stem2", f);
    for (int i = 0; i < 3; ++i) {
      ConvLayer::fields(self.stages[i], "encoder.stage" + std::to_string(i + 2), f);
    }
  }
};

EncoderWeights build_toy_encoder(uint64_t seed,
                                 std::array<int64_t, 4> channels = kDefaultEncoderChannels);

/// Closed-form parameter count of the toy encoder for `channels`.
int64_t toy_encoder_parameter_count(const std::array<int64_t, 4>& channels);

/// Runs the toy encoder on a 3 x H x W image. H and W must be multiples of 32.
FeaturePyramid run_encoder(const EncoderWeights& weights, const Tensor& image);

/// Static level selection plus per-level compression geometry.
struct RoutingConfig {
  std::vector<int> selected_levels = {1, 2};
  std::array<int, 4> compression_strides = {2, 2, 2, 3};  // indexed by level - 1
  int kernel = 3;
  int64_t output_channels = 128;

  int stride_for(int level) const { return compression_strides[static_cast<size_t>(level - 1)]; }
  int padding() const { return kernel / 2; }
};

void validate(const RoutingConfig& cfg);

/// Compression convs for all four levels; routing decides which are used.
/// Weights are drawn for every level in a fixed order so the parameters of
/// one level never depend on which other levels are selected.
struct CompressionWeights {
  std::array<ConvLayer, 4> levels;
  std::vector<int> active;  // selected level indices

  template <class Self, class F>
  static void fields(Self& self, F&& f) {
    for (int level : self.active) {
      ConvLayer::fields(self.levels[static_cast<size_t>(level - 1)],
                        "routing.level" + std::to_string(level), f);
    }
  }
};

CompressionWeights build_compression(uint64_t seed, const RoutingConfig& cfg,
                                     const std::array<int64_t, 4>& encoder_channels);

/// Selects cfg.selected_levels from `pyramid` and applies each level's
/// strided compression conv. Output is ordered fine to coarse.
std::vector<FeatureLevel> route_and_compress(const FeaturePyramid& pyramid,
                                             const RoutingConfig& cfg,
                                             const CompressionWeights& weights);

}  // namespace lips
