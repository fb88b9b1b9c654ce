#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "lips/instrument.hpp"
#include "lips/model_config.hpp"

namespace lips {

struct Conv2dOp {
  int64_t cin = 0, cout = 0, k = 1, out_h = 0, out_w = 0;
};
struct LinearOp {
  int64_t n = 0, cin = 0, cout = 0;
  bool bias = true;
};
struct LayerNormOp {
  int64_t n = 0, c = 0;
};
struct SoftmaxOp {
  int64_t n = 0, k = 0;
};
/// Multi-head attention including its four projections.
struct AttentionOp {
  int64_t q = 0, n = 0, d = 0, kv_dim = 0;
};
/// Deformable attention including offset, weight, value and output
/// projections plus bilinear sampling and aggregation.
struct MsDeformAttnOp {
  int64_t n_query = 0, n_value = 0, d = 0, heads = 0, levels = 0, points = 0;
};
struct BilinearResizeOp {
  int64_t c = 0, in_h = 0, in_w = 0, out_h = 0, out_w = 0;
};
struct MatmulOp {
  int64_t m = 0, k = 0, n = 0;
};
/// Learned table with no compute (queries, level embeddings).
struct EmbeddingOp {
  int64_t rows = 0, dim = 0;
};
struct ExternalOp {
  std::string name;
  int64_t macs = 0, params = 0;
};

using OpDescriptor = std::variant<Conv2dOp, LinearOp, LayerNormOp, SoftmaxOp, AttentionOp,
                                  MsDeformAttnOp, BilinearResizeOp, MatmulOp, EmbeddingOp,
                                  ExternalOp>;

struct PrimitiveCost {
  int64_t macs = 0;
  int64_t params = 0;
};

PrimitiveCost count_primitive(const OpDescriptor& op);
std::string_view op_kind(const OpDescriptor& op);

/// Parses "kind key=value ..." such as "conv2d cin=128 cout=128 k=3 out_h=80 out_w=80".
OpDescriptor parse_op(std::string_view text);

/// Black-box stage cost: macs(p) = c0 + c1 * p + c2 * p^2 for p input pixels.
struct ExternalStageCost {
  std::string name;
  double c0 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  int64_t params = 0;

  int64_t macs(int64_t pixels) const;
};

/// Published whole-network figures for the small hierarchical encoder:
/// 4.6 GMACs at 512 x 512 and 3.0 M parameters, linear in pixels.
ExternalStageCost afformer_base_cost();

/// ResNet-50 trunk parameters with a per-pixel cost calibrated so the
/// baseline preset's encoder share at 640 x 640 equals `share`.
ExternalStageCost resnet50_cost(double share = 0.316);

/// Scales a linear-in-pixels encoder cost so that it takes `share` of the
/// total for `cfg` at its configured resolution.
ExternalStageCost calibrate_encoder_cost(const ModelConfig& cfg, double share,
                                         const std::string& name, int64_t params);

struct CostItem {
  Stage stage = Stage::encoder;
  std::string name;
  OpDescriptor op;
  bool counts_params = true;  // false for repeated applications of shared weights
};

/// Every primitive the forward pass executes for `cfg`, in execution order.
/// `encoder` replaces the toy encoder convolutions when set.
std::vector<CostItem> layer_list(const ModelConfig& cfg,
                                 const std::optional<ExternalStageCost>& encoder = std::nullopt);

struct CostEntry {
  Stage stage = Stage::encoder;
  int64_t macs = 0;
  int64_t params = 0;
};

struct ItemCost {
  Stage stage = Stage::encoder;
  std::string name;
  std::string kind;
  int64_t macs = 0;
  int64_t params = 0;
};

struct CostReport {
  std::string config;
  int64_t input_h = 0;
  int64_t input_w = 0;
  std::array<CostEntry, kNumStages> entries{};
  std::vector<ItemCost> items;
  int64_t total_macs = 0;
  int64_t total_params = 0;

  const CostEntry& entry(Stage s) const { return entries[static_cast<size_t>(s)]; }
  double share(Stage s) const;  // percent of total_macs
};

/// Encoder cost used for cfg.encoder_cost when no override is given.
std::optional<ExternalStageCost> default_encoder_cost(const ModelConfig& cfg);

CostReport profile_model(const ModelConfig& cfg);
/// Explicit encoder cost; std::nullopt counts the toy encoder.
CostReport profile_model(const ModelConfig& cfg, const std::optional<ExternalStageCost>& encoder);

struct SweepRow {
  std::string label;
  CostReport report;
};

struct SweepTable {
  std::string kind;
  std::vector<SweepRow> rows;
};

SweepTable sweep_encoder_layers(const ModelConfig& base, const std::vector<int>& depths);
/// Sets pixel-decoder width, routing output channels and FFN width (4x).
SweepTable sweep_width(const ModelConfig& base, const std::vector<int64_t>& widths);
SweepTable sweep_routing(const ModelConfig& base, const std::vector<std::vector<int>>& level_sets);
SweepTable sweep_resolution(const std::vector<ModelConfig>& cfgs,
                            const std::vector<std::pair<int64_t, int64_t>>& resolutions);

/// total(depths[i+1]) - total(depths[i]) divided by the depth step.
std::vector<int64_t> marginal_layer_macs(const SweepTable& layers, const std::vector<int>& depths);

std::string render_markdown(const CostReport& report);
std::string render_markdown(const SweepTable& table);
std::string render_csv(const CostReport& report);
std::string render_csv(const SweepTable& table);

/// Worker count for sweeps: LIPS_THREADS if set and positive, otherwise
/// the hardware concurrency.
unsigned sweep_threads();

}  // namespace lips
