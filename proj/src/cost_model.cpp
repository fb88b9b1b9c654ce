#include "lips/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

#include "lips/pixel_decoder.hpp"

namespace lips {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

int64_t conv_out(int64_t n, int64_t k, int64_t stride, int64_t pad) {
  return (n + 2 * pad - k) / stride + 1;
}

struct Grid {
  int64_t h = 0;
  int64_t w = 0;
  int64_t stride = 0;
};

}  // namespace

PrimitiveCost count_primitive(const OpDescriptor& op) {
  return std::visit(
      Overloaded{
          [](const Conv2dOp& o) {
            return PrimitiveCost{o.out_h * o.out_w * o.cout * o.cin * o.k * o.k,
                                 o.cout * o.cin * o.k * o.k + o.cout};
          },
          [](const LinearOp& o) {
            return PrimitiveCost{o.n * o.cin * o.cout, o.cin * o.cout + (o.bias ? o.cout : 0)};
          },
          [](const LayerNormOp& o) { return PrimitiveCost{0, 2 * o.c}; },
          [](const SoftmaxOp&) { return PrimitiveCost{}; },
          [](const AttentionOp& o) {
            const int64_t proj = 2 * o.q * o.d * o.d + 2 * o.n * o.kv_dim * o.d;
            return PrimitiveCost{proj + 2 * o.q * o.n * o.d,
                                 2 * (o.d * o.d + o.d) + 2 * (o.kv_dim * o.d + o.d)};
          },
          [](const MsDeformAttnOp& o) {
            const int64_t s = o.heads * o.levels * o.points;
            const int64_t dh = o.d / o.heads;
            const int64_t macs = o.n_query * o.d * 3 * s        // offsets and logits
                                 + o.n_value * o.d * o.d        // value projection
                                 + o.n_query * s * dh * 5       // sample and aggregate
                                 + o.n_query * o.d * o.d;       // output projection
            const int64_t params = linear_params(o.d, 2 * s) + linear_params(o.d, s) +
                                   2 * linear_params(o.d, o.d);
            return PrimitiveCost{macs, params};
          },
          [](const BilinearResizeOp& o) {
            const bool same = o.in_h == o.out_h && o.in_w == o.out_w;
            return PrimitiveCost{same ? 0 : o.c * o.out_h * o.out_w * 4, 0};
          },
          [](const MatmulOp& o) { return PrimitiveCost{o.m * o.k * o.n, 0}; },
          [](const EmbeddingOp& o) { return PrimitiveCost{0, o.rows * o.dim}; },
          [](const ExternalOp& o) { return PrimitiveCost{o.macs, o.params}; },
      },
      op);
}

std::string_view op_kind(const OpDescriptor& op) {
  static constexpr std::array<std::string_view, 10> kinds = {
      "conv2d",          "linear", "layer_norm", "softmax",   "attention",
      "msdeform_attn",   "bilinear_resize",      "matmul",    "embedding", "external"};
  return kinds[op.index()];
}

OpDescriptor parse_op(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string kind;
  if (!(in >> kind)) throw InvalidConfigError("empty op descriptor");
  std::map<std::string, int64_t> kv;
  std::string name;
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw InvalidConfigError("malformed op field '" + tok + "'");
    }
    const std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
    if (key == "name") {
      name = value;
      continue;
    }
    try {
      size_t used = 0;
      kv[key] = std::stoll(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw InvalidConfigError("op field '" + key + "' needs an integer, got '" + value + "'");
    }
  }
  auto take = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw InvalidConfigError(kind + " descriptor lacks '" + key + "'");
    const int64_t v = it->second;
    kv.erase(it);
    return v;
  };
  auto take_or = [&](const char* key, int64_t fallback) {
    return kv.count(key) ? take(key) : fallback;
  };
  OpDescriptor op;
  if (kind == "conv2d") {
    op = Conv2dOp{take("cin"), take("cout"), take("k"), take("out_h"), take("out_w")};
  } else if (kind == "linear") {
    op = LinearOp{take("n"), take("cin"), take("cout"), take_or("bias", 1) != 0};
  } else if (kind == "layer_norm") {
    op = LayerNormOp{take("n"), take("c")};
  } else if (kind == "softmax") {
    op = SoftmaxOp{take("n"), take("k")};
  } else if (kind == "attention") {
    const int64_t q = take("q"), n = take("n"), d = take("d");
    op = AttentionOp{q, n, d, take_or("kv_dim", d)};
  } else if (kind == "msdeform_attn") {
    const int64_t nq = take("n_query");
    op = MsDeformAttnOp{nq, take_or("n_value", nq), take("d"), take("heads"), take("levels"),
                        take("points")};
  } else if (kind == "bilinear_resize") {
    op = BilinearResizeOp{take("c"), take("in_h"), take("in_w"), take("out_h"), take("out_w")};
  } else if (kind == "matmul") {
    op = MatmulOp{take("m"), take("k"), take("n")};
  } else if (kind == "embedding") {
    op = EmbeddingOp{take("rows"), take("dim")};
  } else if (kind == "external") {
    op = ExternalOp{name, take("macs"), take_or("params", 0)};
  } else {
    throw InvalidConfigError("unknown op kind '" + kind + "'");
  }
  if (!kv.empty()) {
    throw InvalidConfigError("unknown field '" + kv.begin()->first + "' for " + kind);
  }
  return op;
}

int64_t ExternalStageCost::macs(int64_t pixels) const {
  const double p = static_cast<double>(pixels);
  return std::llround(c0 + c1 * p + c2 * p * p);
}

ExternalStageCost afformer_base_cost() {
  return {"afformer_base", 0.0, 4.6e9 / (512.0 * 512.0), 0.0, 3'000'000};
}

ExternalStageCost calibrate_encoder_cost(const ModelConfig& cfg, double share,
                                         const std::string& name, int64_t params) {
  require_config(share > 0.0 && share < 1.0, "encoder share must lie in (0, 1)");
  const ExternalStageCost zero{name, 0.0, 0.0, 0.0, 0};
  const CostReport rest = profile_model(cfg, zero);
  const double target = share / (1.0 - share) * static_cast<double>(rest.total_macs);
  return {name, 0.0, target / static_cast<double>(cfg.input_h * cfg.input_w), 0.0, params};
}

ExternalStageCost resnet50_cost(double share) {
  ModelConfig cfg = preset_config("mask2former_r50_like");
  cfg.input_h = cfg.input_w = 640;
  return calibrate_encoder_cost(cfg, share, "resnet50", 23'508'032);
}

std::vector<CostItem> layer_list(const ModelConfig& cfg,
                                 const std::optional<ExternalStageCost>& encoder) {
  validate(cfg);
  std::vector<CostItem> items;
  auto push = [&](Stage s, std::string name, OpDescriptor op, bool params = true) {
    items.push_back({s, std::move(name), std::move(op), params});
  };
  const int64_t H = cfg.input_h, W = cfg.input_w;

  // Encoder pyramid geometry always follows the toy encoder's convolutions.
  std::array<Grid, 4> pyr;
  {
    const auto& c = cfg.encoder_channels;
    Grid g{conv_out(H, 3, 2, 1), conv_out(W, 3, 2, 1), 2};
    if (!encoder) push(Stage::encoder, "encoder.stem1", Conv2dOp{3, c[0], 3, g.h, g.w});
    g = {conv_out(g.h, 3, 2, 1), conv_out(g.w, 3, 2, 1), 4};
    if (!encoder) push(Stage::encoder, "encoder.stem2", Conv2dOp{c[0], c[0], 3, g.h, g.w});
    pyr[0] = g;
    for (size_t i = 0; i < 3; ++i) {
      g = {conv_out(g.h, 3, 2, 1), conv_out(g.w, 3, 2, 1), g.stride * 2};
      if (!encoder) {
        push(Stage::encoder, "encoder.stage" + std::to_string(i + 2),
             Conv2dOp{c[i], c[i + 1], 3, g.h, g.w});
      }
      pyr[i + 1] = g;
    }
    if (encoder) {
      push(Stage::encoder, "encoder." + encoder->name,
           ExternalOp{encoder->name, encoder->macs(H * W), encoder->params});
    }
  }

  // Routing and compression.
  const auto& r = cfg.routing;
  std::vector<Grid> routed;
  for (int l : r.selected_levels) {
    const Grid& src = pyr[static_cast<size_t>(l - 1)];
    const int s = r.stride_for(l);
    const Grid g{conv_out(src.h, r.kernel, s, r.padding()), conv_out(src.w, r.kernel, s, r.padding()),
                 src.stride * s};
    push(Stage::routing, "routing.level" + std::to_string(l),
         Conv2dOp{cfg.encoder_channels[static_cast<size_t>(l - 1)], r.output_channels, r.kernel,
                  g.h, g.w});
    routed.push_back(g);
  }

  // Deformable encoder.
  const auto& p = cfg.pixel_decoder;
  const int64_t d = p.width;
  const int64_t nl = static_cast<int64_t>(routed.size());
  int64_t tokens = 0;
  for (const Grid& g : routed) tokens += g.h * g.w;
  push(Stage::pixel_decoder, "pixel_decoder.level_embed", EmbeddingOp{nl, d});
  for (int i = 0; i < p.depth; ++i) {
    const std::string pre = "pixel_decoder.layer" + std::to_string(i);
    push(Stage::pixel_decoder, pre + ".norm1", LayerNormOp{tokens, d});
    push(Stage::pixel_decoder, pre + ".attn",
         MsDeformAttnOp{tokens, tokens, d, p.heads, nl, p.points});
    push(Stage::pixel_decoder, pre + ".norm2", LayerNormOp{tokens, d});
    push(Stage::pixel_decoder, pre + ".ffn1", LinearOp{tokens, d, p.ffn_dim});
    push(Stage::pixel_decoder, pre + ".ffn2", LinearOp{tokens, p.ffn_dim, d});
  }
  push(Stage::pixel_decoder, "pixel_decoder.encoder_norm", LayerNormOp{tokens, d});

  // Top-down FPN.
  std::vector<int64_t> strides;
  for (const Grid& g : routed) strides.push_back(g.stride);
  std::optional<Grid> prev;
  for (const Grid& g : routed) {
    if (g.stride > kMaskFeatureStrides.back() && (!prev || g.stride < prev->stride)) prev = g;
  }
  std::array<Grid, 3> scales;
  for (int ti = 2; ti >= 0; --ti) {
    const int64_t s = kMaskFeatureStrides[static_cast<size_t>(ti)];
    const Grid t{ceil_div(H, s), ceil_div(W, s), s};
    const std::string tag = "pixel_decoder.s" + std::to_string(s);
    const Grid& src = routed[nearest_level(strides, s)];
    push(Stage::pixel_decoder, tag + ".resize_src", BilinearResizeOp{d, src.h, src.w, t.h, t.w});
    push(Stage::pixel_decoder, "pixel_decoder.lateral_s" + std::to_string(s),
         Conv2dOp{d, d, 1, t.h, t.w});
    if (prev) {
      push(Stage::pixel_decoder, tag + ".resize_prev",
           BilinearResizeOp{d, prev->h, prev->w, t.h, t.w});
    }
    push(Stage::pixel_decoder, "pixel_decoder.smooth_s" + std::to_string(s),
         Conv2dOp{d, d, 3, t.h, t.w});
    scales[static_cast<size_t>(ti)] = t;
    prev = t;
  }
  Grid per_pixel = scales[0];
  if (p.stride4_mask_features) {
    const Grid t{ceil_div(H, 4), ceil_div(W, 4), 4};
    push(Stage::pixel_decoder, "pixel_decoder.s4.resize_src",
         BilinearResizeOp{cfg.encoder_channels[0], pyr[0].h, pyr[0].w, t.h, t.w});
    push(Stage::pixel_decoder, "pixel_decoder.lateral_s4",
         Conv2dOp{cfg.encoder_channels[0], d, 1, t.h, t.w});
    push(Stage::pixel_decoder, "pixel_decoder.s4.resize_prev",
         BilinearResizeOp{d, scales[0].h, scales[0].w, t.h, t.w});
    push(Stage::pixel_decoder, "pixel_decoder.smooth_s4", Conv2dOp{d, d, 3, t.h, t.w});
    push(Stage::pixel_decoder, "pixel_decoder.mask_proj", Conv2dOp{d, d, 1, t.h, t.w});
    per_pixel = t;
  }

  // Query decoder and prediction heads.
  const auto& q = cfg.query_decoder;
  const int64_t nq = q.num_queries, hd = q.hidden_dim, dm = d;
  const int64_t hw = per_pixel.h * per_pixel.w;
  push(Stage::query_decoder, "query_decoder.query_feat", EmbeddingOp{nq, hd});
  push(Stage::query_decoder, "query_decoder.query_pos", EmbeddingOp{nq, hd});
  push(Stage::query_decoder, "query_decoder.level_embed", EmbeddingOp{3, dm});
  auto heads = [&](int round) {
    const bool first = round == 0;
    const std::string pre = "head.";
    push(Stage::head, pre + "decoder_norm", LayerNormOp{nq, hd}, first);
    push(Stage::head, pre + "class", LinearOp{nq, hd, q.num_classes + 1}, first);
    push(Stage::head, pre + "mask_mlp0", LinearOp{nq, hd, hd}, first);
    push(Stage::head, pre + "mask_mlp1", LinearOp{nq, hd, hd}, first);
    push(Stage::head, pre + "mask_mlp2", LinearOp{nq, hd, dm}, first);
    push(Stage::head, pre + "mask_logits", MatmulOp{nq, dm, hw}, first);
  };
  heads(0);
  for (int i = 0; i < q.num_layers; ++i) {
    const std::string pre = "query_decoder.layer" + std::to_string(i);
    const Grid& g = scales[static_cast<size_t>(scale_for_layer(i))];
    push(Stage::query_decoder, pre + ".mask_resize",
         BilinearResizeOp{nq, per_pixel.h, per_pixel.w, g.h, g.w});
    push(Stage::query_decoder, pre + ".cross", AttentionOp{nq, g.h * g.w, hd, dm});
    push(Stage::query_decoder, pre + ".cross_norm", LayerNormOp{nq, hd});
    push(Stage::query_decoder, pre + ".self", AttentionOp{nq, nq, hd, hd});
    push(Stage::query_decoder, pre + ".self_norm", LayerNormOp{nq, hd});
    push(Stage::query_decoder, pre + ".ffn1", LinearOp{nq, hd, q.ffn_dim});
    push(Stage::query_decoder, pre + ".ffn2", LinearOp{nq, q.ffn_dim, hd});
    push(Stage::query_decoder, pre + ".ffn_norm", LayerNormOp{nq, hd});
    heads(i + 1);
  }
  return items;
}

double CostReport::share(Stage s) const {
  if (total_macs == 0) return 0.0;
  return 100.0 * static_cast<double>(entry(s).macs) / static_cast<double>(total_macs);
}

std::optional<ExternalStageCost> default_encoder_cost(const ModelConfig& cfg) {
  switch (cfg.encoder_cost) {
    case EncoderCost::toy: return std::nullopt;
    case EncoderCost::resnet50: return resnet50_cost();
    case EncoderCost::afformer_base: return afformer_base_cost();
  }
  return std::nullopt;
}

CostReport profile_model(const ModelConfig& cfg) {
  return profile_model(cfg, default_encoder_cost(cfg));
}

CostReport profile_model(const ModelConfig& cfg, const std::optional<ExternalStageCost>& encoder) {
  CostReport report;
  report.config = cfg.preset;
  report.input_h = cfg.input_h;
  report.input_w = cfg.input_w;
  for (size_t i = 0; i < report.entries.size(); ++i) report.entries[i].stage = kAllStages[i];
  for (const CostItem& item : layer_list(cfg, encoder)) {
    PrimitiveCost c = count_primitive(item.op);
    if (!item.counts_params) c.params = 0;
    CostEntry& e = report.entries[static_cast<size_t>(item.stage)];
    e.macs += c.macs;
    e.params += c.params;
    report.items.push_back({item.stage, item.name, std::string(op_kind(item.op)), c.macs, c.params});
  }
  for (const CostEntry& e : report.entries) {
    report.total_macs += e.macs;
    report.total_params += e.params;
  }
  return report;
}

unsigned sweep_threads() {
  if (const char* env = std::getenv("LIPS_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

// Profiles each config on a small worker pool; rows keep input order.
SweepTable run_sweep(std::string kind, const std::vector<std::pair<std::string, ModelConfig>>& cfgs) {
  SweepTable table;
  table.kind = std::move(kind);
  table.rows.resize(cfgs.size());
  std::vector<std::exception_ptr> errors(cfgs.size());
  const size_t workers = std::min<size_t>(sweep_threads(), std::max<size_t>(cfgs.size(), 1));
  std::vector<std::thread> pool;
  for (size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      for (size_t i = t; i < cfgs.size(); i += workers) {
        try {
          table.rows[i] = {cfgs[i].first, profile_model(cfgs[i].second)};
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return table;
}

}  // namespace

SweepTable sweep_encoder_layers(const ModelConfig& base, const std::vector<int>& depths) {
  std::vector<std::pair<std::string, ModelConfig>> cfgs;
  for (int depth : depths) {
    ModelConfig c = base;
    c.pixel_decoder.depth = depth;
    cfgs.emplace_back("depth=" + std::to_string(depth), c);
  }
  return run_sweep("layers", cfgs);
}

SweepTable sweep_width(const ModelConfig& base, const std::vector<int64_t>& widths) {
  std::vector<std::pair<std::string, ModelConfig>> cfgs;
  for (int64_t width : widths) {
    ModelConfig c = base;
    c.pixel_decoder.width = width;
    c.pixel_decoder.ffn_dim = 4 * width;
    c.routing.output_channels = width;
    cfgs.emplace_back("width=" + std::to_string(width), c);
  }
  return run_sweep("width", cfgs);
}

SweepTable sweep_routing(const ModelConfig& base, const std::vector<std::vector<int>>& level_sets) {
  std::vector<std::pair<std::string, ModelConfig>> cfgs;
  for (const auto& set : level_sets) {
    ModelConfig c = base;
    c.routing.selected_levels = set;
    std::string label = "levels={";
    for (size_t i = 0; i < set.size(); ++i) label += (i ? "," : "") + std::to_string(set[i]);
    cfgs.emplace_back(label + "}", c);
  }
  return run_sweep("routing", cfgs);
}

SweepTable sweep_resolution(const std::vector<ModelConfig>& base_cfgs,
                            const std::vector<std::pair<int64_t, int64_t>>& resolutions) {
  std::vector<std::pair<std::string, ModelConfig>> cfgs;
  for (const auto& [h, w] : resolutions) {
    for (const ModelConfig& base : base_cfgs) {
      ModelConfig c = base;
      c.input_h = h;
      c.input_w = w;
      cfgs.emplace_back(base.preset + "@" + std::to_string(h) + "x" + std::to_string(w), c);
    }
  }
  return run_sweep("resolution", cfgs);
}

std::vector<int64_t> marginal_layer_macs(const SweepTable& layers, const std::vector<int>& depths) {
  require_config(layers.rows.size() == depths.size(), "depth list does not match the sweep rows");
  std::vector<int64_t> out;
  for (size_t i = 1; i < depths.size(); ++i) {
    const int step = depths[i] - depths[i - 1];
    require_config(step != 0, "repeated depth in sweep");
    out.push_back((layers.rows[i].report.total_macs - layers.rows[i - 1].report.total_macs) / step);
  }
  return out;
}

namespace {

std::string gmacs(int64_t macs) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(3) << static_cast<double>(macs) / 1e9;
  return s.str();
}

std::string mparams(int64_t params) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(3) << static_cast<double>(params) / 1e6;
  return s.str();
}

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << v;
  return s.str();
}

}  // namespace

std::string render_markdown(const CostReport& report) {
  std::ostringstream out;
  out << "### " << report.config << " @ " << report.input_h << "x" << report.input_w << "\n\n"
      << "| stage | GMACs | params (M) | share % |\n|---|---:|---:|---:|\n";
  for (const CostEntry& e : report.entries) {
    out << "| " << stage_name(e.stage) << " | " << gmacs(e.macs) << " | " << mparams(e.params)
        << " | " << pct(report.share(e.stage)) << " |\n";
  }
  out << "| total | " << gmacs(report.total_macs) << " | " << mparams(report.total_params)
      << " | 100.0 |\n";
  return out.str();
}

std::string render_markdown(const SweepTable& table) {
  std::ostringstream out;
  out << "### sweep: " << table.kind << "\n\n| config | resolution | total GMACs | delta GMACs |";
  for (Stage s : kAllStages) out << ' ' << stage_name(s) << " % |";
  out << " params (M) |\n|---|---|---:|---:|";
  for (size_t i = 0; i < kAllStages.size(); ++i) out << "---:|";
  out << "---:|\n";
  for (size_t i = 0; i < table.rows.size(); ++i) {
    const CostReport& r = table.rows[i].report;
    out << "| " << table.rows[i].label << " | " << r.input_h << "x" << r.input_w << " | "
        << gmacs(r.total_macs) << " | "
        << (i == 0 ? std::string("-") : gmacs(r.total_macs - table.rows[i - 1].report.total_macs))
        << " |";
    for (Stage s : kAllStages) out << ' ' << pct(r.share(s)) << " |";
    out << ' ' << mparams(r.total_params) << " |\n";
  }
  return out.str();
}

namespace {

void csv_rows(std::ostringstream& out, const std::string& label, const CostReport& r) {
  std::ostringstream share;
  for (const CostEntry& e : r.entries) {
    share.str("");
    share << std::fixed << std::setprecision(4) << r.share(e.stage);
    out << label << ',' << stage_name(e.stage) << ',' << e.macs << ',' << e.params << ','
        << share.str() << '\n';
  }
  out << label << ",total," << r.total_macs << ',' << r.total_params << ",100.0000\n";
}

}  // namespace

std::string render_csv(const CostReport& report) {
  std::ostringstream out;
  out << "config,stage,macs,params,share_pct\n";
  csv_rows(out, report.config, report);
  return out.str();
}

std::string render_csv(const SweepTable& table) {
  std::ostringstream out;
  out << "config,stage,macs,params,share_pct\n";
  for (const SweepRow& row : table.rows) csv_rows(out, row.label, row.report);
  return out.str();
}

}  // namespace lips
