#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "lips/cost_model.hpp"
#include "lips/panoptic.hpp"
#include "lips/pipeline.hpp"
#include "lips/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace lips;

namespace {

struct ModelArgs {
  std::string config_path;
  std::string preset;
  int64_t resolution = 0;
  int64_t height = 0;
  int64_t width = 0;
};

void add_model_args(CLI::App* cmd, ModelArgs& a) {
  auto* cfg = cmd->add_option("--config", a.config_path, "Model config file");
  cmd->add_option("--preset", a.preset, "Named preset")->excludes(cfg);
  auto* res = cmd->add_option("--resolution", a.resolution, "Square input size");
  cmd->add_option("--height", a.height, "Input height")->excludes(res);
  cmd->add_option("--width", a.width, "Input width")->excludes(res);
}

ModelConfig resolve_config(const ModelArgs& a) {
  ModelConfig cfg;
  if (!a.config_path.empty()) {
    cfg = load_config(a.config_path);
  } else if (!a.preset.empty()) {
    cfg = preset_config(a.preset);
  } else {
    cfg = preset_config("lips_2");
  }
  if (a.resolution > 0) cfg.input_h = cfg.input_w = a.resolution;
  if (a.height > 0) cfg.input_h = a.height;
  if (a.width > 0) cfg.input_w = a.width;
  validate(cfg);
  return cfg;
}

std::string fmt1(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << v;
  return s.str();
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInputError("cannot read " + path);
  return in;
}

int cmd_profile(const ModelArgs& margs, const std::string& format, const std::string& sweep,
                const std::string& encoder_cost) {
  ModelConfig cfg = resolve_config(margs);
  std::optional<ExternalStageCost> enc = default_encoder_cost(cfg);
  if (encoder_cost != "default") {
    cfg.encoder_cost = parse_encoder_cost(encoder_cost);
    enc = default_encoder_cost(cfg);
  }
  const bool csv = format == "csv";
  if (sweep.empty()) {
    const CostReport report = profile_model(cfg, enc);
    std::cout << (csv ? render_csv(report) : render_markdown(report));
    return 0;
  }
  SweepTable table;
  if (sweep == "layers") {
    const std::vector<int> depths = {1, 2, 3, 4, 5, 6};
    table = sweep_encoder_layers(cfg, depths);
    if (!csv) {
      std::cout << render_markdown(table) << "\nmarginal GMACs per layer:";
      for (int64_t m : marginal_layer_macs(table, depths)) std::cout << ' ' << fmt1(m / 1e9);
      std::cout << '\n';
      return 0;
    }
  } else if (sweep == "width") {
    table = sweep_width(cfg, {256, 128, 64});
  } else if (sweep == "routing") {
    table = sweep_routing(cfg, {{1}, {1, 2}, {1, 2, 3}, {1, 2, 3, 4}});
  } else {
    std::vector<ModelConfig> cfgs = {preset_config("mask2former_r50_like"),
                                     preset_config("lips_full"), preset_config("lips_2")};
    table = sweep_resolution(cfgs, {{256, 256}, {512, 512}, {640, 640}, {1024, 1024}, {2048, 2048}});
    if (!csv) {
      std::cout << render_markdown(table) << "\nreduction baseline / lips_full:";
      for (size_t i = 0; i + 1 < table.rows.size(); i += 3) {
        const double f = static_cast<double>(table.rows[i].report.total_macs) /
                         static_cast<double>(table.rows[i + 1].report.total_macs);
        std::cout << ' ' << table.rows[i].report.input_h << "^2=" << fmt1(f) << 'x';
      }
      std::cout << '\n';
      return 0;
    }
  }
  std::cout << (csv ? render_csv(table) : render_markdown(table));
  return 0;
}

struct ForwardArgs {
  std::string input;
  std::optional<uint64_t> synthetic;
  std::optional<uint64_t> model_seed;
  std::string dump_dir;
  std::string save_weights;
  std::string categories;
  double object_score_threshold = 0.25;
  double overlap_keep_threshold = 0.8;
  bool no_attention_masks = false;
};

int cmd_forward(const ModelArgs& margs, const ForwardArgs& f) {
  ModelConfig cfg = resolve_config(margs);
  if (f.model_seed) cfg.seed = *f.model_seed;
  Tensor image;
  if (!f.input.empty()) {
    image = load_ltsr(f.input);
  } else {
    image = synthetic_image(*f.synthetic, cfg.input_h, cfg.input_w);
  }
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0) {
    throw InvalidInputError("input must be 3 x H x W with H and W multiples of 32, got " +
                            shape_to_string(image.shape()));
  }
  CategoryTable categories;
  if (!f.categories.empty()) {
    auto in = open_in(f.categories);
    categories = CategoryTable::read_csv(in, f.categories);
  } else {
    categories = CategoryTable::synthetic(cfg.query_decoder.num_classes);
  }

  const ModelWeights weights = build_model(cfg);
  QueryDecoderOptions qopts;
  qopts.use_attention_masks = !f.no_attention_masks;
  const ForwardResult r = run_forward(cfg, weights, image, qopts);

  PanopticOptions popts;
  popts.object_score_threshold = f.object_score_threshold;
  popts.overlap_keep_threshold = f.overlap_keep_threshold;
  popts.mask_threshold = cfg.query_decoder.mask_threshold;
  const PanopticSegmentation seg =
      panoptic_inference(r.decoder, categories, image.dim(1), image.dim(2), popts);

  if (!f.dump_dir.empty()) {
    const fs::path dir(f.dump_dir);
    fs::create_directories(dir);
    save_ltsr(dir / "class_logits.ltsr", r.decoder.class_logits);
    save_ltsr(dir / "mask_logits.ltsr", r.decoder.mask_logits);
    for (size_t i = 0; i < 3; ++i) {
      save_ltsr(dir / ("mask_features_" + std::to_string(kMaskFeatureStrides[i]) + ".ltsr"),
                r.mask_features.scales[i]);
    }
    std::ofstream lseg(dir / "panoptic.lseg");
    write_lseg(lseg, seg);
    std::ofstream cats(dir / "categories.csv");
    categories.write_csv(cats);
    if (!lseg || !cats) throw InvalidInputError("cannot write to " + f.dump_dir);
  }
  if (!f.save_weights.empty()) save_weight_dir(f.save_weights, to_named(weights));

  std::cout << "config " << cfg.preset << " input " << image.dim(1) << "x" << image.dim(2) << '\n';
  for (Stage s : kAllStages) std::cout << "macs " << stage_name(s) << ' ' << r.counters.stage_macs(s) << '\n';
  std::cout << "macs total " << r.counters.total() << '\n'
            << "params " << count_parameters(weights) << '\n'
            << "segments " << seg.segments.size() << '\n';
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path,
             const std::string& categories_path) {
  auto pin = open_in(pred_path);
  const PanopticSegmentation pred = read_lseg(pin, pred_path);
  auto gin = open_in(gt_path);
  const PanopticSegmentation gt = read_lseg(gin, gt_path);
  auto cin = open_in(categories_path);
  const CategoryTable categories = CategoryTable::read_csv(cin, categories_path);

  const MetricsResult m = evaluate(pred, gt, categories);
  std::cout << "PQ " << fmt1(100 * m.pq.pq) << "\nSQ " << fmt1(100 * m.pq.sq) << "\nRQ "
            << fmt1(100 * m.pq.rq) << "\nmIoU " << fmt1(100 * m.miou) << "\nAP " << fmt1(100 * m.ap)
            << '\n';
  for (const auto& [id, c] : m.pq.per_class) {
    std::cout << "class " << id << ' ' << categories.find(id)->name << " PQ " << fmt1(100 * c.pq)
              << " SQ " << fmt1(100 * c.sq) << " RQ " << fmt1(100 * c.rq) << " TP " << c.tp
              << " FP " << c.fp << " FN " << c.fn << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiPS reference pipeline and cost model"};
  app.require_subcommand(1);

  ModelArgs profile_model_args;
  std::string format = "md", sweep, encoder_cost = "default";
  auto* profile = app.add_subcommand("profile", "Analytic MAC and parameter report");
  add_model_args(profile, profile_model_args);
  profile->add_option("--format", format)->check(CLI::IsMember({"md", "csv"}));
  profile->add_option("--sweep", sweep)->check(CLI::IsMember({"layers", "width", "routing", "resolution"}));
  profile->add_option("--encoder-cost", encoder_cost, "default, toy, resnet50 or afformer_base")
      ->check(CLI::IsMember({"default", "toy", "resnet50", "afformer_base"}));

  ModelArgs forward_model_args;
  ForwardArgs fargs;
  uint64_t synthetic_seed = 0;
  auto* forward = app.add_subcommand("forward", "Run the pipeline with seeded weights");
  add_model_args(forward, forward_model_args);
  auto* input = forward->add_option("--input", fargs.input, "LTSR image 3 x H x W");
  auto* synth = forward->add_option("--synthetic", synthetic_seed, "Synthetic image seed");
  input->excludes(synth);
  forward->add_option("--seed", fargs.model_seed, "Weight seed, overrides the config");
  forward->add_option("--dump-dir", fargs.dump_dir);
  forward->add_option("--save-weights", fargs.save_weights);
  forward->add_option("--categories", fargs.categories, "CSV id,name,is_thing");
  forward->add_option("--object-score-threshold", fargs.object_score_threshold);
  forward->add_option("--overlap-keep-threshold", fargs.overlap_keep_threshold);
  forward->add_flag("--no-attention-masks", fargs.no_attention_masks);

  std::string pred, gt, cats;
  auto* eval = app.add_subcommand("eval", "Score a panoptic prediction");
  eval->add_option("--pred", pred)->required();
  eval->add_option("--gt", gt)->required();
  eval->add_option("--categories", cats)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*profile) return cmd_profile(profile_model_args, format, sweep, encoder_cost);
    if (*forward) {
      if (input->count() == 0 && synth->count() == 0) {
        throw InvalidInputError("forward needs --input or --synthetic");
      }
      if (synth->count()) fargs.synthetic = synthetic_seed;
      return cmd_forward(forward_model_args, fargs);
    }
    return cmd_eval(pred, gt, cats);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
