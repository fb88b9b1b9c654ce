#include "lips/model_config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace lips {

std::string_view encoder_cost_name(EncoderCost c) {
  switch (c) {
    case EncoderCost::toy: return "toy";
    case EncoderCost::resnet50: return "resnet50";
    case EncoderCost::afformer_base: return "afformer_base";
  }
  return "toy";
}

EncoderCost parse_encoder_cost(std::string_view name) {
  if (name == "toy") return EncoderCost::toy;
  if (name == "resnet50") return EncoderCost::resnet50;
  if (name == "afformer_base") return EncoderCost::afformer_base;
  throw InvalidConfigError("unknown encoder cost '" + std::string(name) +
                           "' (expected toy, resnet50 or afformer_base)");
}

void validate(const ModelConfig& cfg) {
  require_config(cfg.input_h > 0 && cfg.input_w > 0, "input extents must be positive");
  for (size_t i = 0; i < 4; ++i) {
    require_config(cfg.encoder_channels[i] > 0 &&
                       (i == 0 || cfg.encoder_channels[i] > cfg.encoder_channels[i - 1]),
                   "encoder channels must be positive and ascending");
  }
  validate(cfg.routing);
  validate(cfg.pixel_decoder);
  validate(cfg.query_decoder);
  require_config(cfg.routing.output_channels == cfg.pixel_decoder.width,
                 "routing output channels must equal the pixel decoder width");
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"mask2former_r50_like", "lips_full", "lips_3",
                                                 "lips_2", "lips_1"};
  return names;
}

ModelConfig preset_config(std::string_view name) {
  ModelConfig cfg;
  cfg.preset = std::string(name);
  if (name == "mask2former_r50_like") {
    cfg.encoder_channels = {256, 512, 1024, 2048};
    cfg.encoder_cost = EncoderCost::resnet50;
    // Plain 1x1 input projections on the three coarser backbone levels.
    cfg.routing.selected_levels = {2, 3, 4};
    cfg.routing.compression_strides = {1, 1, 1, 1};
    cfg.routing.kernel = 1;
    cfg.routing.output_channels = 256;
    cfg.pixel_decoder.depth = 6;
    cfg.pixel_decoder.width = 256;
    cfg.pixel_decoder.ffn_dim = 1024;
    cfg.pixel_decoder.stride4_mask_features = true;
    return cfg;
  }
  std::vector<int> levels;
  if (name == "lips_full") {
    levels = {1, 2, 3, 4};
  } else if (name == "lips_3") {
    levels = {1, 2, 3};
  } else if (name == "lips_2") {
    levels = {1, 2};
  } else if (name == "lips_1") {
    levels = {1};
  } else {
    throw InvalidConfigError("unknown preset '" + std::string(name) + "'");
  }
  cfg.encoder_cost = EncoderCost::afformer_base;
  cfg.routing.selected_levels = levels;
  return cfg;
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<int64_t> parse_int_list(const std::string& v) {
  std::vector<int64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    size_t used = 0;
    const long long x = std::stoll(item, &used);
    if (used != item.size()) throw std::invalid_argument(item);
    out.push_back(x);
  }
  if (out.empty()) throw std::invalid_argument(v);
  return out;
}

int64_t parse_int(const std::string& v) {
  size_t used = 0;
  const long long x = std::stoll(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return x;
}

double parse_double(const std::string& v) {
  size_t used = 0;
  const double x = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return x;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(v);
}

using Setter = std::function<void(ModelConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"input.height", [](ModelConfig& c, const std::string& v) { c.input_h = parse_int(v); }},
      {"input.width", [](ModelConfig& c, const std::string& v) { c.input_w = parse_int(v); }},
      {"encoder.channels",
       [](ModelConfig& c, const std::string& v) {
         const auto xs = parse_int_list(v);
         if (xs.size() != 4) throw std::invalid_argument("need 4 channels");
         for (size_t i = 0; i < 4; ++i) c.encoder_channels[i] = xs[i];
       }},
      {"encoder.seed",
       [](ModelConfig& c, const std::string& v) { c.seed = static_cast<uint64_t>(parse_int(v)); }},
      {"encoder.cost",
       [](ModelConfig& c, const std::string& v) { c.encoder_cost = parse_encoder_cost(v); }},
      {"routing.levels",
       [](ModelConfig& c, const std::string& v) {
         c.routing.selected_levels.clear();
         for (int64_t x : parse_int_list(v)) c.routing.selected_levels.push_back(static_cast<int>(x));
       }},
      {"routing.compression_strides",
       [](ModelConfig& c, const std::string& v) {
         const auto xs = parse_int_list(v);
         if (xs.size() != 4) throw std::invalid_argument("need 4 strides");
         for (size_t i = 0; i < 4; ++i) c.routing.compression_strides[i] = static_cast<int>(xs[i]);
       }},
      {"routing.kernel",
       [](ModelConfig& c, const std::string& v) { c.routing.kernel = static_cast<int>(parse_int(v)); }},
      {"routing.output_channels",
       [](ModelConfig& c, const std::string& v) { c.routing.output_channels = parse_int(v); }},
      {"pixel_decoder.depth",
       [](ModelConfig& c, const std::string& v) {
         c.pixel_decoder.depth = static_cast<int>(parse_int(v));
       }},
      {"pixel_decoder.width",
       [](ModelConfig& c, const std::string& v) { c.pixel_decoder.width = parse_int(v); }},
      {"pixel_decoder.heads",
       [](ModelConfig& c, const std::string& v) {
         c.pixel_decoder.heads = static_cast<int>(parse_int(v));
       }},
      {"pixel_decoder.points",
       [](ModelConfig& c, const std::string& v) {
         c.pixel_decoder.points = static_cast<int>(parse_int(v));
       }},
      {"pixel_decoder.ffn_dim",
       [](ModelConfig& c, const std::string& v) { c.pixel_decoder.ffn_dim = parse_int(v); }},
      {"pixel_decoder.stride4_mask_features",
       [](ModelConfig& c, const std::string& v) {
         c.pixel_decoder.stride4_mask_features = parse_bool(v);
       }},
      {"query_decoder.num_queries",
       [](ModelConfig& c, const std::string& v) {
         c.query_decoder.num_queries = static_cast<int>(parse_int(v));
       }},
      {"query_decoder.num_layers",
       [](ModelConfig& c, const std::string& v) {
         c.query_decoder.num_layers = static_cast<int>(parse_int(v));
       }},
      {"query_decoder.hidden_dim",
       [](ModelConfig& c, const std::string& v) { c.query_decoder.hidden_dim = parse_int(v); }},
      {"query_decoder.heads",
       [](ModelConfig& c, const std::string& v) {
         c.query_decoder.heads = static_cast<int>(parse_int(v));
       }},
      {"query_decoder.ffn_dim",
       [](ModelConfig& c, const std::string& v) { c.query_decoder.ffn_dim = parse_int(v); }},
      {"query_decoder.num_classes",
       [](ModelConfig& c, const std::string& v) {
         c.query_decoder.num_classes = static_cast<int>(parse_int(v));
       }},
      {"query_decoder.mask_threshold",
       [](ModelConfig& c, const std::string& v) {
         c.query_decoder.mask_threshold = static_cast<float>(parse_double(v));
       }},
  };
  return table;
}

[[noreturn]] void config_error(const std::string& source, int line, const std::string& msg) {
  throw InvalidConfigError(source + ":" + std::to_string(line) + ": " + msg);
}

std::string join(const std::vector<int64_t>& xs) {
  std::string out;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

}  // namespace

ModelConfig parse_config(std::istream& in, const std::string& source) {
  struct Entry {
    int line;
    std::string key;
    std::string value;
  };
  std::vector<Entry> entries;
  std::string preset;
  std::string section;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') config_error(source, line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) config_error(source, line_no, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) config_error(source, line_no, "empty key or value");
    if (section.empty() && key == "preset") {
      preset = value;
      continue;
    }
    const std::string full = section.empty() ? key : section + "." + key;
    if (!setters().count(full)) config_error(source, line_no, "unknown key '" + full + "'");
    entries.push_back({line_no, full, value});
  }

  ModelConfig cfg;
  if (!preset.empty()) {
    try {
      cfg = preset_config(preset);
    } catch (const InvalidConfigError& e) {
      config_error(source, 1, e.what());
    }
  }
  for (const Entry& e : entries) {
    try {
      setters().at(e.key)(cfg, e.value);
    } catch (const InvalidConfigError& err) {
      config_error(source, e.line, err.what());
    } catch (const std::exception&) {
      config_error(source, e.line, "invalid value '" + e.value + "' for " + e.key);
    }
  }
  if (!preset.empty() && !entries.empty()) cfg.preset = preset + "+overrides";
  validate(cfg);
  return cfg;
}

ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfigError("cannot read config file " + path);
  return parse_config(in, path);
}

void write_config(std::ostream& out, const ModelConfig& cfg) {
  const auto& r = cfg.routing;
  const auto& p = cfg.pixel_decoder;
  const auto& q = cfg.query_decoder;
  std::vector<int64_t> levels(r.selected_levels.begin(), r.selected_levels.end());
  std::vector<int64_t> strides(r.compression_strides.begin(), r.compression_strides.end());
  std::vector<int64_t> channels(cfg.encoder_channels.begin(), cfg.encoder_channels.end());
  out << "[input]\nheight = " << cfg.input_h << "\nwidth = " << cfg.input_w << "\n\n"
      << "[encoder]\nchannels = " << join(channels) << "\nseed = " << cfg.seed
      << "\ncost = " << encoder_cost_name(cfg.encoder_cost) << "\n\n"
      << "[routing]\nlevels = " << join(levels) << "\ncompression_strides = " << join(strides)
      << "\nkernel = " << r.kernel << "\noutput_channels = " << r.output_channels << "\n\n"
      << "[pixel_decoder]\ndepth = " << p.depth << "\nwidth = " << p.width
      << "\nheads = " << p.heads << "\npoints = " << p.points << "\nffn_dim = " << p.ffn_dim
      << "\nstride4_mask_features = " << (p.stride4_mask_features ? "true" : "false") << "\n\n"
      << "[query_decoder]\nnum_queries = " << q.num_queries << "\nnum_layers = " << q.num_layers
      << "\nhidden_dim = " << q.hidden_dim << "\nheads = " << q.heads
      << "\nffn_dim = " << q.ffn_dim << "\nnum_classes = " << q.num_classes
      << "\nmask_threshold = " << q.mask_threshold << "\n";
}

}  // namespace lips
