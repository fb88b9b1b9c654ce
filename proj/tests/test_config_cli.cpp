#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "lips/model_config.hpp"

namespace fs = std::filesystem;
using namespace lips;

namespace {

struct RunResult {
  int status = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(LIPS_CLI) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("lips_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string config_text(const ModelConfig& cfg) {
  std::ostringstream out;
  write_config(out, cfg);
  return out.str();
}

}  // namespace

TEST(Config, PresetWithOverrides) {
  std::istringstream in(
      "preset = lips_2\n"
      "# comment\n"
      "[input]\nheight = 128\nwidth = 256\n"
      "[routing]\nlevels = 1, 2, 3\n"
      "[query_decoder]\nnum_queries = 50\n");
  const ModelConfig cfg = parse_config(in);
  EXPECT_EQ(cfg.input_h, 128);
  EXPECT_EQ(cfg.input_w, 256);
  EXPECT_EQ(cfg.routing.selected_levels, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(cfg.query_decoder.num_queries, 50);
  EXPECT_EQ(cfg.encoder_cost, EncoderCost::afformer_base);
  EXPECT_EQ(cfg.preset, "lips_2+overrides");
}

TEST(Config, ErrorsCarryLineNumbers) {
  auto error_of = [](const std::string& text) {
    std::istringstream in(text);
    try {
      parse_config(in, "m.cfg");
    } catch (const InvalidConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_EQ(error_of("[input]\nheight = abc\n").rfind("m.cfg:2:", 0), 0u);
  EXPECT_EQ(error_of("[input]\nbogus = 1\n").rfind("m.cfg:2:", 0), 0u);
  EXPECT_EQ(error_of("preset = nope\n").rfind("m.cfg:1:", 0), 0u);
  EXPECT_EQ(error_of("[input\n").rfind("m.cfg:1:", 0), 0u);
  EXPECT_THROW(preset_config("nope"), InvalidConfigError);
}

TEST(Config, RoundTripsEveryPreset) {
  for (const auto& name : preset_names()) {
    const ModelConfig cfg = preset_config(name);
    std::istringstream in(config_text(cfg));
    const ModelConfig back = parse_config(in);
    EXPECT_EQ(config_text(back), config_text(cfg)) << name;
  }
}

TEST(Config, ValidationRejectsMismatchedWidths) {
  ModelConfig cfg = preset_config("lips_2");
  cfg.routing.output_channels = 64;
  EXPECT_THROW(validate(cfg), InvalidConfigError);
}

TEST(Cli, ProfileFormats) {
  const RunResult md = run_cli("profile --preset lips_2");
  ASSERT_EQ(md.status, 0) << md.output;
  EXPECT_NE(md.output.find("pixel_decoder"), std::string::npos);
  const RunResult csv = run_cli("profile --preset lips_2 --format csv");
  ASSERT_EQ(csv.status, 0);
  EXPECT_EQ(csv.output.rfind("config,stage,macs,params,share_pct", 0), 0u);
  const RunResult sweep = run_cli("profile --preset mask2former_r50_like --sweep layers");
  ASSERT_EQ(sweep.status, 0);
  EXPECT_NE(sweep.output.find("marginal GMACs per layer:"), std::string::npos);
  EXPECT_NE(run_cli("profile --preset nope").status, 0);
}

TEST(Cli, ForwardIsDeterministic) {
  const fs::path a = scratch("fwd_a"), b = scratch("fwd_b");
  const std::string base = "forward --preset lips_1 --resolution 64 --synthetic 5 --dump-dir ";
  const RunResult ra = run_cli(base + a.string());
  const RunResult rb = run_cli(base + b.string());
  ASSERT_EQ(ra.status, 0) << ra.output;
  EXPECT_EQ(ra.output, rb.output);
  for (const char* f : {"class_logits.ltsr", "mask_logits.ltsr", "mask_features_8.ltsr",
                        "mask_features_16.ltsr", "mask_features_32.ltsr", "panoptic.lseg"}) {
    EXPECT_FALSE(slurp(a / f).empty()) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_NE(ra.output.find("macs total "), std::string::npos);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, ForwardRejectsBadInput) {
  const RunResult r = run_cli("forward --preset lips_1 --resolution 48 --synthetic 1");
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.output.find("error:"), std::string::npos);
}

TEST(Cli, EvalWorkedExample) {
  const fs::path dir = scratch("eval");
  std::ofstream(dir / "gt.lseg") << "4 5\n2\n1 1 1\n2 1 1\n"
                                    "1 1 1 1 1\n1 1 1 1 1\n2 2 2 2 2\n0 0 0 0 0\n";
  std::ofstream(dir / "pred.lseg") << "4 5\n2\n1 1 1\n2 1 1\n"
                                      "1 1 1 1 1\n1 2 2 2 2\n0 0 0 0 0\n0 0 0 0 0\n";
  std::ofstream(dir / "cats.csv") << "id,name,is_thing\n1,thing,1\n";
  const std::string files = " --categories " + (dir / "cats.csv").string();
  const RunResult r = run_cli("eval --pred " + (dir / "pred.lseg").string() + " --gt " +
                              (dir / "gt.lseg").string() + files);
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_EQ(r.output.rfind("PQ 30.0\n", 0), 0u) << r.output;

  std::ofstream(dir / "bad.lseg") << "4 five\n";
  const RunResult bad = run_cli("eval --pred " + (dir / "bad.lseg").string() + " --gt " +
                                (dir / "gt.lseg").string() + files);
  EXPECT_EQ(bad.status, 1);
  EXPECT_NE(bad.output.find("bad.lseg:1:"), std::string::npos) << bad.output;
  fs::remove_all(dir);
}
