#include "lips/instrument.hpp"

namespace lips {
namespace {

thread_local MacCounters* t_sink = nullptr;
thread_local Stage t_stage = Stage::encoder;
thread_local bool t_has_stage = false;

}  // namespace

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::encoder: return "encoder";
    case Stage::routing: return "routing";
    case Stage::pixel_decoder: return "pixel_decoder";
    case Stage::query_decoder: return "query_decoder";
    case Stage::head: return "head";
  }
  return "unknown";
}

int64_t MacCounters::total() const {
  int64_t t = 0;
  for (int64_t m : macs) t += m;
  return t;
}

int64_t MacCounters::call_count(std::string_view op) const {
  auto it = calls.find(op);
  return it == calls.end() ? 0 : it->second;
}

CounterScope::CounterScope(MacCounters& sink) : previous_(t_sink) { t_sink = &sink; }
CounterScope::~CounterScope() { t_sink = previous_; }

StageScope::StageScope(Stage stage) : previous_(t_stage), had_stage_(t_has_stage) {
  t_stage = stage;
  t_has_stage = true;
}

StageScope::~StageScope() {
  t_stage = previous_;
  t_has_stage = had_stage_;
}

namespace instrument {

void add_macs(int64_t n) {
  if (t_sink && t_has_stage) t_sink->macs[static_cast<int>(t_stage)] += n;
}

void add_call(std::string_view op) {
  if (!t_sink) return;
  auto it = t_sink->calls.find(op);
  if (it == t_sink->calls.end()) {
    t_sink->calls.emplace(std::string(op), 1);
  } else {
    ++it->second;
  }
}

}  // namespace instrument
}  // namespace lips
