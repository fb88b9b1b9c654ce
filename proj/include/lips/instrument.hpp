#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace lips {

/// Pipeline stages used for both instrumented counters and the analytic
/// cost model.
enum class Stage : int { encoder = 0, routing, pixel_decoder, query_decoder, head };

inline constexpr int kNumStages = 5;
inline constexpr std::array<Stage, kNumStages> kAllStages = {
    Stage::encoder, Stage::routing, Stage::pixel_decoder, Stage::query_decoder, Stage::head};

std::string_view stage_name(Stage stage);

/// Multiply-accumulate totals per stage plus per-operation call counts,
/// filled by the reference kernels while a CounterScope is active.
struct MacCounters {
  std::array<int64_t, kNumStages> macs{};
  std::map<std::string, int64_t, std::less<>> calls;

  int64_t stage_macs(Stage s) const { return macs[static_cast<int>(s)]; }
  int64_t total() const;
  int64_t call_count(std::string_view op) const;
};

/// Installs `sink` as the calling thread's active counter set. Nested
/// scopes restore the previous sink on destruction.
class CounterScope {
 public:
  explicit CounterScope(MacCounters& sink);
  ~CounterScope();
  CounterScope(const CounterScope&) = delete;
  CounterScope& operator=(const CounterScope&) = delete;

 private:
  MacCounters* previous_;
};

/// Attributes kernel work on this thread to `stage` until destruction.
class StageScope {
 public:
  explicit StageScope(Stage stage);
  ~StageScope();
  StageScope(const StageScope&) = delete;
  StageScope& operator=(const StageScope&) = delete;

 private:
  Stage previous_;
  bool had_stage_;
};

namespace instrument {

// No-ops unless both a CounterScope and a StageScope are active.
void add_macs(int64_t n);
void add_call(std::string_view op);

}  // namespace instrument
}  // namespace lips
