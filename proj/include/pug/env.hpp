#pragma once

// Seedable deterministic 7x7 gridworld with verb-typed sub-tasks.
// Actions: 0 up, 1 down, 2 left, 3 right, 4 interact, 5 no-op.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pug::env {

inline constexpr int kGridSize = 7;
inline constexpr int kNumActions = 6;
inline constexpr int kActionInteract = 4;
inline constexpr int kActionNoop = 5;
inline constexpr double kStepPenalty = -0.01;
inline constexpr double kSuccessReward = 1.0;

enum class Verb { Goto, Pick, Put, Open, Toggle, Examine };
inline constexpr int kNumVerbs = 6;

std::string verb_name(Verb v);
Verb verb_from_name(const std::string& name);

struct Task {
  std::string id;
  Verb verb = Verb::Goto;
  int goal_row = 0;
  int goal_col = 0;
  int horizon = 50;
};

struct GridState {
  int agent_row = 0;
  int agent_col = 0;
  int obj_row = 0;
  int obj_col = 0;
  bool held = false;
  bool open = false;
  bool toggled = false;
  bool examined = false;
  int steps = 0;
  bool done = false;
};

// Fixed-length feature vector, every entry in [-1, 1]:
// [agent r, agent c, goal r, goal c, dr, dc, held, open, toggled, examined,
//  verb one-hot x6]
inline constexpr std::size_t kObsDim = 16;
using Observation = std::vector<double>;

struct StepResult {
  GridState state;
  Observation obs;
  double reward = 0.0;
  bool done = false;
  bool success = false;
};

struct CompositeTask {
  std::string id;
  std::vector<Task> subtasks;
};

// Deterministic library: 3 tasks per verb, 18 total.
std::vector<Task> task_library();

// One sub-task per verb, the default end-to-end benchmark.
CompositeTask default_composite();

std::pair<GridState, Observation> reset(const Task& task, std::uint64_t seed);
StepResult step(const Task& task, const GridState& state, int action);

Observation observe(const Task& task, const GridState& state);
bool success_predicate(const Task& task, const GridState& state);

// Scripted per-verb expert; the oracle for env solvability.
int expert_action(const Task& task, const GridState& state);

std::string library_to_json(const std::vector<Task>& tasks);
std::vector<Task> library_from_json(const std::string& text);

}  // namespace pug::env
