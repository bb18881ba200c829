#include "pug/env.hpp"

#include <cmath>
#include <cstdlib>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "pug/nn.hpp"

namespace pug::env {

using json = nlohmann::json;

std::string verb_name(Verb v) {
  switch (v) {
    case Verb::Goto: return "goto";
    case Verb::Pick: return "pick";
    case Verb::Put: return "put";
    case Verb::Open: return "open";
    case Verb::Toggle: return "toggle";
    case Verb::Examine: return "examine";
  }
  throw std::logic_error("unknown verb");
}

Verb verb_from_name(const std::string& name) {
  if (name == "goto") return Verb::Goto;
  if (name == "pick") return Verb::Pick;
  if (name == "put") return Verb::Put;
  if (name == "open") return Verb::Open;
  if (name == "toggle") return Verb::Toggle;
  if (name == "examine") return Verb::Examine;
  throw std::invalid_argument("unknown verb: " + name);
}

std::vector<Task> task_library() {
  const std::vector<Verb> verbs = {Verb::Goto,  Verb::Pick,   Verb::Put,
                                   Verb::Open,  Verb::Toggle, Verb::Examine};
  const int goals[3][2] = {{1, 1}, {3, 5}, {6, 2}};
  std::vector<Task> tasks;
  for (Verb v : verbs) {
    for (int k = 0; k < 3; ++k) {
      Task t;
      t.id = verb_name(v) + "-" + std::to_string(k);
      t.verb = v;
      t.goal_row = goals[k][0];
      t.goal_col = goals[k][1];
      t.horizon = 50;
      tasks.push_back(t);
    }
  }
  return tasks;
}

CompositeTask default_composite() {
  CompositeTask c;
  c.id = "composite-default";
  for (const Task& t : task_library()) {
    if (t.id.ends_with("-0")) c.subtasks.push_back(t);
  }
  return c;
}

static double norm_pos(int x) {
  return 2.0 * static_cast<double>(x) / (kGridSize - 1) - 1.0;
}

Observation observe(const Task& task, const GridState& s) {
  Observation o(kObsDim, 0.0);
  o[0] = norm_pos(s.agent_row);
  o[1] = norm_pos(s.agent_col);
  o[2] = norm_pos(task.goal_row);
  o[3] = norm_pos(task.goal_col);
  o[4] = static_cast<double>(task.goal_row - s.agent_row) / (kGridSize - 1);
  o[5] = static_cast<double>(task.goal_col - s.agent_col) / (kGridSize - 1);
  o[6] = s.held ? 1.0 : 0.0;
  o[7] = s.open ? 1.0 : 0.0;
  o[8] = s.toggled ? 1.0 : 0.0;
  o[9] = s.examined ? 1.0 : 0.0;
  o[10 + static_cast<int>(task.verb)] = 1.0;
  return o;
}

bool success_predicate(const Task& task, const GridState& s) {
  switch (task.verb) {
    case Verb::Goto:
      return s.agent_row == task.goal_row && s.agent_col == task.goal_col;
    case Verb::Pick:
      return s.held;
    case Verb::Put:
      return !s.held && s.obj_row == task.goal_row && s.obj_col == task.goal_col;
    case Verb::Open:
      return s.open;
    case Verb::Toggle:
      return s.toggled;
    case Verb::Examine:
      return s.examined;
  }
  return false;
}

std::pair<GridState, Observation> reset(const Task& task, std::uint64_t seed) {
  std::mt19937_64 rng(nn::stream_seed(seed, "reset:" + task.id));
  GridState s;
  // Spawn uniformly over every cell except the goal cell.
  std::uniform_int_distribution<int> cell(0, kGridSize * kGridSize - 2);
  int idx = cell(rng);
  const int goal_idx = task.goal_row * kGridSize + task.goal_col;
  if (idx >= goal_idx) ++idx;
  s.agent_row = idx / kGridSize;
  s.agent_col = idx % kGridSize;
  if (task.verb == Verb::Put) {
    // The object starts in hand; the goal cell is the drop target.
    s.held = true;
    s.obj_row = s.agent_row;
    s.obj_col = s.agent_col;
  } else {
    s.obj_row = task.goal_row;
    s.obj_col = task.goal_col;
  }
  return {s, observe(task, s)};
}

StepResult step(const Task& task, const GridState& state, int action) {
  if (state.done) {
    throw std::logic_error("step: episode already done for task " + task.id);
  }
  if (action < 0 || action >= kNumActions) {
    throw std::invalid_argument("step: action out of range");
  }
  GridState s = state;
  switch (action) {
    case 0: s.agent_row = std::max(0, s.agent_row - 1); break;
    case 1: s.agent_row = std::min(kGridSize - 1, s.agent_row + 1); break;
    case 2: s.agent_col = std::max(0, s.agent_col - 1); break;
    case 3: s.agent_col = std::min(kGridSize - 1, s.agent_col + 1); break;
    default: break;
  }
  if (s.held) {
    s.obj_row = s.agent_row;
    s.obj_col = s.agent_col;
  }
  if (action == kActionInteract) {
    const int dist = std::abs(s.agent_row - s.obj_row) +
                     std::abs(s.agent_col - s.obj_col);
    switch (task.verb) {
      case Verb::Goto:
        break;
      case Verb::Pick:
        if (dist == 0 && !s.held) s.held = true;
        break;
      case Verb::Put:
        if (s.held && s.agent_row == task.goal_row &&
            s.agent_col == task.goal_col) {
          s.held = false;
        }
        break;
      case Verb::Open:
        if (dist == 0) s.open = true;
        break;
      case Verb::Toggle:
        if (dist == 0) s.toggled = true;
        break;
      case Verb::Examine:
        if (dist == 1) s.examined = true;
        break;
    }
  }
  s.steps += 1;
  const bool success = success_predicate(task, s);
  s.done = success || s.steps >= task.horizon;
  StepResult r;
  r.reward = kStepPenalty + (success ? kSuccessReward : 0.0);
  r.done = s.done;
  r.success = success;
  r.obs = observe(task, s);
  r.state = std::move(s);
  return r;
}

int expert_action(const Task& task, const GridState& s) {
  int tr = task.goal_row;
  int tc = task.goal_col;
  if (task.verb == Verb::Pick || task.verb == Verb::Open ||
      task.verb == Verb::Toggle || task.verb == Verb::Examine) {
    tr = s.obj_row;
    tc = s.obj_col;
  }
  const int dr = tr - s.agent_row;
  const int dc = tc - s.agent_col;
  const int dist = std::abs(dr) + std::abs(dc);
  if (task.verb == Verb::Examine) {
    if (dist == 1) return kActionInteract;
    if (dist == 0) return s.agent_row > 0 ? 0 : 1;  // step off the object
  } else if (dist == 0) {
    return task.verb == Verb::Goto ? kActionNoop : kActionInteract;
  }
  if (dr < 0) return 0;
  if (dr > 0) return 1;
  if (dc < 0) return 2;
  return 3;
}

std::string library_to_json(const std::vector<Task>& tasks) {
  json arr = json::array();
  for (const Task& t : tasks) {
    arr.push_back({{"id", t.id},
                   {"verb", verb_name(t.verb)},
                   {"goal", {t.goal_row, t.goal_col}},
                   {"horizon", t.horizon}});
  }
  return json{{"tasks", arr}}.dump(2);
}

std::vector<Task> library_from_json(const std::string& text) {
  json j = json::parse(text);
  std::vector<Task> tasks;
  for (const auto& e : j.at("tasks")) {
    Task t;
    t.id = e.at("id").get<std::string>();
    t.verb = verb_from_name(e.at("verb").get<std::string>());
    t.goal_row = e.at("goal").at(0).get<int>();
    t.goal_col = e.at("goal").at(1).get<int>();
    t.horizon = e.at("horizon").get<int>();
    if (t.horizon < 1) throw std::invalid_argument("task horizon must be >= 1");
    if (t.goal_row < 0 || t.goal_row >= kGridSize || t.goal_col < 0 ||
        t.goal_col >= kGridSize) {
      throw std::invalid_argument("task goal outside grid: " + t.id);
    }
    tasks.push_back(t);
  }
  return tasks;
}

}  // namespace pug::env
