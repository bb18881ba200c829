#pragma once

// Run configuration: one JSON file fully determines a run. The master seed
// is required; no command reads the wall clock for decisions.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "pug/curriculum.hpp"
#include "pug/gnn.hpp"
#include "pug/rl.hpp"

namespace pug::config {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir;
  std::optional<std::string> tasks_file;
  rl::PpoConfig ppo;
  gnn::GnnConfig gnn;
  curriculum::CurriculumConfig curriculum;
};

RunConfig load_config(const std::string& path);
RunConfig config_from_json(const std::string& text);
std::string config_to_json(const RunConfig& cfg);

std::vector<env::Task> load_tasks(const RunConfig& cfg);

}  // namespace pug::config
