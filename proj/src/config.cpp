#include "pug/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace pug::config {

namespace fs = std::filesystem;
using json = nlohmann::json;

template <typename T>
static void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

RunConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad json: ") + e.what());
  }
  RunConfig cfg;
  try {
    if (!j.contains("seed")) {
      throw ConfigError("config: 'seed' is required for reproducibility");
    }
    cfg.seed = j.at("seed").get<std::uint64_t>();
    maybe(j, "out_dir", cfg.out_dir);
    if (j.contains("tasks_file") && !j.at("tasks_file").is_null()) {
      cfg.tasks_file = j.at("tasks_file").get<std::string>();
    }
    if (j.contains("ppo")) {
      const json& p = j.at("ppo");
      maybe(p, "clip_ratio", cfg.ppo.clip_ratio);
      maybe(p, "epochs", cfg.ppo.epochs);
      maybe(p, "minibatch", cfg.ppo.minibatch);
      maybe(p, "gamma", cfg.ppo.gamma);
      maybe(p, "gae_lambda", cfg.ppo.gae_lambda);
      maybe(p, "entropy_coef", cfg.ppo.entropy_coef);
      maybe(p, "value_coef", cfg.ppo.value_coef);
      maybe(p, "rollout_steps", cfg.ppo.rollout_steps);
      maybe(p, "lr", cfg.ppo.lr);
    }
    if (j.contains("gnn")) {
      const json& g = j.at("gnn");
      maybe(g, "layers", cfg.gnn.layers);
      maybe(g, "hidden", cfg.gnn.hidden);
      maybe(g, "lr", cfg.gnn.lr);
      maybe(g, "predictor_epochs", cfg.gnn.predictor_epochs);
      maybe(g, "explainer_epochs", cfg.gnn.explainer_epochs);
      maybe(g, "explainer_lr", cfg.gnn.explainer_lr);
      maybe(g, "edge_cap", cfg.gnn.edge_cap);
      maybe(g, "preservation_coef", cfg.gnn.preservation_coef);
      maybe(g, "sparsity_coef", cfg.gnn.sparsity_coef);
      maybe(g, "entropy_coef", cfg.gnn.entropy_coef);
      maybe(g, "activation_coef", cfg.gnn.activation_coef);
    }
    if (j.contains("curriculum")) {
      const json& c = j.at("curriculum");
      maybe(c, "eps_start", cfg.curriculum.eps_start);
      maybe(c, "eps_end", cfg.curriculum.eps_end);
      maybe(c, "warmup_iterations", cfg.curriculum.warmup_iterations);
      maybe(c, "sequence_len", cfg.curriculum.sequence_len);
      maybe(c, "softmax_temp", cfg.curriculum.softmax_temp);
      maybe(c, "iterations", cfg.curriculum.iterations);
      maybe(c, "eval_episodes", cfg.curriculum.eval_episodes);
      maybe(c, "retrain_cadence", cfg.curriculum.retrain_cadence);
      maybe(c, "min_dataset", cfg.curriculum.min_dataset);
      maybe(c, "graph_edge_cap", cfg.curriculum.graph_edge_cap);
      maybe(c, "highlight_k", cfg.curriculum.highlight_k);
      maybe(c, "explanation_k_m", cfg.curriculum.explanation_k_m);
      maybe(c, "scheduler_enabled", cfg.curriculum.scheduler_enabled);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (cfg.curriculum.eps_start < 0.0 || cfg.curriculum.eps_start > 1.0 ||
      cfg.curriculum.eps_end < 0.0 || cfg.curriculum.eps_end > 1.0) {
    throw ConfigError("config: epsilon must stay in [0, 1]");
  }
  if (cfg.curriculum.sequence_len < 1) {
    throw ConfigError("config: sequence_len must be >= 1");
  }
  if (cfg.ppo.clip_ratio <= 0.0 || cfg.ppo.clip_ratio >= 1.0) {
    throw ConfigError("config: clip_ratio must lie in (0, 1)");
  }
  if (cfg.ppo.gamma < 0.0 || cfg.ppo.gamma > 1.0 || cfg.ppo.gae_lambda < 0.0 ||
      cfg.ppo.gae_lambda > 1.0) {
    throw ConfigError("config: gamma and gae_lambda must lie in [0, 1]");
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  RunConfig cfg = config_from_json(ss.str());
  if (cfg.tasks_file && !fs::exists(*cfg.tasks_file)) {
    throw ConfigError("config: tasks_file does not exist: " + *cfg.tasks_file);
  }
  return cfg;
}

std::string config_to_json(const RunConfig& cfg) {
  json j{
      {"seed", cfg.seed},
      {"out_dir", cfg.out_dir},
      {"tasks_file", cfg.tasks_file ? json(*cfg.tasks_file) : json(nullptr)},
      {"ppo",
       {{"clip_ratio", cfg.ppo.clip_ratio},
        {"epochs", cfg.ppo.epochs},
        {"minibatch", cfg.ppo.minibatch},
        {"gamma", cfg.ppo.gamma},
        {"gae_lambda", cfg.ppo.gae_lambda},
        {"entropy_coef", cfg.ppo.entropy_coef},
        {"value_coef", cfg.ppo.value_coef},
        {"rollout_steps", cfg.ppo.rollout_steps},
        {"lr", cfg.ppo.lr}}},
      {"gnn",
       {{"layers", cfg.gnn.layers},
        {"hidden", cfg.gnn.hidden},
        {"lr", cfg.gnn.lr},
        {"predictor_epochs", cfg.gnn.predictor_epochs},
        {"explainer_epochs", cfg.gnn.explainer_epochs},
        {"explainer_lr", cfg.gnn.explainer_lr},
        {"edge_cap", cfg.gnn.edge_cap},
        {"preservation_coef", cfg.gnn.preservation_coef},
        {"sparsity_coef", cfg.gnn.sparsity_coef},
        {"entropy_coef", cfg.gnn.entropy_coef},
        {"activation_coef", cfg.gnn.activation_coef}}},
      {"curriculum",
       {{"eps_start", cfg.curriculum.eps_start},
        {"eps_end", cfg.curriculum.eps_end},
        {"warmup_iterations", cfg.curriculum.warmup_iterations},
        {"sequence_len", cfg.curriculum.sequence_len},
        {"softmax_temp", cfg.curriculum.softmax_temp},
        {"iterations", cfg.curriculum.iterations},
        {"eval_episodes", cfg.curriculum.eval_episodes},
        {"retrain_cadence", cfg.curriculum.retrain_cadence},
        {"min_dataset", cfg.curriculum.min_dataset},
        {"graph_edge_cap", cfg.curriculum.graph_edge_cap},
        {"highlight_k", cfg.curriculum.highlight_k},
        {"explanation_k_m", cfg.curriculum.explanation_k_m},
        {"scheduler_enabled", cfg.curriculum.scheduler_enabled}}}};
  return j.dump(2);
}

std::vector<env::Task> load_tasks(const RunConfig& cfg) {
  if (!cfg.tasks_file) return env::task_library();
  std::ifstream in(*cfg.tasks_file);
  if (!in) throw ConfigError("config: cannot open tasks_file " +
                             *cfg.tasks_file);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return env::library_from_json(ss.str());
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: bad tasks_file: ") + e.what());
  }
}

}  // namespace pug::config
