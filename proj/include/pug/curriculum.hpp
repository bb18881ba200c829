#pragma once

// Orchestration of the explain-and-schedule training loop: epsilon-greedy
// sequence sampling driven by predicted progress, the
// train -> evaluate -> graph -> dataset cycle, periodic GNN retraining, and
// the paired curriculum comparison experiment.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pug/env.hpp"
#include "pug/gnn.hpp"
#include "pug/nn.hpp"
#include "pug/policy_graph.hpp"
#include "pug/rl.hpp"

namespace pug::curriculum {

struct CurriculumConfig {
  double eps_start = 1.0;
  // Epsilon keeps a sizeable floor and the softmax stays warm so the
  // scheduler tilts toward high-progress tasks without starving the rest:
  // a task whose progress estimate sits at zero (stuck or mastered) still
  // gets close to its uniform share of training slots.
  double eps_end = 0.35;
  int warmup_iterations = 20;  // linear anneal window for epsilon
  int sequence_len = 6;
  double softmax_temp = 0.3;
  int iterations = 40;
  int eval_episodes = 10;
  int retrain_cadence = 2;       // GNN retraining period, in iterations
  std::size_t min_dataset = 16;  // no retraining below this size
  std::size_t graph_edge_cap = 2048;
  std::size_t highlight_k = 8;
  std::size_t explanation_k_m = 8;
  bool scheduler_enabled = true;  // false pins epsilon to 1 (random arm)
};

struct TaskProgress {
  double p_hat = 0.0;   // initialized to zero for every task
  double p_true = 0.0;
  double last_eval = 0.0;
  bool evaluated = false;
  std::int64_t last_iteration = -1;
  std::optional<std::size_t> last_dataset_index;
};

struct ProgressTable {
  std::map<std::string, TaskProgress> rows;
};

struct TaskRecord {
  std::string task_id;
  double r_prev = 0.0;
  double r_now = 0.0;
  double p = 0.0;
  double p_hat = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double overlap = 0.0;
  std::string graph_file;
};

struct RunRecord {
  std::int64_t iteration = 0;
  double epsilon = 0.0;
  std::vector<TaskRecord> tasks;
  std::int64_t env_steps_total = 0;
  double wall_clock_s = 0.0;
};

double epsilon_at(const CurriculumConfig& cfg, std::int64_t iteration);

// One coin flip per sequence: uniform draws with probability epsilon,
// otherwise softmax(p_hat / temp) draws, all with replacement.
std::vector<std::size_t> sample_sequence(const ProgressTable& table,
                                         const std::vector<env::Task>& tasks,
                                         double epsilon, int length,
                                         double temp, std::mt19937_64& rng);

// Verb histogram per training phase; rows sum to the samples in that phase.
std::vector<std::vector<std::size_t>> verb_distribution(
    const std::vector<RunRecord>& records, const std::vector<env::Task>& tasks,
    int phase_bins);

struct Runner {
  std::uint64_t master_seed = 0;
  std::vector<env::Task> tasks;
  env::CompositeTask composite;
  rl::PpoConfig ppo;
  gnn::GnnConfig gnn_cfg;
  CurriculumConfig cur;

  nn::Mlp actor;
  nn::Mlp critic;
  nn::AdamState actor_opt;
  nn::AdamState critic_opt;
  gnn::GnnModel predictor;
  gnn::Explainer explainer;
  bool models_trained = false;

  gnn::ProgressDataset dataset;
  ProgressTable table;
  std::vector<RunRecord> records;
  std::vector<double> composite_success_history;  // one entry per iteration
  std::int64_t iteration = 0;
  std::int64_t env_steps = 0;
  std::int64_t snapshot_time = 0;

  std::string run_dir;  // empty disables persistence

  static Runner make(std::uint64_t seed, std::vector<env::Task> tasks,
                     const rl::PpoConfig& ppo, const gnn::GnnConfig& gnn_cfg,
                     const CurriculumConfig& cur, std::string run_dir = "");

  void run_iteration();
  void run_all();

  // Greedy composite evaluation: every sub-task must succeed in order.
  double evaluate_composite(int episodes, std::uint64_t seed) const;

  void persist_models() const;
  void write_metrics_csv() const;
  void write_run_records() const;
};

struct CompareSeedRow {
  std::uint64_t seed = 0;
  // Mean composite success over the last quarter of iterations.
  double final_success_scheduled = 0.0;
  double final_success_random = 0.0;
  std::int64_t steps_to_threshold_scheduled = -1;
  std::int64_t steps_to_threshold_random = -1;
};

struct CompareReport {
  std::vector<CompareSeedRow> rows;
  double mean_scheduled = 0.0;
  double mean_random = 0.0;
  int scheduled_wins = 0;  // seeds where scheduled is strictly greater
  int random_wins = 0;
  double success_threshold = 0.5;
};

CompareReport compare_curricula(const std::vector<std::uint64_t>& seeds,
                                std::vector<env::Task> tasks,
                                const rl::PpoConfig& ppo,
                                const gnn::GnnConfig& gnn_cfg,
                                const CurriculumConfig& cur);

std::string compare_report_to_json(const CompareReport& report);

}  // namespace pug::curriculum
