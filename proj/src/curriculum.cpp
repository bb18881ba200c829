#include "pug/curriculum.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace pug::curriculum {

namespace fs = std::filesystem;
using json = nlohmann::json;

double epsilon_at(const CurriculumConfig& cfg, std::int64_t iteration) {
  if (!cfg.scheduler_enabled) return 1.0;
  if (cfg.warmup_iterations <= 0) return cfg.eps_end;
  const double frac = std::clamp(
      static_cast<double>(iteration) / cfg.warmup_iterations, 0.0, 1.0);
  return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start);
}

std::vector<std::size_t> sample_sequence(const ProgressTable& table,
                                         const std::vector<env::Task>& tasks,
                                         double epsilon, int length,
                                         double temp, std::mt19937_64& rng) {
  if (length < 1) throw std::invalid_argument("sample_sequence: length >= 1");
  if (tasks.empty()) throw std::invalid_argument("sample_sequence: no tasks");
  std::vector<std::size_t> seq;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < epsilon) {
    std::uniform_int_distribution<std::size_t> pick(0, tasks.size() - 1);
    for (int i = 0; i < length; ++i) seq.push_back(pick(rng));
    return seq;
  }
  // Softmax over predicted progress, shifted for numerical stability.
  std::vector<double> score(tasks.size(), 0.0);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    auto it = table.rows.find(tasks[i].id);
    if (it != table.rows.end()) score[i] = it->second.p_hat;
  }
  const double mx = *std::max_element(score.begin(), score.end());
  std::vector<double> weight(tasks.size());
  double total = 0.0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    weight[i] = std::exp((score[i] - mx) / std::max(temp, 1e-12));
    total += weight[i];
  }
  for (int n = 0; n < length; ++n) {
    double r = u(rng) * total;
    std::size_t chosen = tasks.size() - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      acc += weight[i];
      if (r < acc) {
        chosen = i;
        break;
      }
    }
    seq.push_back(chosen);
  }
  return seq;
}

std::vector<std::vector<std::size_t>> verb_distribution(
    const std::vector<RunRecord>& records, const std::vector<env::Task>& tasks,
    int phase_bins) {
  if (records.empty()) {
    throw std::invalid_argument("verb_distribution: no records");
  }
  if (phase_bins < 1) {
    throw std::invalid_argument("verb_distribution: phase_bins >= 1");
  }
  std::map<std::string, env::Verb> verb_of;
  for (const auto& t : tasks) verb_of[t.id] = t.verb;
  std::vector<std::vector<std::size_t>> hist(
      phase_bins, std::vector<std::size_t>(env::kNumVerbs, 0));
  const std::size_t n = records.size();
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t bin =
        std::min<std::size_t>(r * phase_bins / n, phase_bins - 1);
    for (const auto& tr : records[r].tasks) {
      hist[bin][static_cast<int>(verb_of.at(tr.task_id))]++;
    }
  }
  return hist;
}

Runner Runner::make(std::uint64_t seed, std::vector<env::Task> tasks,
                    const rl::PpoConfig& ppo, const gnn::GnnConfig& gnn_cfg,
                    const CurriculumConfig& cur, std::string run_dir) {
  if (tasks.empty()) throw std::invalid_argument("Runner: empty task library");
  Runner r;
  r.master_seed = seed;
  r.tasks = std::move(tasks);
  r.composite = env::default_composite();
  r.ppo = ppo;
  r.gnn_cfg = gnn_cfg;
  r.cur = cur;
  r.actor = nn::make_actor(env::kObsDim, env::kNumActions,
                           nn::stream_seed(seed, "actor"));
  r.critic = nn::make_critic(env::kObsDim, nn::stream_seed(seed, "critic"));
  r.predictor = gnn::GnnModel::make(gnn_cfg.layers, gnn_cfg.hidden,
                                    nn::stream_seed(seed, "predictor"));
  r.explainer =
      gnn::Explainer::make(gnn_cfg.hidden, nn::stream_seed(seed, "explainer"));
  for (const auto& t : r.tasks) r.table.rows[t.id] = TaskProgress{};
  r.run_dir = std::move(run_dir);
  if (!r.run_dir.empty()) {
    fs::create_directories(fs::path(r.run_dir) / "dp");
    fs::create_directories(fs::path(r.run_dir) / "svg");
    fs::create_directories(fs::path(r.run_dir) / "models");
    std::ofstream index(fs::path(r.run_dir) / "dp" / "index.csv");
    index << "graph_file,p,task_id,iteration\n";
  }
  return r;
}

static std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void Runner::run_iteration() {
  const auto t_start = std::chrono::steady_clock::now();
  RunRecord record;
  record.iteration = iteration;
  record.epsilon = epsilon_at(cur, iteration);

  std::mt19937_64 sample_rng(nn::stream_seed(
      master_seed, "sample:" + std::to_string(iteration)));
  const std::vector<std::size_t> seq = sample_sequence(
      table, tasks, record.epsilon, cur.sequence_len, cur.softmax_temp,
      sample_rng);

  for (std::size_t slot = 0; slot < seq.size(); ++slot) {
    const env::Task& task = tasks[seq[slot]];
    const std::string tag =
        std::to_string(iteration) + ":" + std::to_string(slot);
    TaskRecord tr;
    tr.task_id = task.id;

    rl::EvalResult before = rl::evaluate(
        actor, task, cur.eval_episodes,
        nn::stream_seed(master_seed, "eval-pre:" + tag));
    tr.r_prev = before.mean_return;

    nn::ParamSnapshot snap_prev = nn::snapshot(actor, snapshot_time);
    rl::RolloutBuffer buffer = rl::collect_rollouts(
        actor, critic, task, ppo.rollout_steps,
        nn::stream_seed(master_seed, "rollout:" + tag));
    env_steps += ppo.rollout_steps;
    rl::compute_gae(buffer, ppo.gamma, ppo.gae_lambda);
    rl::PpoStats stats =
        ppo_update(actor, critic, actor_opt, critic_opt, buffer, ppo,
                   nn::stream_seed(master_seed, "update:" + tag));
    tr.policy_loss = stats.policy_loss;
    tr.value_loss = stats.value_loss;
    tr.entropy = stats.entropy;
    snapshot_time += 1;
    nn::ParamSnapshot snap_next = nn::snapshot(actor, snapshot_time);

    rl::EvalResult after = rl::evaluate(
        actor, task, cur.eval_episodes,
        nn::stream_seed(master_seed, "eval-post:" + tag));
    tr.r_now = after.mean_return;
    tr.p = rl::learning_progress(after.mean_return, before.mean_return);

    polviz::PolicyGraph graph =
        polviz::build_update_graph(snap_prev, snap_next, actor);
    graph.task_id = task.id;
    graph = polviz::tag_activations(graph, after.trace);
    graph = polviz::downsample_top_edges(graph, cur.graph_edge_cap);

    gnn::DatasetEntry entry;
    entry.progress = tr.p;
    entry.task_id = task.id;
    entry.iteration = iteration;
    for (const auto& n : graph.nodes) {
      if (n.activated) entry.activated.insert(n.id);
    }
    entry.graph = graph;
    dataset.entries.push_back(std::move(entry));
    const std::size_t entry_index = dataset.entries.size() - 1;

    // Online overlap between the current explainer's subgraph and the
    // evaluation-activated nodes.
    {
      gnn::EdgeMask mask = gnn::compute_mask(explainer, predictor, graph);
      polviz::ExplanationSubgraph ex = gnn::extract_subgraph(
          graph, mask, cur.explanation_k_m, predictor);
      tr.overlap =
          gnn::overlap_ratio(ex, dataset.entries[entry_index].activated);
    }

    TaskProgress& row = table.rows[task.id];
    row.p_true = tr.p;
    row.last_eval = tr.r_now;
    row.evaluated = true;
    row.last_iteration = iteration;
    row.last_dataset_index = entry_index;
    tr.p_hat = row.p_hat;

    if (!run_dir.empty()) {
      const std::string fname = "g_" + std::to_string(iteration) + "_" +
                                std::to_string(slot) + "_" + task.id + ".json";
      polviz::export_json(graph, (fs::path(run_dir) / "dp" / fname).string());
      std::ofstream index(fs::path(run_dir) / "dp" / "index.csv",
                          std::ios::app);
      index << fname << "," << g17(tr.p) << "," << task.id << "," << iteration
            << "\n";
      tr.graph_file = fname;

      polviz::HighlightSet hs = polviz::top_k_highlight(
          graph, static_cast<int>(cur.highlight_k));
      polviz::RenderOptions ropts;
      ropts.edge_cap = cur.graph_edge_cap;
      polviz::render_svg_file(
          graph, hs, nullptr,
          (fs::path(run_dir) / "svg" /
           ("g_" + std::to_string(iteration) + "_" + std::to_string(slot) +
            "_" + task.id + ".svg"))
              .string(),
          ropts);
    }
    record.tasks.push_back(std::move(tr));
  }

  // Periodic GNN retraining once enough data exists.
  if (dataset.entries.size() >= cur.min_dataset &&
      (cur.retrain_cadence <= 0 ||
       iteration % cur.retrain_cadence == cur.retrain_cadence - 1)) {
    gnn::train_predictor(
        predictor, dataset, gnn_cfg.predictor_epochs, gnn_cfg.lr,
        nn::stream_seed(master_seed, "pt:" + std::to_string(iteration)));
    gnn::train_explainer(
        explainer, predictor, dataset, gnn_cfg,
        nn::stream_seed(master_seed, "et:" + std::to_string(iteration)));
    models_trained = true;
  }

  // Refresh predicted progress for every task from its latest stored graph.
  if (models_trained) {
    for (auto& [task_id, row] : table.rows) {
      if (row.last_dataset_index) {
        row.p_hat = gnn::predict_progress(
            predictor, dataset.entries[*row.last_dataset_index].graph);
      }
    }
    for (auto& tr : record.tasks) tr.p_hat = table.rows[tr.task_id].p_hat;
  }

  composite_success_history.push_back(evaluate_composite(
      cur.eval_episodes,
      nn::stream_seed(master_seed, "comp:" + std::to_string(iteration))));

  record.env_steps_total = env_steps;
  record.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  records.push_back(std::move(record));
  iteration += 1;
}

void Runner::run_all() {
  while (iteration < cur.iterations) run_iteration();
  if (!run_dir.empty()) {
    persist_models();
    write_metrics_csv();
    write_run_records();
  }
}

double Runner::evaluate_composite(int episodes, std::uint64_t seed) const {
  int successes = 0;
  for (int e = 0; e < episodes; ++e) {
    bool all_ok = true;
    for (const env::Task& sub : composite.subtasks) {
      auto [state, obs] = env::reset(
          sub, nn::stream_seed(seed, "c" + std::to_string(e) + ":" + sub.id));
      bool ok = false;
      while (!state.done) {
        std::vector<double> logits = nn::forward(actor, obs);
        const int action = static_cast<int>(
            std::max_element(logits.begin(), logits.end()) - logits.begin());
        env::StepResult sr = env::step(sub, state, action);
        ok = ok || sr.success;
        state = sr.state;
        obs = sr.obs;
      }
      if (!ok) {
        all_ok = false;
        break;
      }
    }
    if (all_ok) ++successes;
  }
  return static_cast<double>(successes) / std::max(episodes, 1);
}

void Runner::persist_models() const {
  if (run_dir.empty()) return;
  {
    std::ofstream out(fs::path(run_dir) / "models" / "predictor.json");
    out << gnn::model_to_json(predictor);
  }
  {
    std::ofstream out(fs::path(run_dir) / "models" / "explainer.json");
    out << gnn::explainer_to_json(explainer);
  }
  {
    std::ofstream out(fs::path(run_dir) / "models" / "actor.json");
    out << nn::snapshot_to_json(nn::snapshot(actor, snapshot_time), actor);
  }
}

void Runner::write_metrics_csv() const {
  std::ofstream out(fs::path(run_dir) / "metrics.csv");
  out << "iteration,task_id,r_prev,r,p,p_hat,policy_loss,value_loss,entropy,"
         "overlap,env_steps\n";
  for (const auto& rec : records) {
    for (const auto& tr : rec.tasks) {
      out << rec.iteration << "," << tr.task_id << "," << g17(tr.r_prev) << ","
          << g17(tr.r_now) << "," << g17(tr.p) << "," << g17(tr.p_hat) << ","
          << g17(tr.policy_loss) << "," << g17(tr.value_loss) << ","
          << g17(tr.entropy) << "," << g17(tr.overlap) << ","
          << rec.env_steps_total << "\n";
    }
  }
}

void Runner::write_run_records() const {
  json arr = json::array();
  for (const auto& rec : records) {
    json tasks_j = json::array();
    for (const auto& tr : rec.tasks) {
      tasks_j.push_back({{"task_id", tr.task_id},
                         {"r_prev", tr.r_prev},
                         {"r", tr.r_now},
                         {"p", tr.p},
                         {"p_hat", tr.p_hat},
                         {"overlap", tr.overlap},
                         {"graph_file", tr.graph_file}});
    }
    arr.push_back({{"iteration", rec.iteration},
                   {"epsilon", rec.epsilon},
                   {"tasks", tasks_j},
                   {"env_steps_total", rec.env_steps_total},
                   {"wall_clock_s", rec.wall_clock_s}});
  }
  json j{{"records", arr},
         {"composite_success", composite_success_history},
         {"master_seed", master_seed}};
  std::ofstream out(fs::path(run_dir) / "run_records.json");
  out << j.dump(2);
}

CompareReport compare_curricula(const std::vector<std::uint64_t>& seeds,
                                std::vector<env::Task> tasks,
                                const rl::PpoConfig& ppo,
                                const gnn::GnnConfig& gnn_cfg,
                                const CurriculumConfig& cur) {
  if (seeds.size() < 3) {
    throw std::invalid_argument("compare_curricula: need >= 3 seeds");
  }
  CompareReport report;
  for (std::uint64_t seed : seeds) {
    CompareSeedRow row;
    row.seed = seed;
    for (bool scheduled : {true, false}) {
      CurriculumConfig arm = cur;
      arm.scheduler_enabled = scheduled;
      Runner runner = Runner::make(seed, tasks, ppo, gnn_cfg, arm);
      runner.run_all();
      // Final success at the fixed budget: the mean over the last quarter of
      // per-iteration composite evaluations (smoother than one final eval).
      const auto& hist = runner.composite_success_history;
      const std::size_t q = std::max<std::size_t>(hist.size() / 4, 1);
      double final_success = 0.0;
      for (std::size_t i = hist.size() - q; i < hist.size(); ++i) {
        final_success += hist[i];
      }
      final_success /= static_cast<double>(q);
      std::int64_t steps_to = -1;
      for (std::size_t i = 0; i < runner.composite_success_history.size();
           ++i) {
        if (runner.composite_success_history[i] >= report.success_threshold) {
          steps_to = runner.records[i].env_steps_total;
          break;
        }
      }
      if (scheduled) {
        row.final_success_scheduled = final_success;
        row.steps_to_threshold_scheduled = steps_to;
      } else {
        row.final_success_random = final_success;
        row.steps_to_threshold_random = steps_to;
      }
    }
    report.rows.push_back(row);
  }
  for (const auto& row : report.rows) {
    report.mean_scheduled += row.final_success_scheduled;
    report.mean_random += row.final_success_random;
    if (row.final_success_scheduled > row.final_success_random) {
      report.scheduled_wins++;
    } else if (row.final_success_random > row.final_success_scheduled) {
      report.random_wins++;
    }
  }
  report.mean_scheduled /= static_cast<double>(report.rows.size());
  report.mean_random /= static_cast<double>(report.rows.size());
  return report;
}

std::string compare_report_to_json(const CompareReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"seed", r.seed},
                    {"final_success_scheduled", r.final_success_scheduled},
                    {"final_success_random", r.final_success_random},
                    {"steps_to_threshold_scheduled",
                     r.steps_to_threshold_scheduled},
                    {"steps_to_threshold_random", r.steps_to_threshold_random}});
  }
  json j{{"rows", rows},
         {"mean_scheduled", report.mean_scheduled},
         {"mean_random", report.mean_random},
         {"scheduled_wins", report.scheduled_wins},
         {"random_wins", report.random_wins},
         {"success_threshold", report.success_threshold}};
  return j.dump(2);
}

}  // namespace pug::curriculum
