// pug: train, explain, render, report, compare.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime abort.
// Set PUG_LOG=0 to silence per-iteration progress lines.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pug/config.hpp"
#include "pug/curriculum.hpp"
#include "pug/env.hpp"
#include "pug/gnn.hpp"
#include "pug/policy_graph.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace pug;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

bool log_enabled() {
  const char* v = std::getenv("PUG_LOG");
  return v == nullptr || std::string(v) != "0";
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spill(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << text;
}

// One writer per run directory.
struct RunLock {
  fs::path path;
  explicit RunLock(const fs::path& dir) : path(dir / ".lock") {
    if (fs::exists(path)) {
      throw std::runtime_error("run directory is locked: " + path.string());
    }
    std::ofstream(path) << "locked\n";
  }
  ~RunLock() { std::error_code ec; fs::remove(path, ec); }
};

struct LoadedRun {
  config::RunConfig cfg;
  std::vector<env::Task> tasks;
  gnn::GnnModel predictor;
  gnn::Explainer explainer;
};

LoadedRun load_run(const fs::path& run_dir) {
  if (!fs::exists(run_dir / "run_records.json")) {
    throw std::runtime_error("not a completed run directory: " +
                             run_dir.string());
  }
  LoadedRun r;
  r.cfg = config::config_from_json(slurp(run_dir / "config.json"));
  r.tasks = env::library_from_json(slurp(run_dir / "tasks.json"));
  r.predictor = gnn::model_from_json(slurp(run_dir / "models/predictor.json"));
  r.explainer =
      gnn::explainer_from_json(slurp(run_dir / "models/explainer.json"));
  return r;
}

int cmd_train(const std::string& config_path, const std::string& out_override) {
  config::RunConfig cfg = config::load_config(config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (cfg.out_dir.empty()) {
    throw config::ConfigError("config: out_dir is required for train");
  }
  std::vector<env::Task> tasks = config::load_tasks(cfg);
  fs::create_directories(cfg.out_dir);
  RunLock lock(cfg.out_dir);
  spill(fs::path(cfg.out_dir) / "config.json", config::config_to_json(cfg));
  spill(fs::path(cfg.out_dir) / "tasks.json", env::library_to_json(tasks));

  curriculum::Runner runner = curriculum::Runner::make(
      cfg.seed, tasks, cfg.ppo, cfg.gnn, cfg.curriculum, cfg.out_dir);
  while (runner.iteration < runner.cur.iterations) {
    runner.run_iteration();
    if (log_enabled()) {
      const auto& rec = runner.records.back();
      std::cerr << "iter " << rec.iteration << " eps "
                << rec.epsilon << " composite "
                << runner.composite_success_history.back() << " steps "
                << rec.env_steps_total << "\n";
    }
  }
  runner.persist_models();
  runner.write_metrics_csv();
  runner.write_run_records();
  if (log_enabled()) std::cerr << "run complete: " << cfg.out_dir << "\n";
  return kExitOk;
}

int cmd_explain(const std::string& run_dir, std::int64_t iteration,
                const std::string& task_id, std::size_t k_m) {
  LoadedRun run = load_run(run_dir);
  // Locate the stored graph for (iteration, task) in the dataset index.
  std::ifstream index(fs::path(run_dir) / "dp" / "index.csv");
  if (!index) throw std::runtime_error("missing dp/index.csv in " + run_dir);
  std::string line;
  std::getline(index, line);  // header
  std::string graph_file;
  while (std::getline(index, line)) {
    std::stringstream ss(line);
    std::string file, p, task, iter;
    std::getline(ss, file, ',');
    std::getline(ss, p, ',');
    std::getline(ss, task, ',');
    std::getline(ss, iter, ',');
    if (task == task_id && std::stoll(iter) == iteration) {
      graph_file = file;
      break;
    }
  }
  if (graph_file.empty()) {
    throw std::runtime_error("no stored graph for task " + task_id +
                             " at iteration " + std::to_string(iteration));
  }
  polviz::PolicyGraph graph =
      polviz::import_json((fs::path(run_dir) / "dp" / graph_file).string());
  gnn::EdgeMask mask = gnn::compute_mask(run.explainer, run.predictor, graph);
  polviz::ExplanationSubgraph ex =
      gnn::extract_subgraph(graph, mask, k_m, run.predictor);
  std::set<std::size_t> activated;
  for (const auto& n : graph.nodes) {
    if (n.activated) activated.insert(n.id);
  }
  const double overlap = gnn::overlap_ratio(ex, activated);

  const std::string stem =
      "explain_" + std::to_string(iteration) + "_" + task_id;
  json j{{"task_id", task_id},
         {"iteration", iteration},
         {"graph_file", graph_file},
         {"edge_ids", std::vector<std::size_t>(ex.edge_ids.begin(),
                                               ex.edge_ids.end())},
         {"node_ids", std::vector<std::size_t>(ex.node_ids.begin(),
                                               ex.node_ids.end())},
         {"threshold", ex.threshold},
         {"fidelity_gap", ex.fidelity_gap},
         {"overlap_ratio", overlap},
         {"truncated", ex.truncated}};
  spill(fs::path(run_dir) / (stem + ".json"), j.dump(2));

  polviz::HighlightSet hs = polviz::top_k_highlight(
      graph, static_cast<int>(run.cfg.curriculum.highlight_k));
  polviz::RenderOptions ropts;
  ropts.edge_cap = run.cfg.curriculum.graph_edge_cap;
  polviz::render_svg_file(graph, hs, &ex,
                          (fs::path(run_dir) / "svg" / (stem + ".svg")).string(),
                          ropts);
  std::cout << "fidelity_gap " << ex.fidelity_gap << " overlap " << overlap
            << "\n";
  return kExitOk;
}

int cmd_render(const std::string& graph_path, const std::string& out_path,
               int k, std::size_t edge_cap) {
  polviz::PolicyGraph graph = polviz::import_json(graph_path);
  polviz::HighlightSet hs = polviz::top_k_highlight(graph, k);
  polviz::RenderOptions opts;
  opts.edge_cap = edge_cap;
  polviz::render_svg_file(graph, hs, nullptr, out_path, opts);
  return kExitOk;
}

int cmd_report(const std::string& run_dir, int phase_bins) {
  LoadedRun run = load_run(run_dir);
  json records = json::parse(slurp(fs::path(run_dir) / "run_records.json"));
  if (records.at("records").empty()) {
    throw std::runtime_error("run directory has no records: " + run_dir);
  }

  std::vector<curriculum::RunRecord> recs;
  for (const auto& rj : records.at("records")) {
    curriculum::RunRecord rec;
    rec.iteration = rj.at("iteration").get<std::int64_t>();
    rec.epsilon = rj.at("epsilon").get<double>();
    rec.env_steps_total = rj.at("env_steps_total").get<std::int64_t>();
    for (const auto& tj : rj.at("tasks")) {
      curriculum::TaskRecord tr;
      tr.task_id = tj.at("task_id").get<std::string>();
      tr.p = tj.at("p").get<double>();
      tr.overlap = tj.at("overlap").get<double>();
      tr.graph_file = tj.at("graph_file").get<std::string>();
      rec.tasks.push_back(std::move(tr));
    }
    recs.push_back(std::move(rec));
  }

  auto hist = curriculum::verb_distribution(recs, run.tasks, phase_bins);
  {
    std::ostringstream csv;
    csv << "phase";
    for (int v = 0; v < env::kNumVerbs; ++v) {
      csv << "," << env::verb_name(static_cast<env::Verb>(v));
    }
    csv << "\n";
    for (std::size_t ph = 0; ph < hist.size(); ++ph) {
      csv << ph;
      for (std::size_t v = 0; v < hist[ph].size(); ++v) csv << "," << hist[ph][v];
      csv << "\n";
    }
    spill(fs::path(run_dir) / "verb_distribution.csv", csv.str());
  }

  // Overlap-over-time, recomputed from the stored graphs with the persisted
  // models so the stored series can be cross-checked.
  {
    std::ostringstream csv;
    csv << "iteration,task_id,overlap_stored,overlap_recomputed\n";
    for (const auto& rec : recs) {
      for (const auto& tr : rec.tasks) {
        if (tr.graph_file.empty()) continue;
        polviz::PolicyGraph graph = polviz::import_json(
            (fs::path(run_dir) / "dp" / tr.graph_file).string());
        gnn::EdgeMask mask =
            gnn::compute_mask(run.explainer, run.predictor, graph);
        polviz::ExplanationSubgraph ex = gnn::extract_subgraph(
            graph, mask, run.cfg.curriculum.explanation_k_m, run.predictor);
        std::set<std::size_t> activated;
        for (const auto& n : graph.nodes) {
          if (n.activated) activated.insert(n.id);
        }
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g",
                      gnn::overlap_ratio(ex, activated));
        csv << rec.iteration << "," << tr.task_id << "," << tr.overlap << ","
            << buf << "\n";
      }
    }
    spill(fs::path(run_dir) / "overlap_over_time.csv", csv.str());
  }

  json summary{{"iterations", recs.size()},
               {"env_steps_total", recs.back().env_steps_total},
               {"composite_success", records.at("composite_success")},
               {"phase_bins", phase_bins}};
  double mean_overlap_first = 0.0, mean_overlap_last = 0.0;
  std::size_t nf = 0, nl = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    for (const auto& tr : recs[i].tasks) {
      if (i < recs.size() / 4) {
        mean_overlap_first += tr.overlap;
        ++nf;
      } else if (i >= recs.size() - recs.size() / 4) {
        mean_overlap_last += tr.overlap;
        ++nl;
      }
    }
  }
  if (nf) summary["overlap_first_quarter_mean"] = mean_overlap_first / nf;
  if (nl) summary["overlap_last_quarter_mean"] = mean_overlap_last / nl;
  spill(fs::path(run_dir) / "report.json", summary.dump(2));
  return kExitOk;
}

int cmd_compare(const std::string& config_path, const std::string& seeds_csv) {
  config::RunConfig cfg = config::load_config(config_path);
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(seeds_csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) seeds.push_back(std::stoull(item));
  }
  std::vector<env::Task> tasks = config::load_tasks(cfg);
  curriculum::CompareReport report = curriculum::compare_curricula(
      seeds, tasks, cfg.ppo, cfg.gnn, cfg.curriculum);
  const std::string out = curriculum::compare_report_to_json(report);
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    spill(fs::path(cfg.out_dir) / "report.json", out);
  }
  std::cout << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"policy-update graph toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_override;
  auto* train = app.add_subcommand("train", "run the training loop");
  train->add_option("--config", config_path, "run config file")->required();
  train->add_option("--out", out_override, "override output directory");

  std::string run_dir, task_id;
  std::int64_t iteration = 0;
  std::size_t k_m = 8;
  auto* explain = app.add_subcommand("explain", "explain a stored graph");
  explain->add_option("--run", run_dir, "run directory")->required();
  explain->add_option("--iteration", iteration)->required();
  explain->add_option("--task", task_id)->required();
  explain->add_option("--km", k_m, "minimum explanation size");

  std::string graph_path, out_path;
  int k = 8;
  std::size_t edge_cap = 2000;
  auto* render = app.add_subcommand("render", "render a graph file to SVG");
  render->add_option("--graph", graph_path)->required();
  render->add_option("--out", out_path)->required();
  render->add_option("--k", k, "top-k highlighted nodes");
  render->add_option("--edge-cap", edge_cap, "max edges drawn");

  std::string report_dir;
  int phase_bins = 4;
  auto* report = app.add_subcommand("report", "aggregate a completed run");
  report->add_option("--run", report_dir)->required();
  report->add_option("--phases", phase_bins, "phase bins for verb histogram");

  std::string cmp_config, cmp_seeds;
  auto* compare =
      app.add_subcommand("compare", "scheduled vs random curriculum");
  compare->add_option("--config", cmp_config)->required();
  compare->add_option("--seeds", cmp_seeds, "comma-separated seeds")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config_path, out_override);
    if (*explain) return cmd_explain(run_dir, iteration, task_id, k_m);
    if (*render) return cmd_render(graph_path, out_path, k, edge_cap);
    if (*report) return cmd_report(report_dir, phase_bins);
    if (*compare) return cmd_compare(cmp_config, cmp_seeds);
  } catch (const config::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
