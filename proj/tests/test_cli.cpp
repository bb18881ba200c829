#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(PUG_BINARY) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spill(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string small_config(const fs::path& out_dir) {
  return std::string("{\n"
                     "  \"seed\": 3,\n"
                     "  \"out_dir\": \"") + out_dir.string() + "\",\n"
         "  \"ppo\": {\"rollout_steps\": 64, \"minibatch\": 32, \"epochs\": 2},\n"
         "  \"gnn\": {\"predictor_epochs\": 3, \"explainer_epochs\": 3},\n"
         "  \"curriculum\": {\"iterations\": 2, \"sequence_len\": 2,\n"
         "                   \"eval_episodes\": 2, \"min_dataset\": 2,\n"
         "                   \"retrain_cadence\": 2}\n"
         "}\n";
}

}  // namespace

TEST_CASE("train runs a config end to end and writes the expected files") {
  auto dir = fresh_dir("cli_train");
  auto cfg = dir / "cfg.json";
  auto out = dir / "run";
  spill(cfg, small_config(out));
  CHECK(run("train --config " + cfg.string()) == 0);
  CHECK(fs::exists(out / "metrics.csv"));
  CHECK(fs::exists(out / "run_records.json"));
  CHECK(fs::exists(out / "config.json"));
  CHECK(fs::exists(out / "tasks.json"));
  CHECK(fs::exists(out / "models" / "predictor.json"));
  CHECK(!fs::exists(out / ".lock"));  // released on success
  fs::remove_all(dir);
}

TEST_CASE("identical configs give byte-identical metrics and svg output") {
  auto dir = fresh_dir("cli_det");
  auto cfg_a = dir / "a.json";
  auto cfg_b = dir / "b.json";
  spill(cfg_a, small_config(dir / "run_a"));
  spill(cfg_b, small_config(dir / "run_b"));
  REQUIRE(run("train --config " + cfg_a.string()) == 0);
  REQUIRE(run("train --config " + cfg_b.string()) == 0);
  CHECK(slurp(dir / "run_a" / "metrics.csv") ==
        slurp(dir / "run_b" / "metrics.csv"));
  std::size_t svgs = 0;
  for (const auto& e : fs::directory_iterator(dir / "run_a" / "svg")) {
    auto other = dir / "run_b" / "svg" / e.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(slurp(e.path()) == slurp(other));
    ++svgs;
  }
  CHECK(svgs > 0);
  fs::remove_all(dir);
}

TEST_CASE("config errors exit with code 2") {
  auto dir = fresh_dir("cli_cfg");
  CHECK(run("train --config /nonexistent.json") == 2);

  auto bad = dir / "bad.json";
  spill(bad, "{this is not json");
  CHECK(run("train --config " + bad.string()) == 2);

  auto noseed = dir / "noseed.json";
  spill(noseed, "{\"out_dir\": \"" + (dir / "x").string() + "\"}");
  CHECK(run("train --config " + noseed.string()) == 2);

  auto range = dir / "range.json";
  spill(range, "{\"seed\": 1, \"out_dir\": \"" + (dir / "y").string() +
                   "\", \"curriculum\": {\"eps_start\": 1.5}}");
  CHECK(run("train --config " + range.string()) == 2);
  fs::remove_all(dir);
}

TEST_CASE("a stale lock file makes train fail with the runtime exit code") {
  auto dir = fresh_dir("cli_lock");
  auto cfg = dir / "cfg.json";
  auto out = dir / "run";
  spill(cfg, small_config(out));
  fs::create_directories(out);
  spill(out / ".lock", "12345\n");
  CHECK(run("train --config " + cfg.string()) == 3);
  fs::remove_all(dir);
}

TEST_CASE("explain, render, and report operate on a completed run") {
  auto dir = fresh_dir("cli_post");
  auto cfg = dir / "cfg.json";
  auto out = dir / "run";
  spill(cfg, small_config(out));
  REQUIRE(run("train --config " + cfg.string()) == 0);

  // Pick a recorded (iteration, task) pair out of the dataset index.
  std::ifstream index(out / "dp" / "index.csv");
  std::string header, row;
  REQUIRE(std::getline(index, header));
  REQUIRE(std::getline(index, row));
  // Columns: graph_file, p, task_id, iteration.
  std::vector<std::string> cols;
  for (std::size_t pos = 0;;) {
    const auto next = row.find(',', pos);
    cols.push_back(row.substr(pos, next - pos));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  REQUIRE(cols.size() == 4);
  const std::string task = cols[2];
  const std::string iter = cols[3];

  CHECK(run("explain --run " + out.string() + " --iteration " + iter +
            " --task " + task + " --km 6") == 0);
  const auto exp_json = out / ("explain_" + iter + "_" + task + ".json");
  const auto exp_svg = out / "svg" / ("explain_" + iter + "_" + task + ".svg");
  CHECK(fs::exists(exp_json));
  CHECK(fs::exists(exp_svg));
  CHECK(slurp(exp_svg).find("class=\"explain\"") != std::string::npos);

  CHECK(run("explain --run " + out.string() +
            " --iteration 999 --task nope") == 3);

  // Render a stored graph directly.
  std::string graph_file;
  for (const auto& e : fs::directory_iterator(out / "dp")) {
    if (e.path().extension() == ".json") graph_file = e.path().string();
  }
  REQUIRE(!graph_file.empty());
  const auto svg_out = dir / "render.svg";
  CHECK(run("render --graph " + graph_file + " --out " + svg_out.string() +
            " --k 4") == 0);
  CHECK(slurp(svg_out).find("<svg") != std::string::npos);
  CHECK(run("render --graph /nonexistent.json --out " + svg_out.string()) == 3);

  CHECK(run("report --run " + out.string() + " --phases 2") == 0);
  CHECK(fs::exists(out / "verb_distribution.csv"));
  CHECK(fs::exists(out / "overlap_over_time.csv"));
  CHECK(fs::exists(out / "report.json"));
  CHECK(run("report --run " + (dir / "missing").string()) == 3);
  fs::remove_all(dir);
}

TEST_CASE("unknown subcommands and missing required options fail fast") {
  CHECK(run("definitely-not-a-command") != 0);
  CHECK(run("train") != 0);
  CHECK(run("explain --run /tmp") != 0);
}
