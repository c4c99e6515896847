#include <doctest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "calib/calibrator.hpp"
#include "calib/checkpoint.hpp"
#include "calib/text.hpp"

using namespace calib;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string output;
};

Outcome cli(const std::string& args) {
  const std::string cmd = std::string(CALIB_CLI) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = ::pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("calib_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const fs::path kQuickstart = fs::path(CALIB_SOURCE_DIR) / "configs" / "quickstart_sphere.json";

std::string tiny_sphere(const fs::path& out, const std::string& extra = "") {
  return R"({
    "model": {"name": "sphere"},
    "space": [{"name": "x1", "lower": 0, "upper": 1}, {"name": "x2", "lower": 0, "upper": 1}],
    "loss": {"kind": "euclidean"},
    "samplers": {"pool_size": 256, "forest": {"n_trees": 20}},
    "budget": {"batch_size": 3, "ensemble_size": 2, "n_batches": 4, "n_steps": 1, "burn_in": 0},)" +
         extra + R"(
    "output": {"dir": ")" + out.string() + R"(", "workers": 1}
  })";
}

void write_trace(const fs::path& p, const std::vector<std::tuple<SamplerId, double, double>>& steps) {
  Trace t;
  std::int64_t k = 1;
  for (const auto& [arm, prev, reward] : steps) {
    TraceStep s;
    s.step = k++;
    s.arm = arm;
    s.prev_best = prev;
    s.batch_min_loss = prev * (1 - reward);
    s.best_loss = s.batch_min_loss;
    s.reward = reward;
    t.push_back(s);
  }
  write_trace_csv(t, {}, p);
}

}  // namespace

TEST_CASE("calibrate: quickstart, determinism, overwrite protection") {
  TempDir tmp("quick");
  const auto a = tmp.path / "a", b = tmp.path / "b", c = tmp.path / "c";
  const auto t0 = std::chrono::steady_clock::now();
  const auto run = cli("calibrate " + kQuickstart.string() + " --output " + a.string());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(run.code == 0);
  CHECK(secs < 10.0);
  CHECK(run.output.find("batch 50/50 arm=RF") != std::string::npos);
  for (const char* f : {kCheckpointFile, kTraceFile, kConvergenceFile, "config.json", "real.csv"})
    CHECK(fs::exists(a / f));

  CHECK(cli("calibrate " + kQuickstart.string() + " --quiet --output " + b.string()).code == 0);
  CHECK(slurp(a / kConvergenceFile) == slurp(b / kConvergenceFile));
  CHECK(slurp(a / kTraceFile) == slurp(b / kTraceFile));

  CHECK(cli("calibrate " + kQuickstart.string() + " --quiet --master-seed 2 --output " + c.string()).code == 0);
  CHECK(slurp(a / kCheckpointFile) != slurp(c / kCheckpointFile));

  const auto before = slurp(a / kCheckpointFile);
  const auto refused = cli("calibrate " + kQuickstart.string() + " --quiet --master-seed 5 --output " + a.string());
  CHECK(refused.code == 2);
  CHECK(refused.output.find("--force") != std::string::npos);
  CHECK(slurp(a / kCheckpointFile) == before);
  spit(a / "stray.txt", "x");
  CHECK(cli("calibrate " + kQuickstart.string() + " --quiet --force --output " + a.string()).code == 0);
  CHECK(slurp(a / kCheckpointFile) == before);
  CHECK(!fs::exists(a / "stray.txt"));

  // the echoed config reproduces the run
  CHECK(cli("calibrate " + (a / "config.json").string() + " --quiet --output " + (tmp.path / "echo").string()).code ==
        0);
  CHECK(slurp(tmp.path / "echo" / kCheckpointFile) == before);
}

TEST_CASE("calibrate: config errors exit 2 and name the problem") {
  TempDir tmp("errors");
  const auto missing = cli("calibrate " + (tmp.path / "nope.json").string());
  CHECK(missing.code == 2);
  CHECK(missing.output.find("nope.json") != std::string::npos);

  auto text = tiny_sphere(tmp.path / "out");
  text.replace(text.find("\"n_steps\""), 9, "\"n_stepz\"");
  spit(tmp.path / "bad.json", text);
  const auto bad = cli("calibrate " + (tmp.path / "bad.json").string());
  CHECK(bad.code == 2);
  CHECK(bad.output.find("budget.n_stepz") != std::string::npos);

  CHECK(cli("calibrate").code == 2);
  CHECK(cli("frobnicate x").code == 2);
  CHECK(cli("--help").code == 0);
}

TEST_CASE("calibrate: runtime failure exits 3 with the batch") {
  TempDir tmp("runtime");
  const std::string text = R"({
    "model": {"name": "external", "command": ["sh", "-c", "exit 4"]},
    "space": [{"name": "a", "lower": 0, "upper": 1}],
    "data": {"source": "zeros"},
    "loss": {"kind": "euclidean"},
    "budget": {"batch_size": 2, "ensemble_size": 1, "n_batches": 2, "n_steps": 3, "burn_in": 0},
    "output": {"dir": ")" + (tmp.path / "out").string() + R"("}
  })";
  spit(tmp.path / "ext.json", text);
  const auto r = cli("calibrate " + (tmp.path / "ext.json").string());
  CHECK(r.code == 3);
  CHECK(r.output.find("batch 0") != std::string::npos);
  CHECK(r.output.find("status 4") != std::string::npos);
}

TEST_CASE("calibrate: resume") {
  TempDir tmp("resume");
  spit(tmp.path / "full.json", tiny_sphere(tmp.path / "full"));
  auto part = tiny_sphere(tmp.path / "part");
  spit(tmp.path / "part.json", part);
  auto short_run = part;
  short_run.replace(short_run.find("\"n_batches\": 4"), 14, "\"n_batches\": 2");
  spit(tmp.path / "short.json", short_run);

  REQUIRE(cli("calibrate --quiet " + (tmp.path / "full.json").string()).code == 0);
  REQUIRE(cli("calibrate --quiet " + (tmp.path / "short.json").string()).code == 0);
  const auto resumed = cli("calibrate " + (tmp.path / "part.json").string() + " --resume");
  CHECK(resumed.code == 0);
  CHECK(resumed.output.find("batch 3/4") != std::string::npos);
  CHECK(resumed.output.find("batch 2/4") == std::string::npos);
  CHECK(slurp(tmp.path / "full" / kCheckpointFile) == slurp(tmp.path / "part" / kCheckpointFile));
  CHECK(cli("calibrate --resume --master-seed 8 " + (tmp.path / "part.json").string()).code == 2);
}

TEST_CASE("benchmark: accounting") {
  TempDir tmp("bench");
  const auto text = tiny_sphere(tmp.path / "out", R"(
    "benchmark": {"strategies": [{"arms": ["H"]}, {"kind": "round_robin", "arms": ["RF", "BB"]}], "repetitions": 2},)");
  spit(tmp.path / "b.json", text);
  const auto r = cli("benchmark " + (tmp.path / "b.json").string());
  CHECK(r.code == 0);
  int reps = 0;
  for (const auto& e : fs::recursive_directory_iterator(tmp.path / "out" / "runs"))
    if (e.is_directory() && e.path().filename().string().rfind("rep", 0) == 0) {
      ++reps;
      CHECK(fs::exists(e.path() / kCheckpointFile));
      CHECK(fs::exists(e.path() / "config.json"));
    }
  CHECK(reps == 4);
  const auto summary = slurp(tmp.path / "out" / "summary.csv");
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 5);
  CHECK(summary.rfind("strategy,rep,final_best,mean,se\n", 0) == 0);
  CHECK(fs::exists(tmp.path / "out" / "curves" / "H.csv"));
  CHECK(fs::exists(tmp.path / "out" / "curves" / "RF_BB.csv"));

  // a run directory's config reproduces that run through calibrate
  const auto rep = tmp.path / "out" / "runs" / "RF_BB" / "rep1";
  CHECK(cli("calibrate --quiet " + (rep / "config.json").string() + " --output " + (tmp.path / "again").string())
            .code == 0);
  CHECK(slurp(rep / kCheckpointFile) == slurp(tmp.path / "again" / kCheckpointFile));
  CHECK(cli("benchmark " + (tmp.path / "b.json").string()).code == 2);
  CHECK(cli("calibrate " + (tmp.path / "b.json").string()).code == 2);
}

TEST_CASE("analyze") {
  TempDir tmp("analyze");
  const auto one = tmp.path / "one.csv";
  write_trace(one, {{SamplerId::RandomForest, 2.0, 0.1}, {SamplerId::RandomForest, 1.8, 0.3}});
  auto r = cli("analyze " + one.string() + " --output " + (tmp.path / "q.csv").string());
  CHECK(r.code == 0);
  CHECK(slurp(tmp.path / "q.csv") == "arm,single_run,global\nRF,0.2,0.2\n");
  CHECK(cli("analyze " + one.string() + " --output " + (tmp.path / "q.csv").string()).code == 2);

  // Two phases: prev_best 10,9,8,7 (high) then 4,3,2,1 (low); pooled median 5.5.
  const auto fixture = tmp.path / "two_phase.csv";
  write_trace(fixture, {{SamplerId::RandomForest, 10, 0.4},
                        {SamplerId::BestBatch, 9, 0.1},
                        {SamplerId::RandomForest, 8, 0.2},
                        {SamplerId::BestBatch, 7, 0.3},
                        {SamplerId::RandomForest, 4, 0.0},
                        {SamplerId::BestBatch, 3, 0.5},
                        {SamplerId::RandomForest, 2, 0.1},
                        {SamplerId::BestBatch, 1, 0.3}});
  r = cli("analyze --contextual " + fixture.string() + " --output " + (tmp.path / "ctx.csv").string());
  CHECK(r.code == 0);
  CHECK(r.output.find("median 5.5") != std::string::npos);
  std::istringstream rows(slurp(tmp.path / "ctx.csv"));
  std::string line;
  std::getline(rows, line);
  CHECK(line == "arm,single_run,global,high,low");
  const std::vector<std::pair<std::string, std::vector<double>>> expected{{"RF", {0.175, 0.175, 0.3, 0.05}},
                                                                          {"BB", {0.3, 0.3, 0.2, 0.4}}};
  for (const auto& [arm, values] : expected) {
    REQUIRE(std::getline(rows, line));
    const auto f = split(line, ',');
    REQUIRE(f.size() == 5);
    CHECK(f[0] == arm);
    for (std::size_t i = 0; i < 4; ++i) {
      double v = 0;
      REQUIRE(parse_real(f[i + 1], v));
      CHECK(v == doctest::Approx(values[i]).epsilon(1e-12));
    }
  }

  // pooling a second trace changes the global column only through the added steps
  r = cli("analyze " + fixture.string() + " " + one.string() + " --output " + (tmp.path / "pooled.csv").string());
  CHECK(r.code == 0);
  const auto pooled = slurp(tmp.path / "pooled.csv");
  const auto at = pooled.find("RF,");
  const std::string rf_line = pooled.substr(at, pooled.find('\n', at) - at);
  const auto rf = split(rf_line, ',');
  REQUIRE(rf.size() == 3);
  double single = 0, global = 0;
  REQUIRE(parse_real(rf[1], single));
  REQUIRE(parse_real(rf[2], global));
  CHECK(single == doctest::Approx(0.175).epsilon(1e-12));
  CHECK(global == doctest::Approx(1.1 / 6).epsilon(1e-12));

  CHECK(cli("analyze").code == 2);
  spit(tmp.path / "bad.csv", "step,arm,batch_min_loss,prev_best,best_loss,reward\n1,RF,1,2,1,0.5\n2,RF,oops,2,1,0\n");
  r = cli("analyze " + (tmp.path / "bad.csv").string() + " --output " + (tmp.path / "x.csv").string());
  CHECK(r.code == 3);
  CHECK(r.output.find("line 3") != std::string::npos);
}

TEST_CASE("export-moments") {
  TempDir tmp("export");
  const auto out = tmp.path / "run";
  const std::string text = R"({
    "model": {"name": "bh4"},
    "space": [{"name": "g2", "lower": 0, "upper": 2}, {"name": "b2", "lower": -0.5, "upper": 0.5}],
    "data": {"source": "pseudo_true", "true_params": {"g2": 1.1, "b2": 0.2}, "seed": 3},
    "samplers": {"pool_size": 256, "forest": {"n_trees": 20}},
    "budget": {"batch_size": 3, "ensemble_size": 3, "n_batches": 3, "n_steps": 200, "burn_in": 50},
    "output": {"dir": ")" + out.string() + R"("}
  })";
  spit(tmp.path / "bh.json", text);
  REQUIRE(cli("calibrate --quiet " + (tmp.path / "bh.json").string()).code == 0);

  CHECK(cli("export-moments " + (out / "real.csv").string() + " " + (tmp.path / "nowhere").string()).code == 2);
  const auto r = cli("export-moments " + (out / "real.csv").string() + " " + out.string());
  CHECK(r.code == 0);

  // recompute the loss from the exported table alone
  std::istringstream table(slurp(out / "export" / "moments.csv"));
  std::string line;
  std::getline(table, line);
  CHECK(line == "dimension,moment,real,sim_0,sim_1,sim_2,sim_mean,weight");
  std::vector<double> member(3, 0.0);
  int rows = 0;
  while (std::getline(table, line)) {
    ++rows;
    const auto f = split(line, ',');
    REQUIRE(f.size() == 8);
    double real = 0, w = 0;
    REQUIRE(parse_real(f[2], real));
    REQUIRE(parse_real(f[7], w));
    for (int e = 0; e < 3; ++e) {
      double s = 0;
      REQUIRE(parse_real(f[3 + e], s));
      member[e] += w * (real - s) * (real - s);
    }
  }
  CHECK(rows == 18);
  const double recomputed = (member[0] + member[1] + member[2]) / 3.0;
  const auto cp = checkpoint_load(out / kCheckpointFile);
  CHECK(std::abs(recomputed - cp.state.best().loss) <= 1e-9 * std::max(1.0, cp.state.best().loss));
  CHECK(fs::exists(out / "export" / "real_series.csv"));
  CHECK(fs::exists(out / "export" / "simulated_series_2.csv"));

  CHECK(cli("export-moments " + (out / "real.csv").string() + " " + out.string()).code == 2);
  CHECK(cli("export-moments --force " + (out / "real.csv").string() + " " + out.string()).code == 0);
}
