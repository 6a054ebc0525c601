#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "advaudio/bench.hpp"
#include "advaudio/errors.hpp"
#include "advaudio/wav.hpp"
#include "support.hpp"

using namespace advaudio;
using namespace advaudio::testing;
namespace fs = std::filesystem;

namespace {

ReportRow row(bool success, std::uint64_t queries, double l2 = 9.0) {
  ReportRow r;
  r.command = "stop";
  r.success = success;
  r.queries = queries;
  r.audio_seconds = static_cast<double>(queries);
  r.l2 = l2;
  return r;
}

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "advaudio_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("aggregates") {
  const Aggregates a = aggregate({row(true, 300, 8.0), row(true, 302, 9.0), row(false, 400)}, 0.024);
  CHECK(a.attempts == 3);
  CHECK(a.successes == 2);
  CHECK(a.success_rate == doctest::Approx(2.0 / 3.0));
  CHECK(a.total_queries == 1002);
  CHECK(*a.avg_queries == doctest::Approx(501.0));
  CHECK(*a.median_queries == doctest::Approx(301.0));
  CHECK(*a.median_l2 == doctest::Approx(8.5));
  CHECK(a.audio_seconds == doctest::Approx(1002.0));
  CHECK(a.cost == doctest::Approx(1002.0 / 60.0 * 0.024));

  const Aggregates none = aggregate({row(false, 2000), row(false, 2000)}, 0.024);
  CHECK(none.successes == 0);
  CHECK_FALSE(none.avg_queries.has_value());
  CHECK_FALSE(none.median_queries.has_value());

  const Aggregates single = aggregate({row(true, 301)}, 0.0);
  CHECK(*single.avg_queries == 301.0);
  CHECK(*single.median_queries == 301.0);
  CHECK(single.cost == 0.0);

  CHECK_THROWS_AS(aggregate({}, 0.024), ArgumentError);
}

TEST_CASE("report json round trip and tamper detection") {
  Report r;
  r.rows = {row(true, 300), row(false, 2000)};
  r.rows[0].wall_time_s = 1.5;
  r.aggregates = aggregate(r.rows, r.price_per_minute);
  const Report back = Report::from_json(r.to_json(true));
  CHECK(back.aggregates == r.aggregates);
  CHECK(back.rows[0].wall_time_s == 1.5);
  CHECK_FALSE(r.to_json(false)["rows"][0].contains("wall_time_s"));

  auto tampered = r.to_json();
  tampered["aggregates"]["successes"] = 2;
  CHECK_THROWS_AS(Report::from_json(tampered), FormatError);
  auto broken = r.to_json();
  broken.erase("rows");
  CHECK_THROWS_AS(Report::from_json(broken), FormatError);

  const std::string csv = r.to_csv();
  CHECK(csv.rfind("command,target,seed,success,queries,audio_seconds,l2,wall_time_s\n", 0) == 0);
}

TEST_CASE("experiment config parsing") {
  const std::string text =
      "# comment line\n"
      "oracle = surrogate\n"
      "model = model.json   # trailing comment\n"
      "bank = bank\n"
      "mode = targeted\n"
      "goal = a.wav|stop|go\n"
      "goal = /abs/b.wav|yes|no\n"
      "repeats = 3\n"
      "seed = 17\n"
      "defense = ds:8000\n"
      "defense = q:512\n"
      "delays_ms = 0, 100,200\n"
      "price_per_minute = 0.006\n"
      "jobs = 2\n"
      "attack.Q = 12\n"
      "attack.query_budget = 900\n"
      "attack.weak_sync = true\n";
  const ExperimentConfig c = ExperimentConfig::parse(text, "/base");
  CHECK(c.model == fs::path("/base/model.json"));
  CHECK(c.bank == fs::path("/base/bank"));
  CHECK(c.mode == AttackGoal::Mode::kTargeted);
  REQUIRE(c.goals.size() == 2);
  CHECK(c.goals[0].carrier == fs::path("/base/a.wav"));
  CHECK(c.goals[0].target == "go");
  CHECK(c.goals[1].carrier == fs::path("/abs/b.wav"));
  CHECK(c.repeats == 3);
  CHECK(c.seed == 17);
  CHECK(c.defenses == std::vector<DefenseSpec>{DefenseSpec::downsample(8000), DefenseSpec::quantize(512)});
  CHECK(c.delays_ms == std::vector<double>{0.0, 100.0, 200.0});
  CHECK(c.price_per_minute == 0.006);
  CHECK(c.jobs == 2);
  CHECK(c.attack.Q == 12);
  CHECK(c.attack.query_budget == 900);
  CHECK(c.attack.weak_sync);

  ExperimentConfig o = c;
  o.set("attack.Q", "40");
  o.set("seed", "1");
  CHECK(o.attack.Q == 40);
  CHECK(o.seed == 1);

  for (const char* bad : {"colour = red", "mode = sideways", "goal = onlyone", "repeats = many", "seed = -1",
                          "attack.nope = 1", "attack.Q = [", "defense = mp3", "no equals sign"}) {
    CHECK_THROWS_AS(ExperimentConfig::parse(bad), ConfigError);
  }
  CHECK_THROWS_AS(ExperimentConfig{}.validate(), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/exp.conf"), IoError);
}

TEST_CASE("plot data files") {
  const auto dir = temp_dir("plots");
  std::vector<SweepRow> sweep;
  for (double d : {0.0, 100.0, 200.0, 300.0, 400.0, 500.0}) sweep.push_back({d, 10, 5, 0.5});
  emit_plot_data(sweep, dir / "sweep.tsv");
  CHECK(slurp(dir / "sweep.tsv").rfind("delay_ms\tsuccess_rate\n", 0) == 0);
  CHECK(line_count(dir / "sweep.tsv") == 7);

  AttackResult r;
  r.trace = {{1, 30.0, 0.0}, {40, 20.0, 0.0}, {90, 9.5, 0.0}};
  emit_plot_data(r, dir / "trace.tsv");
  CHECK(slurp(dir / "trace.tsv").rfind("queries\tl2\n", 0) == 0);
  CHECK(line_count(dir / "trace.tsv") == 4);

  DefenseReport d{{{"none", 3, 1.0, 1.0, 1.0}, {"ds:8000", 3, 1.0, 0.0, 0.0}}};
  emit_plot_data(d, dir / "def.tsv");
  CHECK(slurp(dir / "def.tsv") == "defense\tsuccess_rate\nnone\t1\nds:8000\t0\n");

  Report rep;
  rep.rows = {row(true, 300)};
  rep.aggregates = aggregate(rep.rows, 0.024);
  emit_plot_data(rep, dir / "report.tsv");
  CHECK(slurp(dir / "report.tsv") == "command\ttarget\tsuccess\tqueries\tl2\nstop\t\t1\t300\t9\n");
}

TEST_CASE("benchmark runs are reproducible") {
  LinearProblem p = make_linear_problem(12);
  const auto dir = temp_dir("bench");
  save_wav(p.x0, dir / "carrier.wav");
  std::vector<float> w(p.w_hat.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(2.0 * p.w_hat[i]);
  const PhonemeBank bank({{AudioClip(w, kCanonicalRate), "w", 50.0}}, 0);

  ExperimentConfig c = ExperimentConfig::parse(
      "goal = carrier.wav|a\n"
      "repeats = 3\n"
      "seed = 5\n"
      "delays_ms = 0,100\n"
      "defense = q:256\n"
      "attack.query_budget = 300\n"
      "attack.epsilon_l2 = 1.0\n",
      dir);
  const BankProvider banks = [&](const AttackGoal&) -> const PhonemeBank& { return bank; };

  const BenchOutcome first = run_benchmark(c, p.oracle, banks);
  REQUIRE(first.runs.size() == 3);
  CHECK(first.runs[2].seed == 7);
  CHECK(first.report.aggregates.attempts == 3);
  REQUIRE(first.sweep.size() == 2);
  CHECK(first.sweep[1].success_rate == 0.0);
  REQUIRE(first.defenses.rows.size() == 2);
  CHECK(first.defenses.rows[0].spec == "none");
  write_outcome(first, dir / "one");

  c.jobs = 3;
  const BenchOutcome second = run_benchmark(c, p.oracle, banks);
  write_outcome(second, dir / "two");
  CHECK(slurp(dir / "one" / "results.json") == slurp(dir / "two" / "results.json"));
  CHECK(fs::exists(dir / "one" / "results" / "0002.json"));
  CHECK(fs::exists(dir / "one" / "defenses.csv"));
  CHECK(Report::from_json(nlohmann::json::parse(slurp(dir / "one" / "report.json"))).rows.size() == 3);
}
