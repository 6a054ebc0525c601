#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advaudio/attack.hpp"
#include "advaudio/defenses.hpp"

namespace advaudio {

// One attack job: a carrier file, its true label and, for targeted runs, the
// target phrase.
struct GoalSpec {
  std::filesystem::path carrier;
  std::string original;
  std::string target;
};

// Flat "key = value" document; '#' starts a comment, repeated keys append
// for the list-valued ones (goal, defense). Relative paths resolve against
// the file's directory.
//
//   oracle          surrogate | remote
//   model           surrogate model JSON
//   remote          remote endpoint profile JSON
//   bank            phoneme bank directory
//   bank_per_target true: bank/<target label>/ is used for each targeted goal
//   mode            targeted | untargeted
//   goal            <carrier.wav>|<original>[|<target>]
//   repeats         runs per goal, seeds seed + run index
//   seed            global seed
//   defense         defense spec, e.g. ds:8000
//   delays_ms       comma separated mismatch delays for the sweep
//   price_per_minute
//   output          output directory
//   jobs            concurrent attack runs
//   attack.<key>    any AttackConfig field (K, Q, sigma, eta, ..., query_budget)
struct ExperimentConfig {
  std::string oracle = "surrogate";
  std::filesystem::path model;
  std::filesystem::path remote;
  std::filesystem::path bank;
  bool bank_per_target = false;  // bank/<target>/ holds one bank per target label
  AttackGoal::Mode mode = AttackGoal::Mode::kUntargeted;
  std::vector<GoalSpec> goals;
  int repeats = 1;
  std::uint64_t seed = 0;
  std::vector<DefenseSpec> defenses;
  std::vector<double> delays_ms;
  double price_per_minute = 0.024;
  std::filesystem::path output = "out";
  int jobs = 1;
  AttackConfig attack;

  // Applies one key; throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value, const std::filesystem::path& base = {});
  static ExperimentConfig parse(const std::string& text, const std::filesystem::path& base = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  // Throws ConfigError for missing files or an empty goal list.
  void validate() const;
};

struct ReportRow {
  std::string command;
  std::string target;
  std::uint64_t seed = 0;
  bool success = false;
  std::uint64_t queries = 0;
  double audio_seconds = 0.0;
  double l2 = 0.0;
  double wall_time_s = 0.0;
};

struct Aggregates {
  std::size_t attempts = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
  std::uint64_t total_queries = 0;
  // Total queries over crafted (successful) AEs; unset when none succeeded.
  std::optional<double> avg_queries;
  std::optional<double> median_queries;  // over successful runs
  std::optional<double> median_l2;       // over successful runs
  double audio_seconds = 0.0;
  double cost = 0.0;

  friend bool operator==(const Aggregates&, const Aggregates&) = default;
};

// Throws ArgumentError on empty input.
Aggregates aggregate(const std::vector<ReportRow>& rows, double price_per_minute);

struct Report {
  std::vector<ReportRow> rows;
  Aggregates aggregates;
  double price_per_minute = 0.024;

  // Wall times are excluded unless asked for, so identical runs serialize
  // identically.
  nlohmann::json to_json(bool with_wall_time = false) const;
  // Throws FormatError when the stored aggregates do not match the rows.
  static Report from_json(const nlohmann::json& j);
  std::string to_csv() const;
};

struct SweepRow {
  double delay_ms = 0.0;
  std::size_t n = 0;
  std::size_t holds = 0;
  double success_rate = 0.0;
};

// Plot data as tab-separated files with a header line.
// (delay_ms, success_rate)
void emit_plot_data(const std::vector<SweepRow>& sweep, const std::filesystem::path& path);
// (queries, l2)
void emit_plot_data(const AttackResult& result, const std::filesystem::path& path);
// (defense, success_rate)
void emit_plot_data(const DefenseReport& report, const std::filesystem::path& path);
// (command, target, success, queries, l2)
void emit_plot_data(const Report& report, const std::filesystem::path& path);

struct RunRecord {
  GoalSpec goal;
  AttackGoal attack_goal;
  std::uint64_t seed = 0;
  AudioClip carrier = AudioClip::silence(1, kCanonicalRate);
  AttackResult result;
  double wall_time_s = 0.0;
};

struct BenchOutcome {
  Report report;
  std::vector<RunRecord> runs;
  std::vector<SweepRow> sweep;
  DefenseReport defenses;
  QueryLedger eval_ledger;  // sweep and defense queries
};

// Phoneme bank to use for a goal.
using BankProvider = std::function<const PhonemeBank&(const AttackGoal&)>;

// Runs every goal `repeats` times against `oracle` (run i seeded with
// seed + i), then the mismatch sweep and the defenses over the successful
// runs. Writes nothing.
BenchOutcome run_benchmark(const ExperimentConfig& config, Oracle& oracle, const BankProvider& banks);

// Writes results/<i>.{json,wav,trace.csv}, results.json (no wall times),
// report.json, report.csv, report.tsv, sweep.tsv, defenses.{json,csv,tsv}.
void write_outcome(const BenchOutcome& outcome, const std::filesystem::path& dir);

// Success rate of each delay over the given runs, using fresh queries.
std::vector<SweepRow> sweep_success(OracleSession& session, const std::vector<RunRecord>& runs,
                                    const std::vector<double>& delays_ms);

}  // namespace advaudio
