#include "advaudio/bench.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>

#include "advaudio/errors.hpp"
#include "advaudio/wav.hpp"

namespace advaudio {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep)) out.push_back(trim(part));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& v) {
  const std::filesystem::path p(v);
  return p.is_absolute() || base.empty() ? p : base / p;
}

std::optional<double> median(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string number(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

nlohmann::json run_extra(const RunRecord& r) {
  return {{"carrier", r.goal.carrier.string()},
          {"original", r.attack_goal.original},
          {"target", r.attack_goal.target},
          {"mode", r.attack_goal.is_targeted() ? "targeted" : "untargeted"},
          {"count_rejection_as_success", r.attack_goal.count_rejection_as_success},
          {"seed", r.seed}};
}

}  // namespace

void ExperimentConfig::set(const std::string& raw_key, const std::string& raw_value,
                           const std::filesystem::path& base) {
  const std::string key = trim(raw_key);
  const std::string value = trim(raw_value);
  if (key.rfind("attack.", 0) == 0) {
    const std::string field = key.substr(7);
    nlohmann::json j = attack.to_json();
    if (!j.contains(field)) throw ConfigError("unknown attack setting '" + field + "'");
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(value);
    } catch (const nlohmann::json::parse_error&) {
      throw ConfigError("bad value for '" + key + "': '" + value + "'");
    }
    j[field] = parsed;
    try {
      attack = AttackConfig::from_json(j);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("bad value for '" + key + "': '" + value + "'");
    }
  } else if (key == "oracle") {
    if (value != "surrogate" && value != "remote") throw ConfigError("oracle must be surrogate or remote");
    oracle = value;
  } else if (key == "model") {
    model = resolve(base, value);
  } else if (key == "remote") {
    remote = resolve(base, value);
  } else if (key == "bank") {
    bank = resolve(base, value);
  } else if (key == "bank_per_target") {
    bank_per_target = to_bool(key, value);
  } else if (key == "mode") {
    if (value == "targeted") {
      mode = AttackGoal::Mode::kTargeted;
    } else if (value == "untargeted") {
      mode = AttackGoal::Mode::kUntargeted;
    } else {
      throw ConfigError("mode must be targeted or untargeted");
    }
  } else if (key == "goal") {
    const auto parts = split(value, '|');
    if (parts.size() < 2 || parts.size() > 3 || parts[0].empty() || parts[1].empty()) {
      throw ConfigError("goal must be <carrier>|<original>[|<target>], got '" + value + "'");
    }
    goals.push_back({resolve(base, parts[0]), parts[1], parts.size() == 3 ? parts[2] : std::string()});
  } else if (key == "repeats") {
    repeats = static_cast<int>(to_int(key, value));
  } else if (key == "seed") {
    const long long s = to_int(key, value);
    if (s < 0) throw ConfigError("seed must be >= 0");
    seed = static_cast<std::uint64_t>(s);
  } else if (key == "defense") {
    defenses.push_back(DefenseSpec::parse(value));
  } else if (key == "delays_ms") {
    delays_ms.clear();
    for (const auto& d : split(value, ',')) delays_ms.push_back(to_double(key, d));
  } else if (key == "price_per_minute") {
    price_per_minute = to_double(key, value);
  } else if (key == "output") {
    output = resolve(base, value);
  } else if (key == "jobs") {
    jobs = static_cast<int>(to_int(key, value));
  } else {
    throw ConfigError("unknown setting '" + key + "'");
  }
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::filesystem::path& base) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    c.set(line.substr(0, eq), line.substr(eq + 1), base);
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.parent_path());
}

void ExperimentConfig::validate() const {
  attack.validate();
  if (goals.empty()) throw ConfigError("no goals given");
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (price_per_minute < 0.0) throw ConfigError("price_per_minute must be >= 0");
  for (const auto& g : goals) {
    if (!std::filesystem::exists(g.carrier)) throw ConfigError("carrier not found: " + g.carrier.string());
    if (mode == AttackGoal::Mode::kTargeted && g.target.empty()) {
      throw ConfigError("targeted goal for " + g.carrier.string() + " has no target");
    }
  }
  if (oracle == "surrogate" && !std::filesystem::exists(model)) {
    throw ConfigError("surrogate model not found: " + model.string());
  }
  if (oracle == "remote" && !std::filesystem::exists(remote)) {
    throw ConfigError("remote profile not found: " + remote.string());
  }
  if (!std::filesystem::is_directory(bank)) throw ConfigError("phoneme bank not found: " + bank.string());
}

Aggregates aggregate(const std::vector<ReportRow>& rows, double price_per_minute) {
  if (rows.empty()) throw ArgumentError("cannot aggregate an empty report");
  Aggregates a;
  a.attempts = rows.size();
  std::vector<double> q, l2;
  QueryLedger total;
  for (const auto& r : rows) {
    a.total_queries += r.queries;
    total.total_queries += r.queries;
    total.total_audio_seconds += r.audio_seconds;
    if (r.success) {
      ++a.successes;
      q.push_back(static_cast<double>(r.queries));
      l2.push_back(r.l2);
    }
  }
  a.success_rate = static_cast<double>(a.successes) / static_cast<double>(a.attempts);
  if (a.successes > 0) a.avg_queries = static_cast<double>(a.total_queries) / static_cast<double>(a.successes);
  a.median_queries = median(q);
  a.median_l2 = median(l2);
  a.audio_seconds = total.total_audio_seconds;
  a.cost = estimate_cost(total, price_per_minute);
  return a;
}

nlohmann::json Report::to_json(bool with_wall_time) const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = {{"command", r.command}, {"target", r.target},
                        {"seed", r.seed},       {"success", r.success},
                        {"queries", r.queries}, {"audio_seconds", r.audio_seconds},
                        {"l2", r.l2}};
    if (with_wall_time) j["wall_time_s"] = r.wall_time_s;
    rows_json.push_back(std::move(j));
  }
  const Aggregates& a = aggregates;
  return {{"price_per_minute", price_per_minute},
          {"rows", rows_json},
          {"aggregates",
           {{"attempts", a.attempts},
            {"successes", a.successes},
            {"success_rate", a.success_rate},
            {"total_queries", a.total_queries},
            {"avg_queries", opt(a.avg_queries)},
            {"median_queries", opt(a.median_queries)},
            {"median_l2", opt(a.median_l2)},
            {"audio_seconds", a.audio_seconds},
            {"cost", a.cost}}}};
}

Report Report::from_json(const nlohmann::json& j) {
  Report r;
  Aggregates stored;
  try {
    r.price_per_minute = j.at("price_per_minute").get<double>();
    for (const auto& row : j.at("rows")) {
      ReportRow x;
      x.command = row.at("command").get<std::string>();
      x.target = row.at("target").get<std::string>();
      x.seed = row.at("seed").get<std::uint64_t>();
      x.success = row.at("success").get<bool>();
      x.queries = row.at("queries").get<std::uint64_t>();
      x.audio_seconds = row.at("audio_seconds").get<double>();
      x.l2 = row.at("l2").get<double>();
      x.wall_time_s = row.value("wall_time_s", 0.0);
      r.rows.push_back(std::move(x));
    }
    const auto& a = j.at("aggregates");
    stored.attempts = a.at("attempts").get<std::size_t>();
    stored.successes = a.at("successes").get<std::size_t>();
    stored.success_rate = a.at("success_rate").get<double>();
    stored.total_queries = a.at("total_queries").get<std::uint64_t>();
    stored.avg_queries = opt_from(a.at("avg_queries"));
    stored.median_queries = opt_from(a.at("median_queries"));
    stored.median_l2 = opt_from(a.at("median_l2"));
    stored.audio_seconds = a.at("audio_seconds").get<double>();
    stored.cost = a.at("cost").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
  if (r.rows.empty()) throw FormatError("report has no rows");
  r.aggregates = aggregate(r.rows, r.price_per_minute);
  if (!(r.aggregates == stored)) throw FormatError("report aggregates do not match its rows");
  return r;
}

std::string Report::to_csv() const {
  std::ostringstream os;
  os << "command,target,seed,success,queries,audio_seconds,l2,wall_time_s\n";
  for (const auto& r : rows) {
    os << r.command << ',' << r.target << ',' << r.seed << ',' << (r.success ? 1 : 0) << ',' << r.queries << ','
       << number(r.audio_seconds) << ',' << number(r.l2) << ',' << number(r.wall_time_s) << '\n';
  }
  return os.str();
}

void emit_plot_data(const std::vector<SweepRow>& sweep, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "delay_ms\tsuccess_rate\n";
  for (const auto& s : sweep) os << number(s.delay_ms) << '\t' << number(s.success_rate) << '\n';
  write_text(path, os.str());
}

void emit_plot_data(const AttackResult& result, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "queries\tl2\n";
  for (const auto& p : result.trace) os << p.queries << '\t' << number(p.l2) << '\n';
  write_text(path, os.str());
}

void emit_plot_data(const DefenseReport& report, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "defense\tsuccess_rate\n";
  for (const auto& r : report.rows) os << r.spec << '\t' << number(r.success_after) << '\n';
  write_text(path, os.str());
}

void emit_plot_data(const Report& report, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "command\ttarget\tsuccess\tqueries\tl2\n";
  for (const auto& r : report.rows) {
    os << r.command << '\t' << r.target << '\t' << (r.success ? 1 : 0) << '\t' << r.queries << '\t' << number(r.l2)
       << '\n';
  }
  write_text(path, os.str());
}

std::vector<SweepRow> sweep_success(OracleSession& session, const std::vector<RunRecord>& runs,
                                    const std::vector<double>& delays_ms) {
  std::vector<SweepRow> rows;
  for (double d : delays_ms) rows.push_back({d, 0, 0, 0.0});
  for (const auto& run : runs) {
    if (!run.result.success) continue;
    const auto points = mismatch_sweep(session, run.carrier, run.result, run.attack_goal, delays_ms);
    for (std::size_t i = 0; i < points.size(); ++i) {
      ++rows[i].n;
      if (points[i].holds) ++rows[i].holds;
    }
  }
  for (auto& r : rows) r.success_rate = r.n == 0 ? 0.0 : static_cast<double>(r.holds) / static_cast<double>(r.n);
  return rows;
}

BenchOutcome run_benchmark(const ExperimentConfig& config, Oracle& oracle, const BankProvider& banks) {
  config.attack.validate();
  if (config.goals.empty()) throw ConfigError("no goals given");

  BenchOutcome out;
  for (const auto& g : config.goals) {
    const AudioClip carrier = load_wav(g.carrier);
    for (int rep = 0; rep < config.repeats; ++rep) {
      RunRecord r;
      r.goal = g;
      r.attack_goal = config.mode == AttackGoal::Mode::kTargeted
                          ? AttackGoal::targeted(g.original, g.target)
                          : AttackGoal::untargeted(g.original, config.attack.count_rejection_as_success);
      r.seed = config.seed + out.runs.size();
      r.carrier = carrier;
      out.runs.push_back(std::move(r));
    }
  }

  const auto run_one = [&](RunRecord& r) {
    OracleSession session(oracle);
    Rng rng(r.seed);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      r.result = craft(session, r.carrier, r.attack_goal, banks(r.attack_goal), config.attack, rng);
    } catch (const InitFailed&) {
      r.result = AttackResult{};
      r.result.perturbation = {AudioClip::silence(r.carrier.size(), r.carrier.sample_rate()), 0};
      r.result.final_transcript = Transcript::from_raw(r.attack_goal.original);
      r.result.ledger = session.ledger();
    }
    r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  const auto jobs = static_cast<std::size_t>(std::max(config.jobs, 1));
  for (std::size_t start = 0; start < out.runs.size(); start += jobs) {
    const std::size_t end = std::min(out.runs.size(), start + jobs);
    if (end - start == 1) {
      run_one(out.runs[start]);
      continue;
    }
    std::vector<std::future<void>> pending;
    for (std::size_t i = start; i < end; ++i) {
      pending.push_back(std::async(std::launch::async, [&, i] { run_one(out.runs[i]); }));
    }
    for (auto& f : pending) f.get();
  }

  for (const auto& r : out.runs) {
    out.report.rows.push_back({r.attack_goal.original, r.attack_goal.target, r.seed, r.result.success,
                               r.result.ledger.total_queries, r.result.ledger.total_audio_seconds, r.result.l2,
                               r.wall_time_s});
  }
  out.report.price_per_minute = config.price_per_minute;
  out.report.aggregates = aggregate(out.report.rows, config.price_per_minute);

  OracleSession eval(oracle, {.cache = false, .budget = std::nullopt});
  if (!config.delays_ms.empty()) out.sweep = sweep_success(eval, out.runs, config.delays_ms);

  if (!config.defenses.empty()) {
    std::vector<DefenseCase> cases;
    for (const auto& r : out.runs) {
      if (r.result.success) cases.push_back({r.carrier, r.attack_goal, r.result});
    }
    std::vector<DefenseSpec> specs{DefenseSpec::none()};
    for (const auto& s : config.defenses) {
      if (!(s == DefenseSpec::none())) specs.push_back(s);
    }
    for (const auto& s : specs) out.defenses.rows.push_back(evaluate_defense(eval, cases, s));
  }
  out.eval_ledger = eval.ledger();
  return out;
}

void write_outcome(const BenchOutcome& outcome, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "results");
  nlohmann::json runs = nlohmann::json::array();
  for (std::size_t i = 0; i < outcome.runs.size(); ++i) {
    const auto& r = outcome.runs[i];
    std::ostringstream stem;
    stem << std::setw(4) << std::setfill('0') << i;
    const nlohmann::json extra = run_extra(r);
    r.result.save(dir / "results" / stem.str(), extra);
    nlohmann::json j = r.result.to_json();
    for (const auto& [k, v] : extra.items()) j[k] = v;
    runs.push_back(std::move(j));
  }
  nlohmann::json sweep = nlohmann::json::array();
  for (const auto& s : outcome.sweep) {
    sweep.push_back({{"delay_ms", s.delay_ms}, {"n", s.n}, {"holds", s.holds}, {"success_rate", s.success_rate}});
  }
  const nlohmann::json results = {{"runs", runs},
                                  {"report", outcome.report.to_json(false)},
                                  {"sweep", sweep},
                                  {"defenses", outcome.defenses.to_json()},
                                  {"eval_ledger", outcome.eval_ledger.to_json()}};
  write_text(dir / "results.json", results.dump(1) + "\n");
  write_text(dir / "report.json", outcome.report.to_json(true).dump(1) + "\n");
  write_text(dir / "report.csv", outcome.report.to_csv());
  emit_plot_data(outcome.report, dir / "report.tsv");
  if (!outcome.sweep.empty()) emit_plot_data(outcome.sweep, dir / "sweep.tsv");
  if (!outcome.defenses.rows.empty()) {
    outcome.defenses.save(dir / "defenses");
    emit_plot_data(outcome.defenses, dir / "defenses.tsv");
  }
}

}  // namespace advaudio
