#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "advaudio/attack.hpp"
#include "advaudio/bench.hpp"
#include "advaudio/defenses.hpp"
#include "advaudio/errors.hpp"
#include "advaudio/phoneme_bank.hpp"
#include "advaudio/remote_oracle.hpp"
#include "advaudio/surrogate.hpp"
#include "advaudio/synth.hpp"
#include "advaudio/wav.hpp"

namespace fs = std::filesystem;
using namespace advaudio;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

std::string or_na(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << *v;
  return os.str();
}

// Thrown for bad input the user can fix from the command line.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// A surrogate model file or a remote endpoint profile.
std::unique_ptr<Oracle> open_oracle(const fs::path& path) {
  const auto j = read_json(path);
  if (j.value("format", std::string()) == "advaudio-surrogate") {
    return std::make_unique<SurrogateModel>(SurrogateModel::from_json(j));
  }
  if (j.contains("url")) return std::make_unique<RemoteOracle>(RemoteConfig::from_json(j));
  throw UsageError(path.string() + " is neither a surrogate model nor a remote profile");
}

std::vector<double> parse_delays(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      out.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw UsageError("bad delay '" + part + "'");
    }
  }
  if (out.empty()) throw UsageError("no delays given");
  return out;
}

void apply_settings(ExperimentConfig& cfg, const std::vector<std::string>& settings) {
  for (const auto& s : settings) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
}

// An attack result JSON written by `attack` or `bench`, with its carrier.
RunRecord load_run(const fs::path& path) {
  const auto j = read_json(path);
  if (!j.contains("carrier") || !j.contains("original")) {
    throw UsageError(path.string() + " carries no carrier/original fields");
  }
  RunRecord r;
  r.goal.carrier = j.at("carrier").get<std::string>();
  r.goal.original = j.at("original").get<std::string>();
  r.goal.target = j.value("target", std::string());
  r.attack_goal = j.value("mode", std::string("untargeted")) == "targeted"
                      ? AttackGoal::targeted(r.goal.original, r.goal.target)
                      : AttackGoal::untargeted(r.goal.original, j.value("count_rejection_as_success", false));
  r.seed = j.value("seed", std::uint64_t{0});
  r.carrier = load_wav(r.goal.carrier);
  r.result = AttackResult::load(path);
  return r;
}

bool is_result_json(const fs::path& path) {
  if (path.extension() != ".json") return false;
  try {
    const auto j = read_json(path);
    return j.is_object() && j.contains("ledger") && j.contains("original") && j.contains("success");
  } catch (const Error&) {
    return false;
  }
}

int cmd_corpus_synth(const fs::path& out, int per_word, std::uint64_t seed, const std::vector<std::string>& words) {
  CorpusSpec spec;
  spec.utterances_per_word = per_word;
  spec.seed = seed;
  spec.words = words;
  const auto corpus = synthesize_corpus(spec);
  write_corpus(corpus, out);
  std::cout << "wrote " << corpus.size() << " utterances to " << out.string() << "\n";
  return 0;
}

int cmd_surrogate_train(const fs::path& corpus_dir, const fs::path& out, std::uint64_t seed) {
  SurrogateConfig cfg;
  cfg.seed = seed;
  const auto corpus = load_labeled_corpus(corpus_dir);
  const SurrogateModel model = train_surrogate(corpus, cfg);
  model.save(out);
  const auto& c = model.calibration();
  std::cout << "labels " << model.labels().size() << ", threshold " << model.threshold() << "\n"
            << "calibration: clean accepted " << c.clean_accept_rate << ", clean accuracy " << c.clean_accuracy
            << ", mixtures rejected " << c.mixture_reject_rate << (c.feasible ? "" : " (targets not met)") << "\n";
  return 0;
}

int cmd_bank_build(const fs::path& corpus_dir, const fs::path& out, BankOptions opts,
                   const std::vector<std::string>& labels, bool per_label, const std::optional<fs::path>& manifest) {
  if (manifest) {
    if (per_label || !labels.empty()) throw UsageError("--manifest cannot be combined with --label or --per-label");
    const PhonemeBank bank = build_bank(corpus_dir, opts, manifest);
    bank.save(out);
    std::cout << "bank of " << bank.size() << " clips in " << out.string() << "\n";
    return 0;
  }
  const auto corpus = load_labeled_corpus(corpus_dir);
  const auto pick = [&](const std::string& label) {
    std::vector<LabeledClip> sub;
    for (const auto& c : corpus) {
      if (c.label == label) sub.push_back(c);
    }
    return sub;
  };
  if (per_label) {
    std::vector<std::string> all = labels;
    if (all.empty()) {
      for (const auto& c : corpus) {
        if (std::find(all.begin(), all.end(), c.label) == all.end()) all.push_back(c.label);
      }
    }
    for (const auto& label : all) {
      const PhonemeBank bank = build_bank(pick(label), opts);
      bank.save(out / label);
      std::cout << label << ": " << bank.size() << " clips\n";
    }
    return 0;
  }
  std::vector<LabeledClip> sources;
  if (labels.empty()) {
    sources = corpus;
  } else {
    for (const auto& l : labels) {
      const auto sub = pick(l);
      sources.insert(sources.end(), sub.begin(), sub.end());
    }
  }
  const PhonemeBank bank = build_bank(sources, opts);
  bank.save(out);
  std::cout << "bank of " << bank.size() << " clips in " << out.string() << "\n";
  return 0;
}

struct AttackArgs {
  fs::path oracle;
  fs::path carrier;
  fs::path bank;
  fs::path out = "attack";
  std::string mode = "untargeted";
  std::string original;
  std::string target;
  std::optional<std::uint64_t> budget;
  std::uint64_t seed = 0;
  std::optional<fs::path> config;
  std::vector<std::string> settings;
};

int cmd_attack(const AttackArgs& a) {
  ExperimentConfig cfg = a.config ? ExperimentConfig::load(*a.config) : ExperimentConfig{};
  apply_settings(cfg, a.settings);
  if (a.budget) cfg.attack.query_budget = *a.budget;
  cfg.attack.validate();
  const auto oracle = open_oracle(a.oracle);
  const AudioClip carrier = load_wav(a.carrier);
  OracleSession session(*oracle);

  std::string original = a.original;
  if (original.empty()) {
    const Transcript t = session.cached_query(carrier, Phase::kInit);
    if (t.is_rejected()) throw BadCarrier("the oracle rejects the carrier; pass --original");
    original = t.text();
  }
  AttackGoal goal;
  if (a.mode == "targeted") {
    if (a.target.empty()) throw UsageError("targeted mode needs --target");
    goal = AttackGoal::targeted(original, a.target);
  } else if (a.mode == "untargeted") {
    goal = AttackGoal::untargeted(original, cfg.attack.count_rejection_as_success);
  } else {
    throw UsageError("--mode must be targeted or untargeted");
  }

  const PhonemeBank bank = PhonemeBank::load(a.bank);
  Rng rng(a.seed);
  const AttackResult r = craft(session, carrier, goal, bank, cfg.attack, rng);
  const nlohmann::json extra = {{"carrier", a.carrier.string()},
                                {"original", original},
                                {"target", goal.target},
                                {"mode", a.mode},
                                {"count_rejection_as_success", goal.count_rejection_as_success},
                                {"seed", a.seed},
                                {"config", cfg.attack.to_json()}};
  r.save(a.out, extra);
  std::cout << (r.success ? "success" : "failure") << ": " << r.final_transcript.to_string() << ", l2 " << r.l2
            << ", queries " << r.ledger.total_queries << " -> " << a.out.string() << ".json\n";
  return 0;
}

int cmd_sweep(const fs::path& oracle_path, const std::vector<fs::path>& aes, const std::string& delays,
              const fs::path& out) {
  const auto oracle = open_oracle(oracle_path);
  std::vector<RunRecord> runs;
  for (const auto& p : aes) runs.push_back(load_run(p));
  OracleSession session(*oracle, {.cache = false, .budget = std::nullopt});
  const auto rows = sweep_success(session, runs, parse_delays(delays));
  emit_plot_data(rows, out);
  for (const auto& r : rows) std::cout << r.delay_ms << " ms: " << r.holds << "/" << r.n << "\n";
  return 0;
}

int cmd_defend(const fs::path& oracle_path, const std::vector<fs::path>& aes, const std::vector<std::string>& specs,
               const fs::path& out) {
  const auto oracle = open_oracle(oracle_path);
  std::vector<DefenseSpec> parsed;
  for (const auto& s : specs) parsed.push_back(DefenseSpec::parse(s));
  std::vector<RunRecord> runs;
  for (const auto& p : aes) runs.push_back(load_run(p));
  OracleSession session(*oracle, {.cache = false, .budget = std::nullopt});

  std::ostringstream per_ae;
  per_ae << "ae,spec,success_before,success_after,clean_correct_after\n";
  DefenseReport summary;
  for (const auto& spec : parsed) {
    DefenseRow total;
    total.spec = spec.name();
    total.n = runs.size();
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const DefenseRow row = evaluate_defense(session, {{runs[i].carrier, runs[i].attack_goal, runs[i].result}}, spec);
      per_ae << aes[i].filename().string() << ',' << row.spec << ',' << row.success_before << ','
             << row.success_after << ',' << row.clean_accuracy_after << '\n';
      total.success_before += row.success_before;
      total.success_after += row.success_after;
      total.clean_accuracy_after += row.clean_accuracy_after;
    }
    if (total.n > 0) {
      const double n = static_cast<double>(total.n);
      total.success_before /= n;
      total.success_after /= n;
      total.clean_accuracy_after /= n;
    }
    summary.rows.push_back(total);
  }

  fs::path csv = out;
  csv += ".csv";
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  std::ofstream f(csv, std::ios::trunc);
  if (!f) throw IoError("cannot write " + csv.string());
  f << per_ae.str();
  fs::path stem = out;
  stem += ".summary";
  summary.save(stem);
  fs::path tsv = out;
  tsv += ".tsv";
  emit_plot_data(summary, tsv);
  std::cout << summary.to_csv();
  return 0;
}

int cmd_report(const fs::path& in, const std::optional<fs::path>& out, double price) {
  if (!fs::is_directory(in)) throw UsageError(in.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& dir : {in, in / "results"}) {
    if (!fs::is_directory(dir)) continue;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && is_result_json(e.path())) files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw UsageError("no attack results found in " + in.string());
  Report report;
  report.price_per_minute = price;
  for (const auto& p : files) {
    const auto j = read_json(p);
    const auto r = AttackResult::load(p);
    report.rows.push_back({j.at("original").get<std::string>(), j.value("target", std::string()),
                           j.value("seed", std::uint64_t{0}), r.success, r.ledger.total_queries,
                           r.ledger.total_audio_seconds, r.l2, 0.0});
  }
  report.aggregates = aggregate(report.rows, price);
  const fs::path dir = out.value_or(in);
  fs::create_directories(dir);
  {
    std::ofstream js(dir / "report.json", std::ios::trunc);
    if (!js) throw IoError("cannot write " + (dir / "report.json").string());
    js << report.to_json().dump(1) << '\n';
    std::ofstream cs(dir / "report.csv", std::ios::trunc);
    cs << report.to_csv();
  }
  emit_plot_data(report, dir / "report.tsv");
  const auto& a = report.aggregates;
  std::cout << "runs " << a.attempts << ", successes " << a.successes << ", success rate " << a.success_rate
            << ", avg queries " << or_na(a.avg_queries) << ", median queries "
            << or_na(a.median_queries) << ", cost " << a.cost << "\n";
  return 0;
}

int cmd_bench(const fs::path& config_path, const std::vector<std::string>& settings,
              const std::optional<fs::path>& out) {
  ExperimentConfig cfg = ExperimentConfig::load(config_path);
  apply_settings(cfg, settings);
  if (out) cfg.output = *out;
  cfg.validate();
  const auto oracle = cfg.oracle == "remote" ? open_oracle(cfg.remote) : open_oracle(cfg.model);

  std::map<std::string, PhonemeBank> banks;
  const BankProvider provider = [&](const AttackGoal& goal) -> const PhonemeBank& {
    const std::string key = cfg.bank_per_target && goal.is_targeted() ? goal.target : std::string();
    auto it = banks.find(key);
    if (it == banks.end()) {
      it = banks.emplace(key, PhonemeBank::load(key.empty() ? cfg.bank : cfg.bank / key)).first;
    }
    return it->second;
  };
  // Load every bank up front so concurrent runs only read the map.
  for (const auto& g : cfg.goals) {
    provider(cfg.mode == AttackGoal::Mode::kTargeted ? AttackGoal::targeted(g.original, g.target)
                                                     : AttackGoal::untargeted(g.original));
  }

  const BenchOutcome outcome = run_benchmark(cfg, *oracle, provider);
  write_outcome(outcome, cfg.output);
  const auto& a = outcome.report.aggregates;
  std::cout << "runs " << a.attempts << ", successes " << a.successes << ", median queries "
            << or_na(a.median_queries) << " -> " << cfg.output.string()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decision-based adversarial audio toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  // corpus synth
  auto* corpus = app.add_subcommand("corpus", "Synthetic speech-command corpus");
  corpus->require_subcommand(1);
  auto* synth = corpus->add_subcommand("synth", "Write <out>/<label>/*.wav");
  fs::path synth_out;
  int per_word = 150;
  std::uint64_t synth_seed = 2024;
  std::vector<std::string> synth_words;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--per-word", per_word, "Utterances per word")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "Corpus seed");
  synth->add_option("--words", synth_words, "Subset of the vocabulary")->delimiter(',');

  // surrogate train
  auto* surrogate = app.add_subcommand("surrogate", "Surrogate keyword-spotting oracle");
  surrogate->require_subcommand(1);
  auto* train = surrogate->add_subcommand("train", "Train and calibrate on a labeled corpus");
  fs::path train_corpus, train_out;
  std::uint64_t train_seed = 1;
  train->add_option("--corpus", train_corpus, "Directory of <label>/*.wav")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", train_out, "Model JSON")->required();
  train->add_option("--seed", train_seed, "Split and mixture seed");

  // bank build
  auto* bank = app.add_subcommand("bank", "Phoneme bank");
  bank->require_subcommand(1);
  auto* build = bank->add_subcommand("build", "Cut random short clips from a corpus");
  fs::path bank_corpus, bank_out;
  BankOptions bank_opts;
  std::vector<std::string> bank_labels;
  bool per_label = false;
  std::optional<fs::path> manifest;
  build->add_option("--corpus", bank_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  build->add_option("--out", bank_out, "Bank directory")->required();
  build->add_option("--n", bank_opts.n_clips, "Number of clips")->check(CLI::PositiveNumber);
  build->add_option("--min-ms", bank_opts.min_ms, "Shortest clip");
  build->add_option("--max-ms", bank_opts.max_ms, "Longest clip");
  build->add_option("--threshold-db", bank_opts.threshold_db, "Silence trim threshold");
  build->add_option("--seed", bank_opts.seed, "Bank seed");
  build->add_option("--label", bank_labels, "Only cut from these labels")->delimiter(',');
  build->add_flag("--per-label", per_label, "One bank per label under <out>/<label>");
  build->add_option("--manifest", manifest, "File list, one relative path per line")->check(CLI::ExistingFile);

  // attack
  auto* attack = app.add_subcommand("attack", "Craft one adversarial example");
  AttackArgs aa;
  attack->add_option("--oracle", aa.oracle, "Surrogate model or remote profile JSON")
      ->required()
      ->check(CLI::ExistingFile);
  attack->add_option("--carrier", aa.carrier, "Carrier WAV")->required()->check(CLI::ExistingFile);
  attack->add_option("--bank", aa.bank, "Phoneme bank directory")->required()->check(CLI::ExistingDirectory);
  attack->add_option("--mode", aa.mode, "targeted or untargeted")
      ->check(CLI::IsMember({"targeted", "untargeted"}));
  attack->add_option("--original", aa.original, "True label (queried when omitted)");
  attack->add_option("--target", aa.target, "Target phrase");
  attack->add_option("--budget", aa.budget, "Query budget");
  attack->add_option("--seed", aa.seed, "Run seed");
  attack->add_option("--out", aa.out, "Output stem");
  attack->add_option("--config", aa.config, "Key-value config file")->check(CLI::ExistingFile);
  attack->add_option("--set", aa.settings, "Override a config key, e.g. attack.Q=30");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Success rate under playback delay");
  fs::path sweep_oracle, sweep_out = "sweep.tsv";
  std::vector<fs::path> sweep_aes;
  std::string delays = "0,100,200,300,400";
  sweep->add_option("--oracle", sweep_oracle, "Oracle JSON")->required()->check(CLI::ExistingFile);
  sweep->add_option("--aes", sweep_aes, "Attack result JSON files")->required()->check(CLI::ExistingFile);
  sweep->add_option("--delays", delays, "Comma separated delays in ms");
  sweep->add_option("--out", sweep_out, "TSV output");

  // defend
  auto* defend = app.add_subcommand("defend", "Re-query adversarial examples through input transformations");
  fs::path defend_oracle, defend_out = "defense";
  std::vector<fs::path> defend_aes;
  std::vector<std::string> defend_specs;
  defend->add_option("--oracle", defend_oracle, "Oracle JSON")->required()->check(CLI::ExistingFile);
  defend->add_option("--aes", defend_aes, "Attack result JSON files")->required()->check(CLI::ExistingFile);
  defend->add_option("--spec", defend_specs, "none, ds:<rate>, q:<step>, lp:<hz>[:<order>]")->required();
  defend->add_option("--out", defend_out, "Output stem");

  // report
  auto* report = app.add_subcommand("report", "Aggregate attack results");
  fs::path report_in;
  std::optional<fs::path> report_out;
  double price = 0.024;
  report->add_option("--in", report_in, "Directory of result JSON files")->required();
  report->add_option("--out", report_out, "Output directory (defaults to --in)");
  report->add_option("--price", price, "Price per audio minute")->check(CLI::NonNegativeNumber);

  // bench
  auto* bench = app.add_subcommand("bench", "Run an experiment from a config file");
  fs::path bench_config;
  std::vector<std::string> bench_settings;
  std::optional<fs::path> bench_out;
  bench->add_option("--config", bench_config, "Key-value config file")->required()->check(CLI::ExistingFile);
  bench->add_option("--set", bench_settings, "Override a config key");
  bench->add_option("--out", bench_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (synth->parsed()) return cmd_corpus_synth(synth_out, per_word, synth_seed, synth_words);
    if (train->parsed()) return cmd_surrogate_train(train_corpus, train_out, train_seed);
    if (build->parsed()) return cmd_bank_build(bank_corpus, bank_out, bank_opts, bank_labels, per_label, manifest);
    if (attack->parsed()) return cmd_attack(aa);
    if (sweep->parsed()) return cmd_sweep(sweep_oracle, sweep_aes, delays, sweep_out);
    if (defend->parsed()) return cmd_defend(defend_oracle, defend_aes, defend_specs, defend_out);
    if (report->parsed()) return cmd_report(report_in, report_out, price);
    if (bench->parsed()) return cmd_bench(bench_config, bench_settings, bench_out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  std::cerr << app.help();
  return kUsageError;
}
