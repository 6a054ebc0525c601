// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "advaudio/attack.hpp"
#include "advaudio/bench.hpp"
#include "advaudio/defenses.hpp"
#include "advaudio/distance.hpp"
#include "advaudio/errors.hpp"
#include "advaudio/phoneme_bank.hpp"
#include "advaudio/surrogate.hpp"
#include "advaudio/synth.hpp"
#include "advaudio/wav.hpp"
#include "support.hpp"

using namespace advaudio;
using namespace advaudio::testing;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kLevenshteinSeconds = 1.0;
constexpr double kMixtureReject = 0.90;
constexpr double kCleanCorrect = 0.95;
constexpr int kGradientTrials = 100;
constexpr int kGradientPositive = 90;
constexpr double kUntargetedSuccess = 0.80;
constexpr double kUntargetedMedianQueries = 1000.0;
constexpr double kTargetedSuccess = 0.50;
constexpr double kOptimalityFactor = 2.0;
constexpr int kOptimalSeeds = 8;
constexpr std::uint64_t kFineTuneQueries = 1500;
constexpr double kSweepBand = 0.10;
constexpr double kCutoffDb = -3.0;
constexpr double kCutoffTolDb = 0.5;
constexpr double kStopbandDb = -30.0;
constexpr int kQuantizeClips = 1000;
constexpr std::size_t kMinDefenseAes = 50;
constexpr std::size_t kMinSweepAes = 20;

constexpr std::uint64_t kCorpusSeed = 2024;
constexpr std::uint64_t kFreshSeed = 777;
constexpr int kTrainPerWord = 150;
constexpr int kFreshPerWord = 30;

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("CRITERION %2d %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// ---------------------------------------------------------------------------

void edit_distance_oracle() {
  // Every string of length <= 6 over "abcd", in breadth-first order: the
  // prefix of string i is string (i - 1) / 4 and its last letter (i - 1) % 4.
  const std::string alphabet = "abcd";
  std::vector<std::string> s{""};
  for (std::size_t i = 0; s[i].size() < 6; ++i) {
    for (char c : alphabet) s.push_back(s[i] + c);
  }
  const std::size_t n = s.size();

  // Memoized recursion on (prefix, prefix) pairs.
  std::vector<std::uint8_t> d(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      std::uint8_t v;
      if (i == 0) {
        v = static_cast<std::uint8_t>(s[j].size());
      } else if (j == 0) {
        v = static_cast<std::uint8_t>(s[i].size());
      } else {
        const std::size_t pi = (i - 1) / 4, pj = (j - 1) / 4;
        const int sub = d[pi * n + pj] + ((i - 1) % 4 != (j - 1) % 4);
        v = static_cast<std::uint8_t>(std::min({d[pi * n + j] + 1, d[i * n + pj] + 1, sub}));
      }
      d[i * n + j] = v;
    }
  }

  // Best of three timed passes.
  std::size_t mismatches = 0;
  double t = 1e9;
  for (int pass = 0; pass < 3; ++pass) {
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t bad = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) bad += levenshtein(s[i], s[j]) != d[i * n + j];
    }
    t = std::min(t, seconds_since(t0));
    mismatches = std::max(mismatches, bad);
  }
  report(1, mismatches == 0 && t < kLevenshteinSeconds,
         fmt("%zu pairs, %zu mismatches, %.3f s (limit %.1f s)", n * n, mismatches, t, kLevenshteinSeconds));
}

// ---------------------------------------------------------------------------

struct World {
  std::vector<LabeledClip> corpus;
  std::vector<LabeledClip> fresh;
  SurrogateModel model;
  PhonemeBank bank;
  std::map<std::string, PhonemeBank> target_banks;
  std::map<std::string, const LabeledClip*> carriers;
};

World build_world() {
  CorpusSpec spec;
  spec.utterances_per_word = kTrainPerWord;
  spec.seed = kCorpusSeed;
  auto corpus = synthesize_corpus(spec);
  SurrogateModel model = train_surrogate(corpus, SurrogateConfig{});
  BankOptions bo;
  bo.seed = 3;
  PhonemeBank bank = build_bank(corpus, bo);
  CorpusSpec fresh_spec = spec;
  fresh_spec.seed = kFreshSeed;
  fresh_spec.utterances_per_word = kFreshPerWord;
  World w{std::move(corpus), synthesize_corpus(fresh_spec), std::move(model), std::move(bank), {}, {}};
  for (const auto& word : synth_vocabulary()) {
    std::vector<LabeledClip> sub;
    for (const auto& c : w.corpus) {
      if (c.label == word) sub.push_back(c);
    }
    w.target_banks.emplace(word, build_bank(sub, bo));
    for (const auto& c : w.fresh) {
      if (c.label != word) continue;
      const Classification k = w.model.classify(c.audio);
      if (k.accepted && k.label == word) {
        w.carriers[word] = &c;
        break;
      }
    }
  }
  return w;
}

void surrogate_boundary(World& w, double train_seconds) {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t correct = 0;
  for (const auto& t : w.fresh) {
    const Transcript r = w.model.transcribe(t.audio);
    correct += !r.is_rejected() && r.text() == t.label;
  }
  std::mt19937 rng(3);
  std::size_t mixtures = 0, rejected = 0;
  for (int i = 0; i < 600; ++i) {
    const auto& a = w.fresh[rng() % w.fresh.size()];
    const auto& b = w.fresh[rng() % w.fresh.size()];
    if (a.label == b.label) continue;
    ++mixtures;
    rejected += w.model.transcribe(equal_power_mix(a.audio, b.audio)).is_rejected();
  }
  const double clean = static_cast<double>(correct) / static_cast<double>(w.fresh.size());
  const double reject = static_cast<double>(rejected) / static_cast<double>(mixtures);
  report(2, reject >= kMixtureReject && clean >= kCleanCorrect,
         fmt("mixtures rejected %.3f (%zu/%zu, need >= %.2f); clean correct %.3f (%zu/%zu, need >= %.2f); "
             "train %.1f s, eval %.1f s",
             reject, rejected, mixtures, kMixtureReject, clean, correct, w.fresh.size(), kCleanCorrect,
             train_seconds, seconds_since(t0)));
}

// ---------------------------------------------------------------------------

void gradient_sign() {
  const auto t0 = std::chrono::steady_clock::now();
  AttackConfig c;
  c.Q = 30;
  int positive = 0;
  double mean_cos = 0.0;
  for (int t = 0; t < kGradientTrials; ++t) {
    LinearProblem p = make_linear_problem(1000 + static_cast<std::uint64_t>(t));
    OracleSession s(p.oracle);
    std::vector<float> d(p.w_hat.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(1.02 * p.d_star * p.w_hat[i]);
    Rng rng(static_cast<std::uint64_t>(t));
    const GradientEstimate g = estimate_gradient(s, p.x0, {AudioClip(d, kCanonicalRate), 0},
                                                 AttackGoal::untargeted("a"), c, p.d_star, rng);
    // The loss rises as w.x falls, so its gradient points along -w.
    double dot = 0.0, gg = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      dot -= g.direction[i] * p.w_hat[i];
      gg += g.direction[i] * g.direction[i];
    }
    const double cosine = gg > 0.0 ? dot / std::sqrt(gg) : 0.0;
    positive += cosine > 0.0;
    mean_cos += cosine / kGradientTrials;
  }
  report(3, positive >= kGradientPositive,
         fmt("cos > 0 in %d/%d trials (need >= %d), mean cos %.3f, %.1f s", positive, kGradientTrials,
             kGradientPositive, mean_cos, seconds_since(t0)));
}

// ---------------------------------------------------------------------------

struct Run {
  std::string original;
  std::string target;
  AttackGoal goal;
  const AudioClip* carrier = nullptr;
  std::optional<AttackResult> result;
  std::uint64_t queries = 0;
};

std::vector<Run> untargeted(World& w) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Run> runs;
  for (const auto& word : synth_vocabulary()) {
    for (int s = 0; s < 5; ++s) {
      Run r{word, "", AttackGoal::untargeted(word), &w.carriers.at(word)->audio, std::nullopt, 0};
      runs.push_back(std::move(r));
    }
  }
  for (std::size_t i = 0; i < runs.size(); ++i) {
    OracleSession session(w.model);
    Rng rng(100 + i % 5);
    try {
      runs[i].result = craft(session, *runs[i].carrier, runs[i].goal, w.bank, AttackConfig{}, rng);
    } catch (const InitFailed&) {
    }
    runs[i].queries = session.queries();
  }
  std::size_t ok = 0;
  std::vector<double> q, l2;
  for (const auto& r : runs) {
    if (r.result && r.result->success) {
      ++ok;
      q.push_back(static_cast<double>(r.result->ledger.total_queries));
      l2.push_back(r.result->l2);
    }
  }
  const double rate = static_cast<double>(ok) / static_cast<double>(runs.size());
  const double mq = median(q);
  report(4, rate >= kUntargetedSuccess && mq <= kUntargetedMedianQueries,
         fmt("success %zu/%zu = %.2f (need >= %.2f), median queries %.0f (need <= %.0f), median l2 %.2f, %.1f s",
             ok, runs.size(), rate, kUntargetedSuccess, mq, kUntargetedMedianQueries, median(l2), seconds_since(t0)));
  return runs;
}

std::vector<Run> targeted(World& w) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& vocab = synth_vocabulary();
  std::vector<Run> runs;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    for (std::size_t s = 0; s < 2; ++s) {
      const std::string& target = vocab[(i + 1 + s) % vocab.size()];
      runs.push_back({vocab[i], target, AttackGoal::targeted(vocab[i], target), &w.carriers.at(vocab[i])->audio,
                      std::nullopt, 0});
    }
  }
  for (std::size_t i = 0; i < runs.size(); ++i) {
    OracleSession session(w.model);
    Rng rng(100 + i % 2);
    try {
      runs[i].result = craft(session, *runs[i].carrier, runs[i].goal, w.target_banks.at(runs[i].target),
                             AttackConfig{}, rng);
    } catch (const InitFailed&) {
    }
    runs[i].queries = session.queries();
  }
  std::size_t ok = 0;
  std::vector<double> q;
  for (const auto& r : runs) {
    if (r.result && r.result->success) {
      ++ok;
      q.push_back(static_cast<double>(r.result->ledger.total_queries));
    }
  }
  const double rate = static_cast<double>(ok) / static_cast<double>(runs.size());
  report(5, rate >= kTargetedSuccess,
         fmt("success %zu/%zu = %.2f (need >= %.2f), median queries %.0f, %.1f s", ok, runs.size(), rate,
             kTargetedSuccess, median(q), seconds_since(t0)));
  return runs;
}

// ---------------------------------------------------------------------------

void fine_tune_optimality(const std::vector<Run>& a, const std::vector<Run>& b) {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t traces = 0, steps = 0, violations = 0;
  for (const auto* set : {&a, &b}) {
    for (const auto& r : *set) {
      if (!r.result) continue;
      ++traces;
      const auto& tr = r.result->trace;
      for (std::size_t i = 1; i < tr.size(); ++i) {
        ++steps;
        violations += !(tr[i].l2 < tr[i - 1].l2);
      }
    }
  }

  AttackConfig c;
  c.epsilon_l2 = 1e-9;
  c.query_budget = kFineTuneQueries;
  int within = 0;
  std::vector<double> norm_ratios, energy_ratios;
  std::uint64_t max_queries = 0;
  bool all_hold = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    LinearProblem p = make_linear_problem(500 + seed);
    // Start the way init would: uniform noise plus a flipping component.
    Rng rng(seed);
    std::uniform_real_distribution<float> v(0.0f, 0.1f);
    std::vector<float> d(p.w_hat.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = v(rng) + static_cast<float>(2.0 * p.d_star * p.w_hat[i]);
    OracleSession s(p.oracle);
    const AttackResult r = fine_tune(s, p.x0, {AudioClip::clipped(d, kCanonicalRate), 0}, AttackGoal::untargeted("a"),
                                     c, rng);
    all_hold = all_hold && r.success;
    max_queries = std::max(max_queries, r.ledger.total_queries);
    const double ratio = std::sqrt(r.l2) / p.d_star;
    norm_ratios.push_back(ratio);
    energy_ratios.push_back(r.l2 / (p.d_star * p.d_star));
    within += r.success && ratio <= kOptimalityFactor;
    for (std::size_t i = 1; i < r.trace.size(); ++i) {
      ++steps;
      violations += !(r.trace[i].l2 < r.trace[i - 1].l2);
    }
  }
  report(6, violations == 0 && within >= kOptimalSeeds && all_hold,
         fmt("%zu accepted steps over %zu attack traces + 10 linear runs, %zu non-decreasing; "
             "||delta||/||delta*|| <= %.1f in %d/10 seeds (need >= %d), median ratio %.2f "
             "(sum delta^2 ratio %.2f), <= %llu queries each, %.1f s",
             steps, traces, violations, kOptimalityFactor, within, kOptimalSeeds, median(norm_ratios),
             median(energy_ratios), static_cast<unsigned long long>(max_queries), seconds_since(t0)));
}

// ---------------------------------------------------------------------------

void weak_sync(World& w, const std::vector<Run>& runs) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> delays{0.0, 100.0, 200.0, 300.0, 400.0};
  std::vector<RunRecord> records;
  for (const auto& r : runs) {
    if (!r.result || !r.result->success) continue;
    RunRecord rec;
    rec.attack_goal = r.goal;
    rec.carrier = *r.carrier;
    rec.result = *r.result;
    records.push_back(std::move(rec));
  }
  OracleSession eval(w.model, {.cache = false, .budget = std::nullopt});
  const auto rows = sweep_success(eval, records, delays);
  bool monotone = true;
  std::string curve;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    curve += fmt("%s%.0fms:%.2f", i ? " " : "", rows[i].delay_ms, rows[i].success_rate);
    if (i > 0 && rows[i].success_rate > rows[i - 1].success_rate + kSweepBand) monotone = false;
  }
  const bool pass = records.size() >= kMinSweepAes && rows.back().success_rate <= rows.front().success_rate && monotone;
  report(7, pass, fmt("%zu AEs; %s (rise tolerance %.0f pp), %.1f s", records.size(), curve.c_str(),
                      100.0 * kSweepBand, seconds_since(t0)));
}

// ---------------------------------------------------------------------------

void defenses(World& w, const std::vector<Run>& a, const std::vector<Run>& b) {
  const auto t0 = std::chrono::steady_clock::now();

  // (a) order-6 Butterworth at several cutoffs, design response and a tone.
  double worst_cut = 0.0, worst_stop = -1e9;
  for (double fc : {1000.0, 2000.0, 3000.0, 4000.0}) {
    const auto sos = butterworth_lowpass(6, fc, kCanonicalRate);
    worst_cut = std::max(worst_cut, std::abs(db(std::abs(frequency_response(sos, fc, kCanonicalRate))) - kCutoffDb));
    const double stop = std::min(2.0 * fc, 0.5 * kCanonicalRate - 1.0);
    worst_stop = std::max(worst_stop, db(std::abs(frequency_response(sos, stop, kCanonicalRate))));
  }
  const AudioClip probe = tone(4000.0, 1.0);
  const AudioClip filtered = defend_lowpass(probe, 4000.0, 6);
  const double tone_db =
      db(rms_range(filtered.samples(), 4000, 12000) / rms_range(probe.samples(), 4000, 12000));
  const bool a_ok = worst_cut <= kCutoffTolDb && worst_stop <= kStopbandDb && std::abs(tone_db - kCutoffDb) <= kCutoffTolDb;

  // (b) quantization idempotence.
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::uniform_int_distribution<int> len(1, 4000);
  int idempotent = 0;
  const int steps[] = {256, 512, 1024, 2, 4096};
  for (int i = 0; i < kQuantizeClips; ++i) {
    std::vector<float> s(static_cast<std::size_t>(len(rng)));
    for (float& x : s) x = u(rng);
    const int q = steps[i % 5];
    const AudioClip once = defend_quantize(AudioClip(std::move(s), kCanonicalRate), q);
    idempotent += defend_quantize(once, q) == once;
  }
  const bool b_ok = idempotent == kQuantizeClips;

  // (c) down-sampling trend over crafted AEs.
  std::vector<DefenseCase> cases;
  for (const auto* set : {&a, &b}) {
    for (const auto& r : *set) {
      if (r.result && r.result->success) cases.push_back({*r.carrier, r.goal, *r.result});
    }
  }
  OracleSession eval(w.model, {.cache = false, .budget = std::nullopt});
  const DefenseRow none = evaluate_defense(eval, cases, DefenseSpec::none());
  const DefenseRow ds8 = evaluate_defense(eval, cases, DefenseSpec::downsample(8000));
  const DefenseRow ds4 = evaluate_defense(eval, cases, DefenseSpec::downsample(4000));
  const bool c_ok = cases.size() >= kMinDefenseAes && ds4.success_after <= ds8.success_after &&
                    ds8.success_after <= none.success_after;
  std::string note;
  if (ds8.clean_accuracy_after == 0.0 && ds4.clean_accuracy_after == 0.0) {
    note = " [degenerate: the surrogate rejects every down-sampled clean carrier too]";
  }
  report(8, a_ok && b_ok && c_ok,
         fmt("(a) cutoff error %.3f dB (tol %.1f), worst 2x-cutoff %.1f dB (need <= %.0f), 4 kHz tone %.2f dB; "
             "(b) %d/%d idempotent; (c) %zu AEs, success none %.2f >= ds:8000 %.2f >= ds:4000 %.2f, "
             "clean accuracy none %.2f ds:8000 %.2f ds:4000 %.2f%s; %.1f s",
             worst_cut, kCutoffTolDb, worst_stop, kStopbandDb, tone_db, idempotent, kQuantizeClips, cases.size(),
             none.success_after, ds8.success_after, ds4.success_after, none.clean_accuracy_after,
             ds8.clean_accuracy_after, ds4.clean_accuracy_after, note.c_str(), seconds_since(t0)));
}

// ---------------------------------------------------------------------------

void ledger_conservation(World& w) {
  const auto t0 = std::chrono::steady_clock::now();
  CountingOracle counter(w.model);
  std::size_t matched = 0;
  std::uint64_t total = 0;
  const auto& vocab = synth_vocabulary();
  for (std::size_t i = 0; i < 10; ++i) {
    const std::uint64_t before = counter.calls();
    OracleSession session(counter);
    Rng rng(900 + i);
    std::uint64_t reported = 0;
    try {
      const AttackResult r = craft(session, w.carriers.at(vocab[i])->audio, AttackGoal::untargeted(vocab[i]), w.bank,
                                   AttackConfig{}, rng);
      reported = r.ledger.total_queries;
    } catch (const InitFailed&) {
      reported = session.ledger().total_queries;
    }
    const std::uint64_t calls = counter.calls() - before;
    matched += calls == reported && calls == session.queries();
    total += calls;
  }
  QueryLedger l300, l1500;
  for (int i = 0; i < 300; ++i) l300.record(Phase::kEval, 1.0);
  for (int i = 0; i < 1500; ++i) l1500.record(Phase::kEval, 1.0);
  const double c300 = estimate_cost(l300, 0.024), c1500 = estimate_cost(l1500, 0.024);
  const bool cost_ok = std::abs(c300 - 0.12) < 1e-12 && std::abs(c1500 - 0.60) < 1e-12 &&
                       fmt("%.2f", c300) == "0.12" && fmt("%.2f", c1500) == "0.60";
  report(9, matched == 10 && cost_ok,
         fmt("%zu/10 runs match the counting oracle (%llu calls); cost 300 x 1 s = $%.2f, 1500 x 1 s = $%.2f; %.1f s",
             matched, static_cast<unsigned long long>(total), c300, c1500, seconds_since(t0)));
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void determinism(World& w) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = fs::temp_directory_path() / "advaudio_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::string text = "seed = 31\nrepeats = 2\ndelays_ms = 0,100,200\ndefense = ds:8000\ndefense = q:1024\n";
  for (const char* word : {"yes", "left", "stop"}) {
    save_wav(w.carriers.at(word)->audio, dir / (std::string(word) + ".wav"));
    text += std::string("goal = ") + word + ".wav|" + word + "\n";
  }
  const ExperimentConfig config = ExperimentConfig::parse(text, dir);
  const BankProvider banks = [&](const AttackGoal&) -> const PhonemeBank& { return w.bank; };
  for (const char* out : {"one", "two"}) write_outcome(run_benchmark(config, w.model, banks), dir / out);
  const std::string a = slurp(dir / "one" / "results.json");
  const std::string b = slurp(dir / "two" / "results.json");
  report(10, !a.empty() && a == b,
         fmt("results.json %zu bytes vs %zu bytes, %s; %.1f s", a.size(), b.size(),
             a == b ? "identical" : "different", seconds_since(t0)));
}

}  // namespace

int main() {
  try {
    edit_distance_oracle();
    const auto t0 = std::chrono::steady_clock::now();
    World w = build_world();
    surrogate_boundary(w, seconds_since(t0));
    gradient_sign();
    const auto u = untargeted(w);
    const auto t = targeted(w);
    fine_tune_optimality(u, t);
    weak_sync(w, u);
    defenses(w, u, t);
    ledger_conservation(w);
    determinism(w);
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
