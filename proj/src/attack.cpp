#include "advaudio/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>

#include "advaudio/dsp.hpp"
#include "advaudio/errors.hpp"
#include "advaudio/wav.hpp"

namespace advaudio {
namespace {

constexpr double kSigmaMin = 1e-4;
constexpr double kSigmaMax = 1.0;

// Query allowance for one call: its own cap, bounded by the session budget.
class Allowance {
 public:
  Allowance(const OracleSession& session, std::uint64_t cap) : session_(session), start_(session.queries()) {
    stop_at_ = cap > std::numeric_limits<std::uint64_t>::max() - start_ ? std::numeric_limits<std::uint64_t>::max()
                                                                      : start_ + cap;
  }
  std::uint64_t left() const {
    const std::uint64_t q = session_.queries();
    const std::uint64_t own = q >= stop_at_ ? 0 : stop_at_ - q;
    return std::min(own, session_.remaining());
  }
  std::uint64_t spent() const { return session_.queries() - start_; }

 private:
  const OracleSession& session_;
  std::uint64_t start_;
  std::uint64_t stop_at_;
};

AudioClip as_clip(std::vector<float> v, int rate) { return AudioClip::clipped(std::move(v), rate); }

double norm(std::span<const float> v) { return std::sqrt(l2_distortion(v)); }

std::size_t shift_samples(const AttackConfig& c, int shift_index, int rate) {
  return static_cast<std::size_t>(std::lround(shift_index * c.tau_ms * rate / 1000.0));
}

QueryLedger ledger_since(const QueryLedger& now, const QueryLedger& before) {
  QueryLedger d;
  d.total_queries = now.total_queries - before.total_queries;
  d.total_audio_seconds = now.total_audio_seconds - before.total_audio_seconds;
  for (std::size_t i = 0; i < kPhaseCount; ++i) d.per_phase[i] = now.per_phase[i] - before.per_phase[i];
  return d;
}

double trace_cer(const Transcript& t, const AttackGoal& goal) { return attack_loss(t, goal).value; }

void check_carrier(OracleSession& session, const AudioClip& x0, const AttackGoal& goal) {
  const Transcript t0 = session.cached_query(x0, Phase::kInit);
  if (!(t0 == Transcript::from_raw(goal.original))) {
    throw BadCarrier("carrier is recognized as " + t0.to_string() + ", expected '" + goal.original + "'");
  }
}

}  // namespace

void AttackConfig::validate() const {
  if (K < 1) throw ConfigError("K must be >= 1");
  if (Q < 1) throw ConfigError("Q must be >= 1");
  if (!(sigma > 0.0) || !(eta > 0.0) || !(eta_floor > 0.0) || !(eta_max > 0.0) || !(rotation > 0.0)) {
    throw ConfigError("sigma, eta, eta_floor, eta_max and rotation must be > 0");
  }
  if (eta_floor > eta || eta > eta_max || eta_max >= 1.0) throw ConfigError("need eta_floor <= eta <= eta_max < 1");
  if (N < 1) throw ConfigError("N must be >= 1");
  if (!(tau_ms > 0.0)) throw ConfigError("tau_ms must be > 0");
  if (tau_ms * (N - 1) > 400.0) throw ConfigError("tau_ms * (N - 1) must stay within 400 ms");
  if (!(epsilon_l2 > 0.0)) throw ConfigError("epsilon_l2 must be > 0");
  if (!(noise_cap > 0.0) || noise_cap > 1.0) throw ConfigError("noise_cap must be in (0, 1]");
  if (query_budget && *query_budget == 0) throw ConfigError("query_budget must be > 0");
  if (!(band_low_hz > 0.0) || band_high_hz <= band_low_hz) throw ConfigError("need 0 < band_low_hz < band_high_hz");
  if (parallel_probes < 1) throw ConfigError("parallel_probes must be >= 1");
}

std::uint64_t AttackConfig::budget(const AttackGoal& goal) const {
  if (query_budget) return *query_budget;
  return goal.is_targeted() ? kTargetedBudget : kUntargetedBudget;
}

nlohmann::json AttackConfig::to_json() const {
  nlohmann::json j = {{"K", K},
                      {"Q", Q},
                      {"sigma", sigma},
                      {"eta", eta},
                      {"eta_floor", eta_floor},
                      {"eta_max", eta_max},
                      {"rotation", rotation},
                      {"N", N},
                      {"tau_ms", tau_ms},
                      {"epsilon_l2", epsilon_l2},
                      {"noise_cap", noise_cap},
                      {"count_rejection_as_success", count_rejection_as_success},
                      {"weak_sync", weak_sync},
                      {"weak_sync_gradient", weak_sync_gradient},
                      {"band_limit", band_limit},
                      {"band_low_hz", band_low_hz},
                      {"band_high_hz", band_high_hz},
                      {"parallel_probes", parallel_probes},
                      {"restart_init", restart_init}};
  j["query_budget"] = query_budget ? nlohmann::json(*query_budget) : nlohmann::json(nullptr);
  return j;
}

AttackConfig AttackConfig::from_json(const nlohmann::json& j) {
  AttackConfig c;
  c.K = j.value("K", c.K);
  c.Q = j.value("Q", c.Q);
  c.sigma = j.value("sigma", c.sigma);
  c.eta = j.value("eta", c.eta);
  c.eta_floor = j.value("eta_floor", c.eta_floor);
  c.eta_max = j.value("eta_max", c.eta_max);
  c.rotation = j.value("rotation", c.rotation);
  c.N = j.value("N", c.N);
  c.tau_ms = j.value("tau_ms", c.tau_ms);
  c.epsilon_l2 = j.value("epsilon_l2", c.epsilon_l2);
  c.noise_cap = j.value("noise_cap", c.noise_cap);
  c.count_rejection_as_success = j.value("count_rejection_as_success", c.count_rejection_as_success);
  c.weak_sync = j.value("weak_sync", c.weak_sync);
  c.weak_sync_gradient = j.value("weak_sync_gradient", c.weak_sync_gradient);
  c.band_limit = j.value("band_limit", c.band_limit);
  c.band_low_hz = j.value("band_low_hz", c.band_low_hz);
  c.band_high_hz = j.value("band_high_hz", c.band_high_hz);
  c.parallel_probes = j.value("parallel_probes", c.parallel_probes);
  c.restart_init = j.value("restart_init", c.restart_init);
  if (j.contains("query_budget") && !j.at("query_budget").is_null()) {
    c.query_budget = j.at("query_budget").get<std::uint64_t>();
  }
  return c;
}

Perturbation shifted(const Perturbation& delta, std::size_t shift) {
  return {delta.delta, delta.offset_samples + shift};
}

bool goal_holds_at(OracleSession& session, const AudioClip& x0, const Perturbation& delta, const AttackGoal& goal,
                   const AttackConfig& config, Phase phase, Transcript* at_zero) {
  const Transcript t = session.cached_query(mix_at(x0, delta), phase);
  if (at_zero) *at_zero = t;
  if (!attack_goal_holds(t, goal)) return false;
  if (!config.weak_sync) return true;
  for (int c = 1; c < config.N; ++c) {
    const Perturbation p = shifted(delta, shift_samples(config, c, x0.sample_rate()));
    if (!attack_goal_holds(session.cached_query(mix_at(x0, p), phase), goal)) return false;
  }
  return true;
}

double weak_sync_loss(OracleSession& session, const AudioClip& x0, const Perturbation& delta, const AttackGoal& goal,
                      const AttackConfig& config) {
  if (config.N < 1) throw ConfigError("N must be >= 1");
  double total = 0.0;
  for (int c = 0; c < config.N; ++c) {
    const Perturbation p = shifted(delta, shift_samples(config, c, x0.sample_rate()));
    total += attack_loss(session.cached_query(mix_at(x0, p), Phase::kEval), goal).value;
  }
  return total / config.N;
}

InitResult phoneme_init(OracleSession& session, const AudioClip& x0, const AttackGoal& goal, const PhonemeBank& bank,
                        const AttackConfig& config, Rng& rng, std::optional<std::uint64_t> max_queries) {
  config.validate();
  const Allowance allowance(session, std::min(config.budget(goal), max_queries.value_or(config.budget(goal))));
  InitResult out;
  if (allowance.left() == 0) throw InitFailed("no query budget for initialization");
  check_carrier(session, x0, goal);

  const Transcript t0 = Transcript::from_raw(goal.original);
  double eps = goal.is_targeted() ? cer(t0, goal.target) : 0.0;
  out.final_cer = eps;
  if (goal.is_targeted() && eps == 0.0) {
    out.queries = allowance.spent();
    return out;
  }

  const std::size_t n = x0.size();
  const int rate = x0.sample_rate();
  std::vector<float> base(n, 0.0f);
  std::vector<std::size_t> offsets;
  std::vector<std::string> sources;
  std::uniform_real_distribution<float> noise(0.0f, static_cast<float>(config.noise_cap));

  while (out.failures < config.K && allowance.left() > 0) {
    std::vector<float> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = base[i] + noise(rng);
    const PhonemeClip& ph = sample_phoneme(bank, rng);
    if (ph.audio.sample_rate() != rate) throw RateMismatch("phoneme bank rate differs from the carrier");
    const std::size_t len = std::min(ph.audio.size(), n);
    std::uniform_int_distribution<std::size_t> where(0, n - len);
    const std::size_t at = where(rng);
    for (std::size_t i = 0; i < len; ++i) d[at + i] += ph.audio.samples()[i];
    for (float& x : d) x = hard_clip(x);

    Perturbation cand{AudioClip(d, rate), 0};
    const Transcript t = session.cached_query(mix_at(x0, cand), Phase::kInit);
    if (goal.is_targeted()) {
      const double c = cer(t, goal.target);
      if (c < eps) {
        eps = c;
        base = d;
        offsets.push_back(at);
        sources.push_back(ph.source_id);
        out.candidates.push_back({cand, offsets, sources, t, l2_distortion(cand)});
        if (eps == 0.0) break;
      } else {
        ++out.failures;
      }
    } else if (attack_goal_holds(t, goal)) {
      out.candidates.push_back({cand, {at}, {ph.source_id}, t, l2_distortion(cand)});
    } else {
      ++out.failures;
    }
  }
  out.final_cer = eps;
  out.queries = allowance.spent();
  if (out.candidates.empty()) throw InitFailed("no perturbation changed the transcription");
  return out;
}

GradientEstimate estimate_gradient(OracleSession& session, const AudioClip& x0, const Perturbation& delta,
                                   const AttackGoal& goal, const AttackConfig& config, double sigma, Rng& rng,
                                   std::optional<std::uint64_t> max_queries) {
  if (config.Q < 1) throw ConfigError("Q must be >= 1");
  const std::uint64_t per_probe = config.weak_sync_gradient && config.weak_sync ? config.N : 1;
  const std::uint64_t need = per_probe * static_cast<std::uint64_t>(config.Q);
  const Allowance allowance(session, max_queries.value_or(std::numeric_limits<std::uint64_t>::max()));
  if (allowance.left() < need) throw BudgetExhausted("gradient estimate needs " + std::to_string(need) + " queries");

  const std::size_t n = delta.delta.size();
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(config.Q));
  for (auto& s : seeds) s = rng();

  AttackConfig probe_cfg = config;
  probe_cfg.weak_sync = config.weak_sync && config.weak_sync_gradient;

  const auto run_probe = [&](std::size_t q) {
    Rng local(seeds[q]);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> raw(n);
    double ss = 0.0;
    for (double& x : raw) {
      x = gauss(local);
      ss += x * x;
    }
    const double inv = 1.0 / std::sqrt(ss);
    ProbeSample sample;
    sample.mu.resize(n);
    std::vector<float> probe(n);
    for (std::size_t i = 0; i < n; ++i) {
      sample.mu[i] = static_cast<float>(raw[i] * inv);
      probe[i] = delta.delta.samples()[i] + static_cast<float>(sigma) * sample.mu[i];
    }
    const Perturbation p{as_clip(std::move(probe), delta.delta.sample_rate()), delta.offset_samples};
    sample.sign = goal_holds_at(session, x0, p, goal, probe_cfg, Phase::kGradient) ? -1 : 1;
    return sample;
  };

  GradientEstimate est;
  est.sigma = sigma;
  est.samples.resize(seeds.size());
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(config.parallel_probes), seeds.size());
  if (workers <= 1) {
    for (std::size_t q = 0; q < seeds.size(); ++q) est.samples[q] = run_probe(q);
  } else {
    for (std::size_t first = 0; first < seeds.size(); first += workers) {
      std::vector<std::future<ProbeSample>> batch;
      for (std::size_t q = first; q < std::min(seeds.size(), first + workers); ++q) {
        batch.push_back(std::async(std::launch::async, run_probe, q));
      }
      for (std::size_t k = 0; k < batch.size(); ++k) est.samples[first + k] = batch[k].get();
    }
  }
  est.direction.assign(n, 0.0);
  for (const ProbeSample& s : est.samples) {
    for (std::size_t i = 0; i < n; ++i) est.direction[i] += s.sign * static_cast<double>(s.mu[i]);
    est.holds += s.sign < 0;
  }
  return est;
}

AttackResult fine_tune(OracleSession& session, const AudioClip& x0, const Perturbation& delta0, const AttackGoal& goal,
                       const AttackConfig& config, Rng& rng, std::optional<std::uint64_t> max_queries) {
  config.validate();
  const QueryLedger before = session.ledger();
  const Allowance allowance(session, max_queries.value_or(config.budget(goal)));
  const int rate = x0.sample_rate();

  AttackResult r;
  r.perturbation = delta0;
  r.l2 = l2_distortion(delta0);
  r.success = goal_holds_at(session, x0, delta0, goal, config, Phase::kFineTune, &r.final_transcript);
  r.trace.push_back({allowance.spent(), r.l2, trace_cer(r.final_transcript, goal)});
  if (!r.success || r.l2 <= config.epsilon_l2) {
    r.ledger = ledger_since(session.ledger(), before);
    return r;
  }

  std::vector<float> delta = delta0.delta.data();
  double eta = config.eta;
  double sigma = config.sigma;
  const std::uint64_t per_estimate =
      static_cast<std::uint64_t>(config.Q) * (config.weak_sync && config.weak_sync_gradient ? config.N : 1);

  while (r.l2 > config.epsilon_l2 && eta >= config.eta_floor && allowance.left() > per_estimate) {
    const double radius = norm(delta);
    const Perturbation here{AudioClip(delta, rate), delta0.offset_samples};
    const GradientEstimate est = estimate_gradient(session, x0, here, goal, config, sigma * radius, rng,
                                                   allowance.left());
    const double held = static_cast<double>(est.holds) / config.Q;
    if (held > 0.8) {
      sigma = std::min(sigma * 2.0, kSigmaMax);
    } else if (held < 0.2) {
      sigma = std::max(sigma * 0.5, kSigmaMin);
    }
    double gnorm = 0.0;
    for (double g : est.direction) gnorm += g * g;
    gnorm = std::sqrt(gnorm);
    if (gnorm == 0.0) {
      eta *= 0.5;
      continue;
    }

    // Reuse one estimate for as many steps as keep the goal: turn the
    // direction of delta away from the estimated gradient, then shrink it.
    while (allowance.left() > 0) {
      const double cur = norm(delta);
      std::vector<double> dir(delta.size());
      double dn = 0.0;
      for (std::size_t i = 0; i < delta.size(); ++i) {
        dir[i] = delta[i] / cur - config.rotation * eta * est.direction[i] / gnorm;
        dn += dir[i] * dir[i];
      }
      dn = std::sqrt(dn);
      std::vector<float> cand(delta.size());
      for (std::size_t i = 0; i < delta.size(); ++i) cand[i] = static_cast<float>((1.0 - eta) * cur * dir[i] / dn);
      if (config.band_limit) {
        cand = band_limit_signal(cand, rate, config.band_low_hz, std::min(config.band_high_hz, 0.5 * rate));
      }
      for (float& x : cand) x = hard_clip(x);
      const double cand_l2 = l2_distortion(cand);
      Transcript t = Transcript::rejected();
      const Perturbation p{AudioClip(cand, rate), delta0.offset_samples};
      const bool kept = cand_l2 < r.l2 && goal_holds_at(session, x0, p, goal, config, Phase::kFineTune, &t);
      if (kept) {
        delta = std::move(cand);
        r.perturbation = p;
        r.l2 = cand_l2;
        r.final_transcript = t;
        r.trace.push_back({allowance.spent(), r.l2, trace_cer(t, goal)});
        eta = std::min(eta * 2.0, config.eta_max);
        if (r.l2 <= config.epsilon_l2) break;
      } else {
        eta *= 0.5;
        break;
      }
    }
  }
  r.ledger = ledger_since(session.ledger(), before);
  return r;
}

AttackResult craft(OracleSession& session, const AudioClip& x0, const AttackGoal& goal, const PhonemeBank& bank,
                   const AttackConfig& config, Rng& rng) {
  config.validate();
  const QueryLedger before = session.ledger();
  const Allowance allowance(session, config.budget(goal));

  AttackResult best;
  best.perturbation = {AudioClip::silence(x0.size(), x0.sample_rate()), 0};
  best.final_transcript = Transcript::from_raw(goal.original);

  bool have = false;
  bool found_any = false;
  double closest_cer = 2.0;
  for (int round = 0; allowance.left() > 0; ++round) {
    if (round > 0 && !config.restart_init) break;
    InitResult init;
    try {
      init = phoneme_init(session, x0, goal, bank, config, rng, allowance.left());
    } catch (const InitFailed&) {
      continue;
    }
    if (init.candidates.empty()) {
      // Targeted goal already met by the carrier itself.
      best.success = true;
      best.final_transcript = session.cached_query(x0, Phase::kEval);
      best.ledger = ledger_since(session.ledger(), before);
      return best;
    }
    found_any = true;
    best.candidates_found += init.candidates.size();

    std::vector<const InitCandidate*> order;
    for (const InitCandidate& c : init.candidates) {
      if (attack_goal_holds(c.transcript, goal)) order.push_back(&c);
    }
    std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->l2 < b->l2; });

    if (order.empty()) {
      // Init got closer to the target but never reached it.
      const InitCandidate& last = init.candidates.back();
      const double c = trace_cer(last.transcript, goal);
      if (!have && c < closest_cer) {
        closest_cer = c;
        best.perturbation = last.perturbation;
        best.final_transcript = last.transcript;
        best.l2 = last.l2;
        best.phoneme_offsets = last.phoneme_offsets;
        best.phoneme_sources = last.phoneme_sources;
        best.trace.assign(1, {allowance.spent(), best.l2, c});
      }
      continue;
    }

    for (const InitCandidate* c : order) {
      // A candidate already within epsilon is confirmed from the cache.
      const bool free = !config.weak_sync && c->l2 <= config.epsilon_l2;
      if (allowance.left() == 0 && !free) break;
      ++best.candidates_tried;
      AttackResult r;
      if (free) {
        r.perturbation = c->perturbation;
        r.final_transcript = c->transcript;
        r.success = true;
        r.l2 = c->l2;
        r.trace.push_back({0, r.l2, trace_cer(r.final_transcript, goal)});
      } else {
        r = fine_tune(session, x0, c->perturbation, goal, config, rng, allowance.left());
      }
      if (r.success && (!have || r.l2 < best.l2)) {
        const std::size_t tried = best.candidates_tried;
        const std::size_t found = best.candidates_found;
        best = std::move(r);
        best.candidates_tried = tried;
        best.candidates_found = found;
        best.phoneme_offsets = c->phoneme_offsets;
        best.phoneme_sources = c->phoneme_sources;
        have = true;
      }
      if (have && best.l2 <= config.epsilon_l2) break;
    }
    if (have) break;
  }
  if (!found_any) throw InitFailed("no perturbation changed the transcription");
  // Trace query counts are per fine-tune call; rebase them on the whole run.
  if (have) {
    const std::uint64_t spent = allowance.spent();
    const std::uint64_t last = best.trace.empty() ? 0 : best.trace.back().queries;
    for (TracePoint& p : best.trace) p.queries = p.queries + spent - last;
  }
  best.ledger = ledger_since(session.ledger(), before);
  return best;
}

std::vector<SweepPoint> mismatch_sweep(OracleSession& session, const AudioClip& x0, const AttackResult& result,
                                       const AttackGoal& goal, const std::vector<double>& delays_ms) {
  std::vector<SweepPoint> out;
  out.reserve(delays_ms.size());
  for (double ms : delays_ms) {
    if (ms < 0.0) throw ArgumentError("mismatch delays must be >= 0");
    const auto shift = static_cast<std::size_t>(std::lround(ms * x0.sample_rate() / 1000.0));
    SweepPoint p;
    p.delay_ms = ms;
    p.transcript = session.cached_query(mix_at(x0, shifted(result.perturbation, shift)), Phase::kEval);
    p.holds = attack_goal_holds(p.transcript, goal);
    out.push_back(std::move(p));
  }
  return out;
}

nlohmann::json AttackResult::to_json() const {
  nlohmann::json trace_json = nlohmann::json::array();
  for (const TracePoint& p : trace) trace_json.push_back({p.queries, p.l2, p.cer});
  return {{"success", success},
          {"final_transcript", final_transcript.to_string()},
          {"final_rejected", final_transcript.is_rejected()},
          {"l2", l2},
          {"offset_samples", perturbation.offset_samples},
          {"sample_rate", perturbation.delta.sample_rate()},
          {"length", perturbation.delta.size()},
          {"ledger", ledger.to_json()},
          {"phoneme_offsets", phoneme_offsets},
          {"phoneme_sources", phoneme_sources},
          {"candidates_found", candidates_found},
          {"candidates_tried", candidates_tried},
          {"trace", trace_json}};
}

void AttackResult::save(const std::filesystem::path& stem, const nlohmann::json& extra) const {
  const auto parent = stem.parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  auto with = [&](const std::string& ext) { return std::filesystem::path(stem.string() + ext); };
  nlohmann::json j = to_json();
  j["perturbation_wav"] = with(".wav").filename().string();
  for (const auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream js(with(".json"), std::ios::trunc);
  if (!js) throw IoError("cannot write " + with(".json").string());
  js << j.dump(1) << '\n';
  save_wav(perturbation.delta, with(".wav"));
  std::ofstream csv(with(".trace.csv"), std::ios::trunc);
  if (!csv) throw IoError("cannot write " + with(".trace.csv").string());
  csv << "queries,l2,cer\n";
  for (const TracePoint& p : trace) csv << p.queries << ',' << p.l2 << ',' << p.cer << '\n';
}

AttackResult AttackResult::load(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw IoError("cannot open " + json_path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    AttackResult r;
    const auto wav = json_path.parent_path() / j.at("perturbation_wav").get<std::string>();
    r.perturbation = {load_wav(wav), j.at("offset_samples").get<std::size_t>()};
    r.success = j.at("success").get<bool>();
    r.final_transcript = j.at("final_rejected").get<bool>()
                             ? Transcript::rejected()
                             : Transcript::from_raw(j.at("final_transcript").get<std::string>());
    r.l2 = j.at("l2").get<double>();
    r.ledger = QueryLedger::from_json(j.at("ledger"));
    r.phoneme_offsets = j.at("phoneme_offsets").get<std::vector<std::size_t>>();
    r.phoneme_sources = j.at("phoneme_sources").get<std::vector<std::string>>();
    r.candidates_found = j.at("candidates_found").get<std::size_t>();
    r.candidates_tried = j.at("candidates_tried").get<std::size_t>();
    for (const auto& p : j.at("trace")) r.trace.push_back({p.at(0).get<std::uint64_t>(), p.at(1).get<double>(), p.at(2).get<double>()});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(json_path.string() + ": " + e.what());
  }
}

}  // namespace advaudio
