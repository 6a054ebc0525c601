#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advaudio/audio.hpp"
#include "advaudio/distance.hpp"
#include "advaudio/oracle.hpp"
#include "advaudio/phoneme_bank.hpp"

namespace advaudio {

struct AttackConfig {
  int K = 100;                // failed init rounds before giving up
  int Q = 30;                 // probe directions per gradient estimate
  double sigma = 0.05;        // probe radius relative to ||delta||; adapted from probe outcomes
  double eta = 0.05;          // step as a fraction of ||delta||
  double eta_floor = 1e-4;
  double eta_max = 0.5;
  double rotation = 8.0;      // angular step gain relative to eta
  int N = 4;                  // weak-sync shifts
  double tau_ms = 100.0;
  double epsilon_l2 = 10.0;   // fine-tune stops once sum(delta^2) reaches this
  double noise_cap = 0.1;     // v ~ U[0, noise_cap] per sample during init
  std::optional<std::uint64_t> query_budget;  // default by mode, see budget()
  bool count_rejection_as_success = false;
  bool weak_sync = false;           // goal must hold at every shift during fine-tune
  bool weak_sync_gradient = false;  // probes also checked at every shift (N times the cost)
  bool band_limit = true;
  double band_low_hz = 50.0;
  double band_high_hz = 8000.0;
  int parallel_probes = 1;
  bool restart_init = true;   // rerun init while budget remains and no candidate meets the goal

  static constexpr std::uint64_t kTargetedBudget = 5000;
  static constexpr std::uint64_t kUntargetedBudget = 2000;

  // Throws ConfigError for non-positive or inconsistent values.
  void validate() const;
  std::uint64_t budget(const AttackGoal& goal) const;

  nlohmann::json to_json() const;
  static AttackConfig from_json(const nlohmann::json& j);
};

struct ProbeSample {
  std::vector<float> mu;  // unit norm
  int sign = 0;           // +1 goal fails at the probe, -1 goal holds
};

struct GradientEstimate {
  std::vector<double> direction;  // sum of sign * mu
  std::vector<ProbeSample> samples;
  double sigma = 0.0;             // absolute probe radius used
  int holds = 0;                  // probes at which the goal held
};

struct TracePoint {
  std::uint64_t queries = 0;  // session queries spent by this attack so far
  double l2 = 0.0;
  double cer = 0.0;
};

struct InitCandidate {
  Perturbation perturbation;                  // full carrier length, offset 0
  std::vector<std::size_t> phoneme_offsets;   // where each accepted phoneme was inserted
  std::vector<std::string> phoneme_sources;
  Transcript transcript;
  double l2 = 0.0;
};

struct InitResult {
  std::vector<InitCandidate> candidates;
  double final_cer = 0.0;  // running epsilon (targeted)
  int failures = 0;
  std::uint64_t queries = 0;
};

struct AttackResult {
  Perturbation perturbation{AudioClip::silence(1, kCanonicalRate), 0};
  Transcript final_transcript = Transcript::rejected();
  bool success = false;
  QueryLedger ledger;
  double l2 = 0.0;
  std::vector<TracePoint> trace;
  std::vector<std::size_t> phoneme_offsets;
  std::vector<std::string> phoneme_sources;
  std::size_t candidates_tried = 0;
  std::size_t candidates_found = 0;

  nlohmann::json to_json() const;  // metadata only, no samples
  // <stem>.json, <stem>.wav (the perturbation) and <stem>.trace.csv. Keys of
  // `extra` are added to the JSON.
  void save(const std::filesystem::path& stem, const nlohmann::json& extra = nlohmann::json::object()) const;
  // Reads <stem>.json and its WAV.
  static AttackResult load(const std::filesystem::path& json_path);
};

// Phoneme splicing init. Targeted goals re-base on every accepted draw, so each
// candidate is the running sum; untargeted goals keep every draw that flips
// the label. Throws BadCarrier when x0 is not recognized as the original
// label and InitFailed when the budget ends with no candidate.
InitResult phoneme_init(OracleSession& session, const AudioClip& x0, const AttackGoal& goal, const PhonemeBank& bank,
                        const AttackConfig& config, Rng& rng, std::optional<std::uint64_t> max_queries = std::nullopt);

// Q probes at x0 + delta + sigma * mu; consumes exactly Q queries (or N*Q
// with weak_sync_gradient). `sigma` is absolute. Throws BudgetExhausted up
// front if fewer than Q queries remain in `stop_at`.
GradientEstimate estimate_gradient(OracleSession& session, const AudioClip& x0, const Perturbation& delta,
                                   const AttackGoal& goal, const AttackConfig& config, double sigma, Rng& rng,
                                   std::optional<std::uint64_t> max_queries = std::nullopt);

// Shrinks delta while keeping the goal, starting from a point where it holds.
AttackResult fine_tune(OracleSession& session, const AudioClip& x0, const Perturbation& delta0, const AttackGoal& goal,
                       const AttackConfig& config, Rng& rng, std::optional<std::uint64_t> max_queries = std::nullopt);

// Mean loss over N copies of delta delayed by c * tau, c = 0..N-1.
double weak_sync_loss(OracleSession& session, const AudioClip& x0, const Perturbation& delta, const AttackGoal& goal,
                      const AttackConfig& config);

// Goal check at the plain position or, with weak_sync, at every shift
// (stopping at the first shift that fails).
bool goal_holds_at(OracleSession& session, const AudioClip& x0, const Perturbation& delta, const AttackGoal& goal,
                   const AttackConfig& config, Phase phase, Transcript* at_zero = nullptr);

// Init, then fine-tune candidates in ascending l2 until one reaches
// epsilon_l2 or the budget ends. With restart_init, init is run again with
// fresh draws while no candidate meets the goal and budget remains. The best
// verified result is returned; InitFailed when no round found a candidate.
AttackResult craft(OracleSession& session, const AudioClip& x0, const AttackGoal& goal, const PhonemeBank& bank,
                   const AttackConfig& config, Rng& rng);

struct SweepPoint {
  double delay_ms = 0.0;
  bool holds = false;
  Transcript transcript = Transcript::rejected();
};

// Re-queries the adversarial perturbation delayed by each amount.
std::vector<SweepPoint> mismatch_sweep(OracleSession& session, const AudioClip& x0, const AttackResult& result,
                                       const AttackGoal& goal, const std::vector<double>& delays_ms);

// Delta moved later by `shift` samples, truncated at the carrier end.
Perturbation shifted(const Perturbation& delta, std::size_t shift);

}  // namespace advaudio
