#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advaudio/audio.hpp"
#include "advaudio/transcript.hpp"

namespace advaudio {

// What a query was spent on.
enum class Phase : std::uint8_t { kInit = 0, kGradient = 1, kFineTune = 2, kEval = 3 };
inline constexpr std::size_t kPhaseCount = 4;
const char* phase_name(Phase phase);

struct QueryLedger {
  std::uint64_t total_queries = 0;
  double total_audio_seconds = 0.0;
  std::array<std::uint64_t, kPhaseCount> per_phase{};

  void record(Phase phase, double audio_seconds);
  std::uint64_t count(Phase phase) const { return per_phase[static_cast<std::size_t>(phase)]; }
  // Every query in `other` added to this ledger.
  void merge(const QueryLedger& other);

  nlohmann::json to_json() const;
  static QueryLedger from_json(const nlohmann::json& j);

  friend bool operator==(const QueryLedger&, const QueryLedger&) = default;
};

// Queried audio minutes times the provider's per-minute price.
double estimate_cost(const QueryLedger& ledger, double price_per_minute);

// Hard-label speech-to-text back end. Implementations must tolerate
// concurrent transcribe() calls.
class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual Transcript transcribe(const AudioClip& clip) = 0;
  virtual int sample_rate() const { return kCanonicalRate; }
};

struct SessionOptions {
  bool cache = true;
  std::optional<std::uint64_t> budget;  // hard cap on counted queries
};

// Accounting front end over an Oracle: every round trip is recorded in the
// ledger exactly once; failed round trips are not counted. Thread-safe.
class OracleSession {
 public:
  explicit OracleSession(Oracle& oracle, SessionOptions options = {});

  // Always performs a round trip. Throws BudgetExhausted when the budget is
  // spent and RateMismatch for clips at the wrong rate.
  Transcript query(const AudioClip& clip, Phase phase);
  // Byte-identical audio seen before is answered from the cache without a
  // round trip (when caching is enabled).
  Transcript cached_query(const AudioClip& clip, Phase phase);

  QueryLedger ledger() const;
  std::uint64_t queries() const;
  // Queries left before the budget is hit; max uint64 when unbounded.
  std::uint64_t remaining() const;
  void set_budget(std::optional<std::uint64_t> budget);
  std::size_t cache_size() const;
  Oracle& oracle() { return oracle_; }

 private:
  Transcript round_trip(const AudioClip& clip, Phase phase);

  Oracle& oracle_;
  SessionOptions options_;
  mutable std::mutex mutex_;
  QueryLedger ledger_;
  std::uint64_t in_flight_ = 0;
  // Keyed by two independent 64-bit digests of the audio; only transcripts
  // are stored.
  std::map<std::pair<std::uint64_t, std::uint64_t>, Transcript> cache_;
};

// 64-bit FNV-1a over the sample rate and raw sample bytes.
std::uint64_t audio_digest(const AudioClip& clip);
// Second, independent digest (splitmix64 chain over the same bytes).
std::uint64_t audio_digest_alt(const AudioClip& clip);

}  // namespace advaudio
