#include "advaudio/oracle.hpp"

#include <cstring>
#include <limits>

#include "advaudio/errors.hpp"

namespace advaudio {

const char* phase_name(Phase phase) {
  switch (phase) {
    case Phase::kInit:
      return "init";
    case Phase::kGradient:
      return "gradient";
    case Phase::kFineTune:
      return "finetune";
    case Phase::kEval:
      return "eval";
  }
  return "unknown";
}

void QueryLedger::record(Phase phase, double audio_seconds) {
  ++total_queries;
  total_audio_seconds += audio_seconds;
  ++per_phase[static_cast<std::size_t>(phase)];
}

void QueryLedger::merge(const QueryLedger& other) {
  total_queries += other.total_queries;
  total_audio_seconds += other.total_audio_seconds;
  for (std::size_t i = 0; i < kPhaseCount; ++i) per_phase[i] += other.per_phase[i];
}

nlohmann::json QueryLedger::to_json() const {
  nlohmann::json phases = nlohmann::json::object();
  for (std::size_t i = 0; i < kPhaseCount; ++i) phases[phase_name(static_cast<Phase>(i))] = per_phase[i];
  return {{"total_queries", total_queries},
          {"total_audio_seconds", total_audio_seconds},
          {"per_phase", phases}};
}

QueryLedger QueryLedger::from_json(const nlohmann::json& j) {
  QueryLedger l;
  l.total_queries = j.at("total_queries").get<std::uint64_t>();
  l.total_audio_seconds = j.at("total_audio_seconds").get<double>();
  const auto& phases = j.at("per_phase");
  for (std::size_t i = 0; i < kPhaseCount; ++i) {
    l.per_phase[i] = phases.value(phase_name(static_cast<Phase>(i)), std::uint64_t{0});
  }
  return l;
}

double estimate_cost(const QueryLedger& ledger, double price_per_minute) {
  if (price_per_minute < 0.0) throw ArgumentError("price per minute must be >= 0");
  return ledger.total_audio_seconds / 60.0 * price_per_minute;
}

std::uint64_t audio_digest(const AudioClip& clip) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  const int rate = clip.sample_rate();
  mix(&rate, sizeof rate);
  mix(clip.data().data(), clip.size() * sizeof(float));
  return h;
}

std::uint64_t audio_digest_alt(const AudioClip& clip) {
  const auto mix = [](std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(clip.sample_rate()));
  h = mix(h ^ clip.size());
  for (float v : clip.samples()) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = mix(h + 0x9e3779b97f4a7c15ULL + bits);
  }
  return h;
}

OracleSession::OracleSession(Oracle& oracle, SessionOptions options)
    : oracle_(oracle), options_(options) {}

Transcript OracleSession::round_trip(const AudioClip& clip, Phase phase) {
  if (clip.sample_rate() != oracle_.sample_rate()) {
    throw RateMismatch("oracle expects " + std::to_string(oracle_.sample_rate()) + " Hz, clip is " +
                       std::to_string(clip.sample_rate()) + " Hz");
  }
  {
    std::lock_guard lock(mutex_);
    if (options_.budget && ledger_.total_queries + in_flight_ >= *options_.budget) {
      throw BudgetExhausted("query budget of " + std::to_string(*options_.budget) + " spent");
    }
    ++in_flight_;
  }
  try {
    Transcript t = oracle_.transcribe(clip);
    std::lock_guard lock(mutex_);
    --in_flight_;
    ledger_.record(phase, clip.duration_seconds());
    return t;
  } catch (...) {
    std::lock_guard lock(mutex_);
    --in_flight_;
    throw;
  }
}

Transcript OracleSession::query(const AudioClip& clip, Phase phase) { return round_trip(clip, phase); }

Transcript OracleSession::cached_query(const AudioClip& clip, Phase phase) {
  if (!options_.cache) return round_trip(clip, phase);
  const std::pair key{audio_digest(clip), audio_digest_alt(clip)};
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  Transcript t = round_trip(clip, phase);
  std::lock_guard lock(mutex_);
  cache_.emplace(key, t);
  return t;
}

QueryLedger OracleSession::ledger() const {
  std::lock_guard lock(mutex_);
  return ledger_;
}

std::uint64_t OracleSession::queries() const {
  std::lock_guard lock(mutex_);
  return ledger_.total_queries;
}

std::uint64_t OracleSession::remaining() const {
  std::lock_guard lock(mutex_);
  if (!options_.budget) return std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t used = ledger_.total_queries + in_flight_;
  return used >= *options_.budget ? 0 : *options_.budget - used;
}

void OracleSession::set_budget(std::optional<std::uint64_t> budget) {
  std::lock_guard lock(mutex_);
  options_.budget = budget;
}

std::size_t OracleSession::cache_size() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

}  // namespace advaudio
