#pragma once

#include <chrono>
#include <mutex>
#include <string>

#include <nlohmann/json.hpp>

#include "advaudio/oracle.hpp"

namespace advaudio {

struct RemoteConfig {
  enum class Body { kWav, kBase64Json };

  std::string url;                         // http://host:port/path
  Body body = Body::kWav;
  std::string audio_field = "audio";       // base64 JSON body only
  std::string token_env;                   // bearer token variable; empty sends no auth header
  std::string transcript_path = "/transcript";  // JSON pointer into the response
  int sample_rate = kCanonicalRate;
  double max_duration_s = 60.0;
  int attempts = 3;
  double backoff_ms = 250.0;               // doubled after every failed attempt
  double timeout_s = 30.0;
  double max_qps = 10.0;                   // 0 disables throttling

  static RemoteConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Hard-label REST back end. Transient failures (connection errors, 429, 5xx)
// are retried; after the last attempt OracleUnavailable is thrown. 401/403
// throw AuthError, other 4xx and unparseable replies throw RequestError. An
// absent, null or empty transcript field is a rejection.
class RemoteOracle : public Oracle {
 public:
  explicit RemoteOracle(RemoteConfig config);

  Transcript transcribe(const AudioClip& clip) override;
  int sample_rate() const override { return config_.sample_rate; }
  const RemoteConfig& config() const { return config_; }

 private:
  void throttle();

  RemoteConfig config_;
  std::string origin_;
  std::string path_;
  std::string token_;
  std::mutex throttle_mutex_;
  std::chrono::steady_clock::time_point next_slot_{};
};

}  // namespace advaudio
