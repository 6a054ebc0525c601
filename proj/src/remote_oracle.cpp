#include "advaudio/remote_oracle.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "advaudio/errors.hpp"
#include "advaudio/wav.hpp"

namespace advaudio {
namespace {

const char* body_name(RemoteConfig::Body b) { return b == RemoteConfig::Body::kWav ? "wav" : "base64_json"; }

Transcript parse_reply(const std::string& body, const std::string& pointer) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw RequestError(std::string("response is not JSON: ") + e.what());
  }
  nlohmann::json::json_pointer ptr;
  try {
    ptr = nlohmann::json::json_pointer(pointer);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad transcript path '" + pointer + "': " + e.what());
  }
  if (!j.contains(ptr)) return Transcript::rejected();
  const auto& v = j.at(ptr);
  if (v.is_null()) return Transcript::rejected();
  if (!v.is_string()) throw RequestError("transcript field at " + pointer + " is not a string");
  return Transcript::from_raw(v.get<std::string>());
}

}  // namespace

RemoteConfig RemoteConfig::from_json(const nlohmann::json& j) {
  RemoteConfig c;
  c.url = j.at("url").get<std::string>();
  const auto body = j.value("body", std::string("wav"));
  if (body == "wav") {
    c.body = Body::kWav;
  } else if (body == "base64_json") {
    c.body = Body::kBase64Json;
  } else {
    throw ConfigError("unknown body mode '" + body + "'");
  }
  c.audio_field = j.value("audio_field", c.audio_field);
  c.token_env = j.value("token_env", c.token_env);
  c.transcript_path = j.value("transcript_path", c.transcript_path);
  c.sample_rate = j.value("sample_rate", c.sample_rate);
  c.max_duration_s = j.value("max_duration_s", c.max_duration_s);
  c.attempts = j.value("attempts", c.attempts);
  c.backoff_ms = j.value("backoff_ms", c.backoff_ms);
  c.timeout_s = j.value("timeout_s", c.timeout_s);
  c.max_qps = j.value("max_qps", c.max_qps);
  return c;
}

nlohmann::json RemoteConfig::to_json() const {
  return {{"url", url},
          {"body", body_name(body)},
          {"audio_field", audio_field},
          {"token_env", token_env},
          {"transcript_path", transcript_path},
          {"sample_rate", sample_rate},
          {"max_duration_s", max_duration_s},
          {"attempts", attempts},
          {"backoff_ms", backoff_ms},
          {"timeout_s", timeout_s},
          {"max_qps", max_qps}};
}

RemoteOracle::RemoteOracle(RemoteConfig config) : config_(std::move(config)) {
  if (config_.attempts < 1) throw ConfigError("attempts must be >= 1");
  if (config_.max_qps < 0.0 || config_.backoff_ms < 0.0 || config_.timeout_s <= 0.0) {
    throw ConfigError("bad remote timing settings");
  }
  const auto scheme = config_.url.find("://");
  if (scheme == std::string::npos) throw ConfigError("url needs a scheme: " + config_.url);
  const auto slash = config_.url.find('/', scheme + 3);
  origin_ = config_.url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : config_.url.substr(slash);
  if (!config_.token_env.empty()) {
    const char* token = std::getenv(config_.token_env.c_str());
    if (token == nullptr || *token == '\0') throw AuthError("environment variable " + config_.token_env + " is not set");
    token_ = token;
  }
}

void RemoteOracle::throttle() {
  if (config_.max_qps <= 0.0) return;
  const auto gap = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(1.0 / config_.max_qps));
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(throttle_mutex_);
    slot = std::max(next_slot_, std::chrono::steady_clock::now());
    next_slot_ = slot + gap;
  }
  std::this_thread::sleep_until(slot);
}

Transcript RemoteOracle::transcribe(const AudioClip& clip) {
  if (clip.duration_seconds() > config_.max_duration_s) {
    throw RequestError("clip of " + std::to_string(clip.duration_seconds()) + " s exceeds the provider limit");
  }
  const auto wav = encode_wav(clip);
  std::string body(wav.begin(), wav.end());
  std::string content_type = "audio/wav";
  if (config_.body == RemoteConfig::Body::kBase64Json) {
    body = nlohmann::json{{config_.audio_field, httplib::detail::base64_encode(body)},
                          {"sample_rate", clip.sample_rate()}}
               .dump();
    content_type = "application/json";
  }
  httplib::Headers headers;
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

  httplib::Client client(origin_);
  const auto timeout = std::chrono::duration<double>(config_.timeout_s);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

  std::string last_error;
  double backoff = config_.backoff_ms;
  for (int attempt = 0; attempt < config_.attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(backoff));
      backoff *= 2.0;
    }
    throttle();
    const auto res = client.Post(path_, headers, body, content_type);
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    const int status = res->status;
    if (status == 401 || status == 403) throw AuthError("server answered " + std::to_string(status));
    if (status == 429 || status >= 500) {
      last_error = "server answered " + std::to_string(status);
      continue;
    }
    if (status >= 400) throw RequestError("server answered " + std::to_string(status) + ": " + res->body);
    if (status < 200 || status >= 300) {
      last_error = "unexpected status " + std::to_string(status);
      continue;
    }
    return parse_reply(res->body, config_.transcript_path);
  }
  throw OracleUnavailable("no answer from " + config_.url + " after " + std::to_string(config_.attempts) +
                          " attempts (" + last_error + ")");
}

}  // namespace advaudio
