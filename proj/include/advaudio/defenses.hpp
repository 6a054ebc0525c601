#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "advaudio/attack.hpp"
#include "advaudio/audio.hpp"
#include "advaudio/distance.hpp"
#include "advaudio/oracle.hpp"

namespace advaudio {

struct DefenseSpec {
  enum class Kind { kNone, kDownSample, kQuantize, kLowPass };

  Kind kind = Kind::kNone;
  int rate = 8000;            // down-sampling
  bool round_trip = true;     // resample back to the input rate afterwards
  int q = 256;                // quantization step in int16 units
  double cutoff_hz = 4000.0;  // low-pass
  int order = 6;

  static DefenseSpec none();
  static DefenseSpec downsample(int rate, bool round_trip = true);
  static DefenseSpec quantize(int q);
  static DefenseSpec lowpass(double cutoff_hz = 4000.0, int order = 6);

  // "none", "ds:8000", "ds:4000:noroundtrip", "q:512", "lp:4000", "lp:4000:6".
  static DefenseSpec parse(std::string_view text);
  std::string name() const;

  friend bool operator==(const DefenseSpec&, const DefenseSpec&) = default;
};

// Down to `rate` and, by default, back up to the original rate.
AudioClip defend_downsample(const AudioClip& clip, int rate, bool round_trip = true);
// Each int16 sample rounded to the nearest multiple of q, ties to even.
AudioClip defend_quantize(const AudioClip& clip, int q);
// Causal Butterworth low-pass, single forward pass.
AudioClip defend_lowpass(const AudioClip& clip, double cutoff_hz = 4000.0, int order = 6);

AudioClip apply_defense(const AudioClip& clip, const DefenseSpec& spec);

// One adversarial example together with what it was crafted against.
struct DefenseCase {
  AudioClip carrier;
  AttackGoal goal;
  AttackResult result;
};

struct DefenseRow {
  std::string spec;
  std::size_t n = 0;
  double success_before = 0.0;       // fraction of cases successful when crafted
  double success_after = 0.0;        // goal still holds after the defense
  double clean_accuracy_after = 0.0; // defended carriers still transcribed as the original

  nlohmann::json to_json() const;
};

// Every query goes through `session` under Phase::kEval.
DefenseRow evaluate_defense(OracleSession& session, const std::vector<DefenseCase>& cases, const DefenseSpec& spec);

struct DefenseReport {
  std::vector<DefenseRow> rows;

  nlohmann::json to_json() const;
  std::string to_csv() const;
  // <stem>.json and <stem>.csv
  void save(const std::filesystem::path& stem) const;
};

}  // namespace advaudio
