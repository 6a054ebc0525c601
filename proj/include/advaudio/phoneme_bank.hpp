#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "advaudio/audio.hpp"
#include "advaudio/synth.hpp"

namespace advaudio {

using Rng = std::mt19937_64;

struct PhonemeClip {
  AudioClip audio;
  std::string source_id;
  double duration_ms = 0.0;

  friend bool operator==(const PhonemeClip&, const PhonemeClip&) = default;
};

struct BankOptions {
  std::size_t n_clips = 453;
  double min_ms = 50.0;
  double max_ms = 300.0;
  double threshold_db = -40.0;  // silence trim, relative to the source peak
  std::uint64_t seed = 0;
};

class PhonemeBank {
 public:
  PhonemeBank(std::vector<PhonemeClip> clips, std::uint64_t seed);

  const std::vector<PhonemeClip>& clips() const { return clips_; }
  std::size_t size() const { return clips_.size(); }
  std::uint64_t seed() const { return seed_; }

  // <dir>/bank.json plus one WAV per clip. Loaded clips carry 16-bit
  // quantization from the WAV round trip.
  void save(const std::filesystem::path& dir) const;
  static PhonemeBank load(const std::filesystem::path& dir);

  friend bool operator==(const PhonemeBank&, const PhonemeBank&) = default;

 private:
  std::vector<PhonemeClip> clips_;
  std::uint64_t seed_;
};

// Drops leading and trailing 20 ms windows whose RMS sits below threshold_db
// relative to the clip peak. Throws SilentInput if nothing survives.
AudioClip trim_silence(const AudioClip& clip, double threshold_db = -40.0);

// Random cuts from random sources. Sources shorter than min_ms after trimming
// are skipped; EmptyCorpus if none remain.
PhonemeBank build_bank(const std::vector<LabeledClip>& sources, const BankOptions& options);

// Reads every WAV under `corpus` (or only the files listed in `manifest`, one
// relative path per line) in sorted order, then builds as above.
PhonemeBank build_bank(const std::filesystem::path& corpus, const BankOptions& options,
                       const std::optional<std::filesystem::path>& manifest = std::nullopt);

const PhonemeClip& sample_phoneme(const PhonemeBank& bank, Rng& rng);

}  // namespace advaudio
