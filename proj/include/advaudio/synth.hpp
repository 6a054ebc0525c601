#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advaudio/audio.hpp"

namespace advaudio {

// Formant synthesizer for a small command vocabulary. It stands in for a
// recorded speech-command corpus: every utterance is drawn from a random
// speaker (pitch, vocal-tract length, tempo, loudness, channel tilt,
// background noise) so that words vary the way crowd-sourced recordings do.

struct SpeakerProfile {
  double f0_hz = 120.0;         // mean pitch
  double formant_scale = 1.0;   // vocal tract length factor
  double tempo = 1.0;           // >1 is slower
  double breathiness = 0.05;    // aspiration noise mixed into voicing
  double jitter = 0.01;         // cycle-to-cycle pitch perturbation
};

struct UtteranceOptions {
  int sample_rate = kCanonicalRate;
  double clip_seconds = 1.0;
  double onset_min_s = 0.08;
  double onset_max_s = 0.40;
  double peak_min = 0.25;
  double peak_max = 0.70;
  double noise_dbfs_min = -65.0;
  double noise_dbfs_max = -38.0;
};

// The ten core words of the public speech-command set.
const std::vector<std::string>& synth_vocabulary();

SpeakerProfile random_speaker(std::uint64_t seed);

// One utterance of `word` (must be in synth_vocabulary()) placed in a clip of
// options.clip_seconds with background noise. Deterministic in (word, speaker,
// seed, options).
AudioClip synthesize_word(const std::string& word, const SpeakerProfile& speaker, std::uint64_t seed,
                          const UtteranceOptions& options = {});

struct CorpusSpec {
  std::vector<std::string> words;  // empty = synth_vocabulary()
  int utterances_per_word = 150;
  std::uint64_t seed = 2024;
  UtteranceOptions utterance;
};

struct LabeledClip {
  std::string label;
  std::string id;
  AudioClip audio;
};

// Each utterance uses its own speaker; speaker i of word w is seeded from
// (seed, i), so word sets share the same speaker pool.
std::vector<LabeledClip> synthesize_corpus(const CorpusSpec& spec);

// Writes <dir>/<label>/<id>.wav, the speech-command directory layout.
void write_corpus(const std::vector<LabeledClip>& corpus, const std::filesystem::path& dir);

}  // namespace advaudio
