#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace advaudio {

inline constexpr int kCanonicalRate = 16000;

// Mono waveform with amplitudes in [-1, +1]. Immutable once built; the
// constructor rejects empty, non-finite or out-of-range input.
class AudioClip {
 public:
  AudioClip(std::vector<float> samples, int sample_rate);

  // Hard-clips every sample into [-1, +1] (NaN becomes 0) before building.
  static AudioClip clipped(std::vector<float> samples, int sample_rate);
  static AudioClip silence(std::size_t length, int sample_rate);

  std::span<const float> samples() const { return samples_; }
  const std::vector<float>& data() const { return samples_; }
  int sample_rate() const { return sample_rate_; }
  std::size_t size() const { return samples_.size(); }
  double duration_seconds() const {
    return static_cast<double>(samples_.size()) / sample_rate_;
  }

  friend bool operator==(const AudioClip&, const AudioClip&) = default;

 private:
  std::vector<float> samples_;
  int sample_rate_;
};

// Additive signal inserted into a carrier starting at offset_samples.
struct Perturbation {
  AudioClip delta;
  std::size_t offset_samples = 0;

  friend bool operator==(const Perturbation&, const Perturbation&) = default;
};

// carrier + delta (placed at the offset, truncated at the carrier end),
// hard-clipped. Output length always equals carrier length.
AudioClip mix_at(const AudioClip& carrier, const Perturbation& pert);

// Sum of squared amplitudes on the unit scale.
double l2_distortion(const Perturbation& pert);
double l2_distortion(std::span<const float> signal);

double rms(std::span<const float> signal);
float peak(std::span<const float> signal);
float hard_clip(float value);

// Sub-range [begin, begin + length) of a clip; throws ArgumentError when out
// of bounds or empty.
AudioClip slice(const AudioClip& clip, std::size_t begin, std::size_t length);

}  // namespace advaudio
