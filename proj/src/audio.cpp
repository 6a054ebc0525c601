#include "advaudio/audio.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "advaudio/errors.hpp"

namespace advaudio {

AudioClip::AudioClip(std::vector<float> samples, int sample_rate)
    : samples_(std::move(samples)), sample_rate_(sample_rate) {
  if (sample_rate_ <= 0) {
    throw ArgumentError("sample rate must be positive, got " + std::to_string(sample_rate_));
  }
  if (samples_.empty()) throw ArgumentError("audio clip must hold at least one sample");
  for (float s : samples_) {
    if (!(s >= -1.0f && s <= 1.0f)) {
      throw ArgumentError("sample outside [-1, 1]: " + std::to_string(s));
    }
  }
}

float hard_clip(float value) {
  if (std::isnan(value)) return 0.0f;
  return std::clamp(value, -1.0f, 1.0f);
}

AudioClip AudioClip::clipped(std::vector<float> samples, int sample_rate) {
  for (float& s : samples) s = hard_clip(s);
  return AudioClip(std::move(samples), sample_rate);
}

AudioClip AudioClip::silence(std::size_t length, int sample_rate) {
  return AudioClip(std::vector<float>(length, 0.0f), sample_rate);
}

AudioClip mix_at(const AudioClip& carrier, const Perturbation& pert) {
  if (carrier.sample_rate() != pert.delta.sample_rate()) {
    throw RateMismatch("carrier at " + std::to_string(carrier.sample_rate()) +
                       " Hz, perturbation at " + std::to_string(pert.delta.sample_rate()) + " Hz");
  }
  std::vector<float> out = carrier.data();
  if (pert.offset_samples < out.size()) {
    const auto delta = pert.delta.samples();
    const std::size_t n = std::min(delta.size(), out.size() - pert.offset_samples);
    for (std::size_t i = 0; i < n; ++i) {
      out[pert.offset_samples + i] = hard_clip(out[pert.offset_samples + i] + delta[i]);
    }
  }
  return AudioClip(std::move(out), carrier.sample_rate());
}

double l2_distortion(std::span<const float> signal) {
  double sum = 0.0;
  for (float s : signal) sum += static_cast<double>(s) * s;
  return sum;
}

double l2_distortion(const Perturbation& pert) { return l2_distortion(pert.delta.samples()); }

double rms(std::span<const float> signal) {
  if (signal.empty()) return 0.0;
  return std::sqrt(l2_distortion(signal) / static_cast<double>(signal.size()));
}

float peak(std::span<const float> signal) {
  float p = 0.0f;
  for (float s : signal) p = std::max(p, std::abs(s));
  return p;
}

AudioClip slice(const AudioClip& clip, std::size_t begin, std::size_t length) {
  if (length == 0 || begin >= clip.size() || length > clip.size() - begin) {
    throw ArgumentError("slice [" + std::to_string(begin) + ", +" + std::to_string(length) +
                        ") outside clip of " + std::to_string(clip.size()) + " samples");
  }
  const auto s = clip.samples().subspan(begin, length);
  return AudioClip(std::vector<float>(s.begin(), s.end()), clip.sample_rate());
}

}  // namespace advaudio
