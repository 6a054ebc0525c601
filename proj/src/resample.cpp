#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>

#include "advaudio/dsp.hpp"
#include "advaudio/errors.hpp"

namespace advaudio {
namespace {

constexpr int kTapsPerPhase = 64;
constexpr double kKaiserBeta = 8.0;
constexpr std::int64_t kMaxTablePhases = 4096;

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

double kaiser(double x, double half_width) {
  const double r = x / half_width;
  if (r <= -1.0 || r >= 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - r * r)) /
         std::cyl_bessel_i(0.0, kKaiserBeta);
}

// Taps for one fractional position; tap i multiplies input sample base-H+1+i.
std::vector<double> phase_taps(double frac, int half_taps, double cutoff, double half_width) {
  std::vector<double> taps(2 * static_cast<std::size_t>(half_taps));
  double sum = 0.0;
  for (int i = 0; i < 2 * half_taps; ++i) {
    const double x = frac + half_taps - 1 - i;
    taps[i] = 2.0 * cutoff * sinc(2.0 * cutoff * x) * kaiser(x, half_width);
    sum += taps[i];
  }
  if (sum != 0.0) {
    for (double& t : taps) t /= sum;
  }
  return taps;
}

}  // namespace

AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) throw ArgumentError("target rate must be positive: " + std::to_string(target_rate));
  const int source_rate = clip.sample_rate();
  if (target_rate == source_rate) return clip;

  const std::int64_t g = std::gcd(source_rate, target_rate);
  const std::int64_t up = target_rate / g;
  const std::int64_t down = source_rate / g;
  const auto n_in = static_cast<std::int64_t>(clip.size());
  const std::int64_t n_out = std::max<std::int64_t>(1, (n_in * up + down / 2) / down);

  const double ratio = std::min(1.0, static_cast<double>(target_rate) / source_rate);
  const double cutoff = 0.5 * ratio;  // cycles per input sample
  const double half_width = (kTapsPerPhase / 2) / ratio;
  const int half_taps = static_cast<int>(std::ceil(half_width));

  std::vector<std::vector<double>> table;
  if (up <= kMaxTablePhases) {
    table.reserve(static_cast<std::size_t>(up));
    for (std::int64_t p = 0; p < up; ++p) {
      table.push_back(phase_taps(static_cast<double>(p) / up, half_taps, cutoff, half_width));
    }
  }

  const auto in = clip.samples();
  std::vector<float> out(static_cast<std::size_t>(n_out));
  for (std::int64_t j = 0; j < n_out; ++j) {
    const std::int64_t num = j * down;
    const std::int64_t base = num / up;
    const std::int64_t phase = num % up;
    const std::vector<double> direct =
        table.empty() ? phase_taps(static_cast<double>(phase) / up, half_taps, cutoff, half_width)
                      : std::vector<double>{};
    const std::vector<double>& taps = table.empty() ? direct : table[static_cast<std::size_t>(phase)];
    double acc = 0.0;
    const std::int64_t first = base - half_taps + 1;
    for (int i = 0; i < 2 * half_taps; ++i) {
      const std::int64_t k = first + i;
      if (k >= 0 && k < n_in) acc += taps[i] * in[static_cast<std::size_t>(k)];
    }
    out[static_cast<std::size_t>(j)] = hard_clip(static_cast<float>(acc));
  }
  return AudioClip(std::move(out), target_rate);
}

}  // namespace advaudio
