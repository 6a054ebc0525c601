#pragma once

#include <complex>
#include <span>
#include <vector>

#include "advaudio/audio.hpp"

namespace advaudio {

// Kaiser-windowed sinc interpolation, 64 taps per phase (measured at the
// lower of the two rates), cutoff at the lower Nyquist frequency.
// Identity when target_rate == clip.sample_rate().
AudioClip resample(const AudioClip& clip, int target_rate);

// Second-order section in transposed direct form II; a0 is normalized to 1.
// First-order sections keep b2 == a2 == 0.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

using SosCascade = std::vector<Biquad>;

// Digital Butterworth designs via the bilinear transform with pre-warping, so
// the magnitude at `cutoff_hz` is exactly -3.01 dB.
SosCascade butterworth_lowpass(int order, double cutoff_hz, int sample_rate);
SosCascade butterworth_highpass(int order, double cutoff_hz, int sample_rate);

// Causal single pass.
std::vector<double> sos_filter(const SosCascade& sos, std::span<const double> x);
// Forward-backward pass with odd-extension padding and steady-state initial
// conditions; zero phase, squared magnitude.
std::vector<double> sos_filtfilt(const SosCascade& sos, std::span<const double> x);

std::complex<double> frequency_response(const SosCascade& sos, double freq_hz, int sample_rate);

// Zero-phase band-pass: Butterworth high-pass at `low_hz` cascaded with a
// low-pass at `high_hz` (skipped when high_hz is the Nyquist frequency).
// Throws BandError unless 0 < low < high <= Nyquist.
AudioClip band_limit(const AudioClip& clip, double low_hz = 50.0, double high_hz = 8000.0);

// Same filter on a raw signal that may leave [-1, 1] (used for perturbations
// under construction).
std::vector<float> band_limit_signal(std::span<const float> signal, int sample_rate,
                                     double low_hz = 50.0, double high_hz = 8000.0);

}  // namespace advaudio
