#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "advaudio/dsp.hpp"
#include "advaudio/errors.hpp"

namespace advaudio {
namespace {

constexpr int kBandLimitOrder = 4;

enum class Kind { kLow, kHigh };

void check_design(int order, double cutoff_hz, int sample_rate) {
  if (order < 1) throw ArgumentError("filter order must be >= 1, got " + std::to_string(order));
  if (sample_rate <= 0) throw ArgumentError("sample rate must be positive");
  if (!(cutoff_hz > 0.0 && cutoff_hz < 0.5 * sample_rate)) {
    throw BandError("cutoff " + std::to_string(cutoff_hz) + " Hz outside (0, Nyquist) at " +
                    std::to_string(sample_rate) + " Hz");
  }
}

// Butterworth as a cascade of cookbook biquads with the prototype's pole Qs,
// plus one bilinear first-order section for odd orders.
SosCascade butterworth(Kind kind, int order, double cutoff_hz, int sample_rate) {
  check_design(order, cutoff_hz, sample_rate);
  SosCascade sos;
  const double w0 = 2.0 * std::numbers::pi * cutoff_hz / sample_rate;
  const double cw = std::cos(w0);
  const double sw = std::sin(w0);
  for (int k = 1; k <= order / 2; ++k) {
    const double angle = (order % 2 == 0) ? (2.0 * k - 1.0) * std::numbers::pi / (2.0 * order)
                                          : k * std::numbers::pi / order;
    const double q = 1.0 / (2.0 * std::cos(angle));
    const double alpha = sw / (2.0 * q);
    const double a0 = 1.0 + alpha;
    Biquad bq;
    if (kind == Kind::kLow) {
      bq.b0 = (1.0 - cw) / 2.0 / a0;
      bq.b1 = (1.0 - cw) / a0;
      bq.b2 = bq.b0;
    } else {
      bq.b0 = (1.0 + cw) / 2.0 / a0;
      bq.b1 = -(1.0 + cw) / a0;
      bq.b2 = bq.b0;
    }
    bq.a1 = -2.0 * cw / a0;
    bq.a2 = (1.0 - alpha) / a0;
    sos.push_back(bq);
  }
  if (order % 2 == 1) {
    const double t = std::tan(w0 / 2.0);
    Biquad fo;
    if (kind == Kind::kLow) {
      fo.b0 = t / (1.0 + t);
      fo.b1 = fo.b0;
    } else {
      fo.b0 = 1.0 / (1.0 + t);
      fo.b1 = -fo.b0;
    }
    fo.a1 = (t - 1.0) / (t + 1.0);
    sos.push_back(fo);
  }
  return sos;
}

struct State {
  double z1 = 0.0, z2 = 0.0;
};

// Steady-state section states for a unit step input, scaled down the cascade.
std::vector<State> steady_state(const SosCascade& sos) {
  std::vector<State> zi(sos.size());
  double scale = 1.0;
  for (std::size_t i = 0; i < sos.size(); ++i) {
    const Biquad& s = sos[i];
    const double denom = 1.0 + s.a1 + s.a2;
    const double gain = std::abs(denom) < 1e-300 ? 0.0 : (s.b0 + s.b1 + s.b2) / denom;
    zi[i].z2 = scale * (s.b2 - s.a2 * gain);
    zi[i].z1 = scale * (s.b1 - s.a1 * gain) + zi[i].z2;
    scale *= gain;
  }
  return zi;
}

void run_cascade(const SosCascade& sos, std::vector<double>& x, std::vector<State> state) {
  for (std::size_t i = 0; i < sos.size(); ++i) {
    const Biquad& s = sos[i];
    State& z = state[i];
    for (double& v : x) {
      const double in = v;
      const double out = s.b0 * in + z.z1;
      z.z1 = s.b1 * in - s.a1 * out + z.z2;
      z.z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
}

std::vector<State> scaled(std::vector<State> zi, double by) {
  for (State& z : zi) {
    z.z1 *= by;
    z.z2 *= by;
  }
  return zi;
}

}  // namespace

SosCascade butterworth_lowpass(int order, double cutoff_hz, int sample_rate) {
  return butterworth(Kind::kLow, order, cutoff_hz, sample_rate);
}

SosCascade butterworth_highpass(int order, double cutoff_hz, int sample_rate) {
  return butterworth(Kind::kHigh, order, cutoff_hz, sample_rate);
}

std::vector<double> sos_filter(const SosCascade& sos, std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  run_cascade(sos, y, std::vector<State>(sos.size()));
  return y;
}

std::vector<double> sos_filtfilt(const SosCascade& sos, std::span<const double> x) {
  if (x.empty()) return {};
  const std::size_t n = x.size();
  const std::size_t padlen = std::min<std::size_t>(n - 1, 3 * (2 * sos.size() + 1));

  std::vector<double> ext;
  ext.reserve(n + 2 * padlen);
  for (std::size_t i = padlen; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= padlen; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  const auto zi = steady_state(sos);
  run_cascade(sos, ext, scaled(zi, ext.front()));
  std::reverse(ext.begin(), ext.end());
  run_cascade(sos, ext, scaled(zi, ext.front()));
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(padlen),
          ext.begin() + static_cast<std::ptrdiff_t>(padlen + n)};
}

std::complex<double> frequency_response(const SosCascade& sos, double freq_hz, int sample_rate) {
  const double w = 2.0 * std::numbers::pi * freq_hz / sample_rate;
  const std::complex<double> z1 = std::polar(1.0, -w);
  const std::complex<double> z2 = z1 * z1;
  std::complex<double> h = 1.0;
  for (const Biquad& s : sos) {
    h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  }
  return h;
}

std::vector<float> band_limit_signal(std::span<const float> signal, int sample_rate, double low_hz,
                                     double high_hz) {
  const double nyquist = 0.5 * sample_rate;
  if (!(low_hz > 0.0 && low_hz < high_hz && high_hz <= nyquist)) {
    throw BandError("band [" + std::to_string(low_hz) + ", " + std::to_string(high_hz) +
                    "] Hz invalid for Nyquist " + std::to_string(nyquist) + " Hz");
  }
  SosCascade sos = butterworth_highpass(kBandLimitOrder, low_hz, sample_rate);
  if (high_hz < nyquist * (1.0 - 1e-9)) {
    const SosCascade lp = butterworth_lowpass(kBandLimitOrder, high_hz, sample_rate);
    sos.insert(sos.end(), lp.begin(), lp.end());
  }
  const std::vector<double> x(signal.begin(), signal.end());
  const std::vector<double> y = sos_filtfilt(sos, x);
  return {y.begin(), y.end()};
}

AudioClip band_limit(const AudioClip& clip, double low_hz, double high_hz) {
  return AudioClip::clipped(band_limit_signal(clip.samples(), clip.sample_rate(), low_hz, high_hz),
                            clip.sample_rate());
}

}  // namespace advaudio
