#include "advaudio/mfcc.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "advaudio/errors.hpp"

namespace advaudio {
namespace {

double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }

struct MelBank {
  // weights[f] spans bins [first[f], first[f] + weights[f].size())
  std::vector<int> first;
  std::vector<std::vector<double>> weights;
};

MelBank make_mel_bank(const MfccConfig& c) {
  const double high = c.high_hz > 0.0 ? c.high_hz : 0.5 * c.sample_rate;
  const double mel_lo = hz_to_mel(c.low_hz);
  const double mel_hi = hz_to_mel(high);
  const int bins = c.fft_size / 2 + 1;
  MelBank bank;
  for (int f = 0; f < c.num_filters; ++f) {
    const double left = mel_lo + (mel_hi - mel_lo) * f / (c.num_filters + 1);
    const double centre = mel_lo + (mel_hi - mel_lo) * (f + 1) / (c.num_filters + 1);
    const double right = mel_lo + (mel_hi - mel_lo) * (f + 2) / (c.num_filters + 1);
    int first = -1;
    std::vector<double> w;
    for (int b = 0; b < bins; ++b) {
      const double mel = hz_to_mel(static_cast<double>(b) * c.sample_rate / c.fft_size);
      double v = 0.0;
      if (mel > left && mel <= centre) {
        v = (mel - left) / (centre - left);
      } else if (mel > centre && mel < right) {
        v = (right - mel) / (right - centre);
      }
      if (v > 0.0) {
        if (first < 0) first = b;
        w.resize(static_cast<std::size_t>(b - first + 1), 0.0);
        w.back() = v;
      }
    }
    bank.first.push_back(std::max(first, 0));
    bank.weights.push_back(std::move(w));
  }
  return bank;
}

}  // namespace

int MfccConfig::frame_length() const { return static_cast<int>(std::lround(frame_ms * sample_rate / 1000.0)); }
int MfccConfig::hop_length() const { return static_cast<int>(std::lround(hop_ms * sample_rate / 1000.0)); }

nlohmann::json MfccConfig::to_json() const {
  return {{"sample_rate", sample_rate}, {"frame_ms", frame_ms},       {"hop_ms", hop_ms},
          {"fft_size", fft_size},       {"num_filters", num_filters}, {"num_ceps", num_ceps},
          {"low_hz", low_hz},           {"high_hz", high_hz},         {"preemphasis", preemphasis},
          {"remove_dc", remove_dc},     {"deltas", deltas},           {"delta_window", delta_window},
          {"noise_floor_quantile", noise_floor_quantile}, {"noise_floor_scale", noise_floor_scale},
          {"energy_floor", energy_floor}};
}

MfccConfig MfccConfig::from_json(const nlohmann::json& j) {
  MfccConfig c;
  c.sample_rate = j.at("sample_rate").get<int>();
  c.frame_ms = j.at("frame_ms").get<double>();
  c.hop_ms = j.at("hop_ms").get<double>();
  c.fft_size = j.at("fft_size").get<int>();
  c.num_filters = j.at("num_filters").get<int>();
  c.num_ceps = j.at("num_ceps").get<int>();
  c.low_hz = j.at("low_hz").get<double>();
  c.high_hz = j.at("high_hz").get<double>();
  c.preemphasis = j.at("preemphasis").get<double>();
  c.remove_dc = j.value("remove_dc", false);
  c.noise_floor_quantile = j.value("noise_floor_quantile", 0.0);
  c.noise_floor_scale = j.value("noise_floor_scale", 1.0);
  c.energy_floor = j.value("energy_floor", 1e-10);
  c.deltas = j.at("deltas").get<bool>();
  c.delta_window = j.at("delta_window").get<int>();
  return c;
}

void fft_inplace(std::vector<double>& re, std::vector<double>& im) {
  const std::size_t n = re.size();
  if (n == 0 || (n & (n - 1)) != 0 || im.size() != n) throw ArgumentError("FFT size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (std::size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::size_t a = i + k, b = i + k + len / 2;
        const double tr = re[b] * cr - im[b] * ci;
        const double ti = re[b] * ci + im[b] * cr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
        const double nr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = nr;
      }
    }
  }
}

std::vector<std::vector<double>> mfcc(std::span<const float> signal, const MfccConfig& c) {
  const int frame = c.frame_length();
  const int hop = c.hop_length();
  if (frame <= 0 || hop <= 0 || frame > c.fft_size) throw ArgumentError("bad MFCC framing");
  const std::size_t n = signal.size();
  const std::size_t frames = n <= static_cast<std::size_t>(frame) ? 1 : 1 + (n - frame) / hop;

  // Mel bank and DCT are cached per thread for the last config seen.
  thread_local MfccConfig cached_cfg{};
  thread_local bool have_cache = false;
  thread_local MelBank bank;
  thread_local std::vector<double> window;
  thread_local std::vector<std::vector<double>> dct;
  if (!have_cache || !(cached_cfg == c)) {
    bank = make_mel_bank(c);
    window.resize(static_cast<std::size_t>(frame));
    for (int i = 0; i < frame; ++i) {
      window[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (frame - 1));
    }
    dct.assign(static_cast<std::size_t>(c.num_ceps), std::vector<double>(static_cast<std::size_t>(c.num_filters)));
    for (int k = 0; k < c.num_ceps; ++k) {
      for (int f = 0; f < c.num_filters; ++f) {
        dct[k][f] = std::cos(std::numbers::pi * k * (f + 0.5) / c.num_filters) *
                    std::sqrt((k == 0 ? 1.0 : 2.0) / c.num_filters);
      }
    }
    cached_cfg = c;
    have_cache = true;
  }

  std::vector<std::vector<double>> mel(frames, std::vector<double>(static_cast<std::size_t>(c.num_filters)));
  std::vector<double> re(static_cast<std::size_t>(c.fft_size)), im(re.size());
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(re.begin(), re.end(), 0.0);
    std::fill(im.begin(), im.end(), 0.0);
    const std::size_t start = t * hop;
    const auto at = [&](std::size_t i) { return i < n ? static_cast<double>(signal[i]) : 0.0; };
    double dc = 0.0;
    if (c.remove_dc) {
      for (int i = 0; i < frame; ++i) dc += at(start + i);
      dc /= frame;
    }
    double prev = (start > 0 ? at(start - 1) : 0.0) - (start > 0 ? dc : 0.0);
    for (int i = 0; i < frame; ++i) {
      const double x = at(start + i) - dc;
      re[i] = (x - c.preemphasis * prev) * window[i];
      prev = x;
    }
    fft_inplace(re, im);
    for (int f = 0; f < c.num_filters; ++f) {
      double e = 0.0;
      const auto& w = bank.weights[f];
      for (std::size_t k = 0; k < w.size(); ++k) {
        const std::size_t b = bank.first[f] + k;
        e += w[k] * (re[b] * re[b] + im[b] * im[b]);
      }
      mel[t][f] = e;
    }
  }

  // Stationary background: per band, the quantile of energy over time is
  // taken as the noise floor and subtracted.
  if (c.noise_floor_quantile > 0.0) {
    std::vector<double> band(frames);
    const auto idx = static_cast<std::size_t>(c.noise_floor_quantile * static_cast<double>(frames - 1));
    for (int f = 0; f < c.num_filters; ++f) {
      for (std::size_t t = 0; t < frames; ++t) band[t] = mel[t][f];
      std::nth_element(band.begin(), band.begin() + static_cast<std::ptrdiff_t>(idx), band.end());
      const double floor = band[idx];
      for (std::size_t t = 0; t < frames; ++t) mel[t][f] = std::max(mel[t][f] - c.noise_floor_scale * floor, 0.0);
    }
  }

  std::vector<std::vector<double>> ceps(frames, std::vector<double>(static_cast<std::size_t>(c.num_ceps)));
  std::vector<double> energies(static_cast<std::size_t>(c.num_filters));
  for (std::size_t t = 0; t < frames; ++t) {
    for (int f = 0; f < c.num_filters; ++f) energies[f] = std::log(mel[t][f] + c.energy_floor);
    for (int k = 0; k < c.num_ceps; ++k) {
      double v = 0.0;
      for (int f = 0; f < c.num_filters; ++f) v += dct[k][f] * energies[f];
      ceps[t][k] = v;
    }
  }
  if (!c.deltas) return ceps;

  const int w = c.delta_window;
  double denom = 0.0;
  for (int d = 1; d <= w; ++d) denom += 2.0 * d * d;
  std::vector<std::vector<double>> out(frames, std::vector<double>(static_cast<std::size_t>(c.dims())));
  const auto last = static_cast<std::ptrdiff_t>(frames) - 1;
  for (std::size_t t = 0; t < frames; ++t) {
    for (int k = 0; k < c.num_ceps; ++k) {
      out[t][k] = ceps[t][k];
      double acc = 0.0;
      for (int d = 1; d <= w; ++d) {
        const auto ahead = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(t) + d, last);
        const auto behind = std::max<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(t) - d, 0);
        acc += d * (ceps[ahead][k] - ceps[behind][k]);
      }
      out[t][c.num_ceps + k] = acc / denom;
    }
  }
  return out;
}

}  // namespace advaudio
