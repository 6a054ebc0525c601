#pragma once

#include <atomic>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "advaudio/audio.hpp"
#include "advaudio/dsp.hpp"
#include "advaudio/oracle.hpp"

namespace advaudio::testing {

inline AudioClip tone(double hz, double seconds, int rate = kCanonicalRate, double amp = 0.5) {
  std::vector<float> s(static_cast<std::size_t>(std::lround(seconds * rate)));
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate));
  }
  return AudioClip(std::move(s), rate);
}

inline double rms_range(std::span<const float> s, std::size_t begin, std::size_t end) {
  double acc = 0.0;
  for (std::size_t i = begin; i < end; ++i) acc += static_cast<double>(s[i]) * s[i];
  return std::sqrt(acc / static_cast<double>(end - begin));
}

inline double db(double ratio) { return 20.0 * std::log10(ratio); }

inline double correlation(std::span<const float> a, std::span<const float> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// Hard-label oracle that answers "b" when w . x > c and "a" otherwise, so
// the smallest perturbation flipping a carrier is known in closed form.
class LinearOracle : public Oracle {
 public:
  LinearOracle(std::vector<double> w, double c) : w_(std::move(w)), c_(c) {}

  Transcript transcribe(const AudioClip& clip) override {
    return Transcript::from_raw(score(clip) > c_ ? "b" : "a");
  }
  double score(const AudioClip& clip) const {
    double s = 0.0;
    const auto x = clip.samples();
    for (std::size_t i = 0; i < w_.size() && i < x.size(); ++i) s += w_[i] * x[i];
    return s;
  }
  const std::vector<double>& w() const { return w_; }

 private:
  std::vector<double> w_;
  double c_;
};

struct LinearProblem {
  AudioClip x0;
  std::vector<double> w_hat;  // unit norm, band-limited
  double d_star = 0.0;        // minimum l2 norm of a flipping perturbation
  LinearOracle oracle;
};

inline LinearProblem make_linear_problem(std::uint64_t seed, std::size_t n = 800, double d_star = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<float> raw(n);
  for (float& v : raw) v = static_cast<float>(gauss(rng));
  const auto limited = band_limit_signal(raw, kCanonicalRate);
  std::vector<double> w(limited.begin(), limited.end());
  double nw = 0.0;
  for (double v : w) nw += v * v;
  nw = std::sqrt(nw);
  for (double& v : w) v /= nw;

  std::vector<float> x(n);
  for (float& v : x) v = static_cast<float>(0.02 * gauss(rng));
  AudioClip x0(std::move(x), kCanonicalRate);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += w[i] * x0.samples()[i];
  return {x0, w, d_star, LinearOracle(w, s + d_star)};
}

// Counts every transcribe() call reaching the wrapped oracle.
class CountingOracle : public Oracle {
 public:
  explicit CountingOracle(Oracle& inner) : inner_(inner) {}
  Transcript transcribe(const AudioClip& clip) override {
    ++calls_;
    return inner_.transcribe(clip);
  }
  int sample_rate() const override { return inner_.sample_rate(); }
  std::uint64_t calls() const { return calls_; }

 private:
  Oracle& inner_;
  std::atomic<std::uint64_t> calls_{0};
};

}  // namespace advaudio::testing
