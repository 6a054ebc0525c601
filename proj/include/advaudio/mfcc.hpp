#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace advaudio {

struct MfccConfig {
  int sample_rate = 16000;
  double frame_ms = 25.0;
  double hop_ms = 10.0;
  int fft_size = 512;
  int num_filters = 26;
  int num_ceps = 13;
  double low_hz = 20.0;
  double high_hz = 0.0;  // 0 means Nyquist
  double preemphasis = 0.97;
  bool remove_dc = true;  // subtract each frame's mean before pre-emphasis
  double noise_floor_quantile = 0.0;  // 0 disables background subtraction
  double noise_floor_scale = 1.0;
  double energy_floor = 1e-10;        // added to mel energies before the log
  bool deltas = true;
  int delta_window = 2;

  int frame_length() const;
  int hop_length() const;
  int dims() const { return deltas ? 2 * num_ceps : num_ceps; }

  nlohmann::json to_json() const;
  static MfccConfig from_json(const nlohmann::json& j);
  friend bool operator==(const MfccConfig&, const MfccConfig&) = default;
};

// Row-major frames x dims: cepstra (c0 is log energy of the mel bank) followed
// by regression deltas. Signals shorter than one frame are zero-padded.
std::vector<std::vector<double>> mfcc(std::span<const float> signal, const MfccConfig& config);

// In-place radix-2 FFT; size must be a power of two.
void fft_inplace(std::vector<double>& re, std::vector<double>& im);

}  // namespace advaudio
