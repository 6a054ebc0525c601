#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advaudio/mfcc.hpp"
#include "advaudio/oracle.hpp"
#include "advaudio/synth.hpp"

namespace advaudio {

struct SurrogateConfig {
  MfccConfig mfcc;
  double holdout_fraction = 0.25;     // per label, used only for calibrating the threshold
  double accept_target = 0.95;        // clean held-out utterances accepted
  double mixture_reject_target = 0.90;  // two-label equal-power mixtures rejected
  double shrinkage = 0.005;           // within-class covariance pulled toward its diagonal
  int mixture_directions = 8;         // extra axes along which training mixtures stray from every template
  double mixture_gain = 2.0;
  int metric_mixtures = 1000;         // training mixtures drawn to learn those axes
  int noise_copies = 1;               // extra training copies with white noise added
  double noise_dbfs_min = -60.0;
  double noise_dbfs_max = -36.0;
  std::uint64_t seed = 1;
};

struct Calibration {
  double clean_accept_rate = 0.0;
  double clean_accuracy = 0.0;
  double mixture_reject_rate = 0.0;
  bool feasible = false;  // both targets met on the calibration split
  std::size_t clean_count = 0;
  std::size_t mixture_count = 0;
};

struct Classification {
  std::string label;  // nearest template
  double distance = 0.0;
  bool accepted = false;
};

// Keyword-spotting stand-in for a commercial recognizer: one time-pooled MFCC
// statistics template per label, nearest-template decision, and a rejection
// region beyond distance threshold theta.
//
// Distances are measured after a learned linear map (rows of `projection`),
// normalized so that within-class scatter is white along the discriminant
// axes; the value is the RMS over rows.
class SurrogateModel : public Oracle {
 public:
  SurrogateModel(MfccConfig mfcc, std::vector<std::string> labels, std::vector<std::vector<double>> templates,
                 std::vector<std::vector<double>> projection, double threshold, Calibration calibration = {});

  Transcript transcribe(const AudioClip& clip) override;
  int sample_rate() const override { return mfcc_.sample_rate; }

  Classification classify(const AudioClip& clip) const;
  // Time-pooled feature vector: per-dimension mean then standard deviation.
  std::vector<double> features(const AudioClip& clip) const;
  static std::vector<double> features(const AudioClip& clip, const MfccConfig& mfcc);
  double distance(const std::vector<double>& features, std::size_t label_index) const;

  const std::vector<std::string>& labels() const { return labels_; }
  double threshold() const { return threshold_; }
  const Calibration& calibration() const { return calibration_; }
  const MfccConfig& mfcc_config() const { return mfcc_; }
  const std::vector<std::vector<double>>& templates() const { return templates_; }
  const std::vector<std::vector<double>>& projection() const { return projection_; }

  nlohmann::json to_json() const;
  static SurrogateModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static SurrogateModel load(const std::filesystem::path& path);

  friend bool operator==(const SurrogateModel& a, const SurrogateModel& b);

 private:
  std::vector<double> project(const std::vector<double>& features) const;
  double projected_distance(const std::vector<double>& projected, std::size_t label_index) const;

  MfccConfig mfcc_;
  std::vector<std::string> labels_;
  std::vector<std::vector<double>> templates_;
  std::vector<std::vector<double>> projection_;
  std::vector<std::vector<double>> projected_templates_;
  double threshold_;
  Calibration calibration_;
};

// Needs >= 2 labels with >= 5 utterances each, else TrainError.
SurrogateModel train_surrogate(const std::vector<LabeledClip>& corpus, const SurrogateConfig& config);

// Loads <dir>/<label>/*.wav in sorted order.
std::vector<LabeledClip> load_labeled_corpus(const std::filesystem::path& dir);

// Both inputs scaled to equal RMS and summed; rescaled to keep the louder
// input's peak and stay within [-1, 1]. The shorter input is zero-padded.
AudioClip equal_power_mix(const AudioClip& a, const AudioClip& b);

}  // namespace advaudio
