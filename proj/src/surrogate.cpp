#include "advaudio/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>

#include <Eigen/Dense>

#include "advaudio/errors.hpp"
#include "advaudio/wav.hpp"

namespace advaudio {
namespace {

constexpr std::size_t kMinLabels = 2;
constexpr std::size_t kMinPerLabel = 5;
constexpr int kMixturesPerClip = 4;

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

AudioClip add_white_noise(const AudioClip& clip, double dbfs_min, double dbfs_max, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> level(dbfs_min, dbfs_max);
  const double sd = std::pow(10.0, level(rng) / 20.0);
  std::normal_distribution<double> gauss(0.0, sd);
  std::vector<float> out(clip.data());
  for (float& x : out) x = static_cast<float>(x + gauss(rng));
  return AudioClip::clipped(std::move(out), clip.sample_rate());
}

double fraction_at_most(const std::vector<double>& v, double limit) {
  if (v.empty()) return 0.0;
  return static_cast<double>(std::count_if(v.begin(), v.end(), [&](double d) { return d <= limit; })) /
         static_cast<double>(v.size());
}

}  // namespace

SurrogateModel::SurrogateModel(MfccConfig mfcc, std::vector<std::string> labels,
                               std::vector<std::vector<double>> templates, std::vector<std::vector<double>> projection,
                               double threshold, Calibration calibration)
    : mfcc_(mfcc),
      labels_(std::move(labels)),
      templates_(std::move(templates)),
      projection_(std::move(projection)),
      threshold_(threshold),
      calibration_(calibration) {
  if (labels_.size() != templates_.size() || labels_.empty()) {
    throw TrainError("surrogate needs exactly one template per label");
  }
  if (projection_.empty()) throw TrainError("surrogate projection is empty");
  const std::size_t dims = 2 * static_cast<std::size_t>(mfcc_.dims());
  for (const auto& t : templates_) {
    if (t.size() != dims) throw TrainError("template dimension does not match the feature size");
  }
  for (const auto& row : projection_) {
    if (row.size() != dims) throw TrainError("projection dimension does not match the feature size");
  }
  if (!std::isfinite(threshold_)) throw TrainError("rejection threshold must be finite");
  for (const auto& t : templates_) projected_templates_.push_back(project(t));
}

std::vector<double> SurrogateModel::project(const std::vector<double>& f) const {
  std::vector<double> out(projection_.size(), 0.0);
  for (std::size_t k = 0; k < projection_.size(); ++k) {
    double acc = 0.0;
    for (std::size_t d = 0; d < f.size(); ++d) acc += projection_[k][d] * f[d];
    out[k] = acc;
  }
  return out;
}

std::vector<double> SurrogateModel::features(const AudioClip& clip, const MfccConfig& config) {
  const auto frames = mfcc(clip.samples(), config);
  const std::size_t dims = static_cast<std::size_t>(config.dims());
  std::vector<double> mean(dims, 0.0), var(dims, 0.0);
  for (const auto& f : frames) {
    for (std::size_t d = 0; d < dims; ++d) mean[d] += f[d];
  }
  for (double& m : mean) m /= static_cast<double>(frames.size());
  for (const auto& f : frames) {
    for (std::size_t d = 0; d < dims; ++d) var[d] += (f[d] - mean[d]) * (f[d] - mean[d]);
  }
  std::vector<double> out = mean;
  for (std::size_t d = 0; d < dims; ++d) out.push_back(std::sqrt(var[d] / static_cast<double>(frames.size())));
  return out;
}

std::vector<double> SurrogateModel::features(const AudioClip& clip) const { return features(clip, mfcc_); }

double SurrogateModel::distance(const std::vector<double>& f, std::size_t label_index) const {
  return projected_distance(project(f), label_index);
}

double SurrogateModel::projected_distance(const std::vector<double>& p, std::size_t label_index) const {
  const auto& t = projected_templates_.at(label_index);
  double acc = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) acc += (p[k] - t[k]) * (p[k] - t[k]);
  return std::sqrt(acc / static_cast<double>(t.size()));
}

Classification SurrogateModel::classify(const AudioClip& clip) const {
  const auto p = project(features(clip));
  Classification best;
  best.distance = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    const double d = projected_distance(p, i);
    if (d < best.distance) {
      best.distance = d;
      best.label = labels_[i];
    }
  }
  best.accepted = best.distance <= threshold_;
  return best;
}

Transcript SurrogateModel::transcribe(const AudioClip& clip) {
  const Classification c = classify(clip);
  return c.accepted ? Transcript::from_raw(c.label) : Transcript::rejected();
}

nlohmann::json SurrogateModel::to_json() const {
  return {{"format", "advaudio-surrogate"},
          {"version", 1},
          {"mfcc", mfcc_.to_json()},
          {"labels", labels_},
          {"templates", templates_},
          {"projection", projection_},
          {"threshold", threshold_},
          {"calibration",
           {{"clean_accept_rate", calibration_.clean_accept_rate},
            {"clean_accuracy", calibration_.clean_accuracy},
            {"mixture_reject_rate", calibration_.mixture_reject_rate},
            {"feasible", calibration_.feasible},
            {"clean_count", calibration_.clean_count},
            {"mixture_count", calibration_.mixture_count}}}};
}

SurrogateModel SurrogateModel::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "advaudio-surrogate") throw FormatError("not a surrogate model file");
  Calibration cal;
  if (j.contains("calibration")) {
    const auto& c = j.at("calibration");
    cal.clean_accept_rate = c.value("clean_accept_rate", 0.0);
    cal.clean_accuracy = c.value("clean_accuracy", 0.0);
    cal.mixture_reject_rate = c.value("mixture_reject_rate", 0.0);
    cal.feasible = c.value("feasible", false);
    cal.clean_count = c.value("clean_count", std::size_t{0});
    cal.mixture_count = c.value("mixture_count", std::size_t{0});
  }
  return SurrogateModel(MfccConfig::from_json(j.at("mfcc")), j.at("labels").get<std::vector<std::string>>(),
                        j.at("templates").get<std::vector<std::vector<double>>>(),
                        j.at("projection").get<std::vector<std::vector<double>>>(), j.at("threshold").get<double>(), cal);
}

void SurrogateModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json().dump(1) << '\n';
  if (!out) throw IoError("short write to " + path.string());
}

SurrogateModel SurrogateModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

bool operator==(const SurrogateModel& a, const SurrogateModel& b) { return a.to_json() == b.to_json(); }

AudioClip equal_power_mix(const AudioClip& a, const AudioClip& b) {
  if (a.sample_rate() != b.sample_rate()) throw RateMismatch("mixture inputs differ in sample rate");
  const double ra = std::max(rms(a.samples()), 1e-12);
  const double rb = std::max(rms(b.samples()), 1e-12);
  const double level = 0.5 * (ra + rb);
  const std::size_t n = std::max(a.size(), b.size());
  std::vector<double> mix(n, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) mix[i] += a.samples()[i] * level / ra;
  for (std::size_t i = 0; i < b.size(); ++i) mix[i] += b.samples()[i] * level / rb;
  double p = 0.0;
  for (double v : mix) p = std::max(p, std::abs(v));
  const double cap = std::max<double>(peak(a.samples()), peak(b.samples()));
  const double gain = p > cap && p > 0.0 ? cap / p : 1.0;
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(mix[i] * gain);
  return AudioClip::clipped(std::move(out), a.sample_rate());
}

SurrogateModel train_surrogate(const std::vector<LabeledClip>& corpus, const SurrogateConfig& config) {
  std::map<std::string, std::vector<const LabeledClip*>> by_label;
  for (const LabeledClip& item : corpus) {
    if (item.audio.sample_rate() != config.mfcc.sample_rate) {
      throw TrainError("utterance " + item.id + " is not at " + std::to_string(config.mfcc.sample_rate) + " Hz");
    }
    by_label[item.label].push_back(&item);
  }
  if (by_label.size() < kMinLabels) throw TrainError("need at least two labels to train a surrogate");
  for (const auto& [label, items] : by_label) {
    if (items.size() < kMinPerLabel) {
      throw TrainError("label '" + label + "' has " + std::to_string(items.size()) + " utterances, need 5");
    }
  }

  std::mt19937_64 rng(config.seed);
  std::vector<std::string> labels;
  std::vector<std::vector<const LabeledClip*>> train, holdout;
  for (auto& [label, items] : by_label) {
    std::vector<const LabeledClip*> shuffled = items;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto n_hold = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(config.holdout_fraction * shuffled.size())), 1, shuffled.size() - 1);
    labels.push_back(label);
    holdout.emplace_back(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_hold));
    train.emplace_back(shuffled.begin() + static_cast<std::ptrdiff_t>(n_hold), shuffled.end());
  }

  const MfccConfig& mc = config.mfcc;
  std::vector<std::vector<Eigen::VectorXd>> feats(labels.size());
  for (std::size_t l = 0; l < labels.size(); ++l) {
    for (const LabeledClip* item : train[l]) {
      feats[l].push_back(to_eigen(SurrogateModel::features(item->audio, mc)));
      for (int k = 0; k < config.noise_copies; ++k) {
        const AudioClip noisy = add_white_noise(item->audio, config.noise_dbfs_min, config.noise_dbfs_max, rng);
        feats[l].push_back(to_eigen(SurrogateModel::features(noisy, mc)));
      }
    }
  }
  const auto dims = static_cast<Eigen::Index>(feats[0][0].size());
  const auto n_labels = static_cast<Eigen::Index>(labels.size());

  std::vector<Eigen::VectorXd> means;
  Eigen::VectorXd grand = Eigen::VectorXd::Zero(dims);
  Eigen::MatrixXd within = Eigen::MatrixXd::Zero(dims, dims);
  std::size_t count = 0;
  for (const auto& class_feats : feats) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(dims);
    for (const auto& f : class_feats) m += f;
    m /= static_cast<double>(class_feats.size());
    for (const auto& f : class_feats) within += (f - m) * (f - m).transpose();
    count += class_feats.size();
    grand += m;
    means.push_back(m);
  }
  grand /= static_cast<double>(n_labels);
  within /= static_cast<double>(count);
  Eigen::MatrixXd between = Eigen::MatrixXd::Zero(dims, dims);
  for (const auto& m : means) between += (m - grand) * (m - grand).transpose();
  between /= static_cast<double>(n_labels);
  const Eigen::MatrixXd diag = within.diagonal().asDiagonal();
  within = (1.0 - config.shrinkage) * within + config.shrinkage * diag;
  within.diagonal().array() += 1e-9 * within.diagonal().mean();

  // Discriminant axes, scaled so within-class variance is 1 along each.
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> lda(between, within);
  if (lda.info() != Eigen::Success) throw TrainError("discriminant eigen-decomposition failed");
  const Eigen::Index n_axes = std::min<Eigen::Index>(n_labels - 1, dims);
  Eigen::MatrixXd axes = lda.eigenvectors().rightCols(n_axes);

  // Axes along which equal-power mixtures of training utterances sit away
  // from their nearest template.
  const Eigen::Index n_mix_axes = std::min<Eigen::Index>(config.mixture_directions, dims - n_axes);
  if (n_mix_axes > 0 && config.metric_mixtures > 0) {
    std::vector<std::pair<std::size_t, const LabeledClip*>> train_pool;
    for (std::size_t l = 0; l < labels.size(); ++l) {
      for (const LabeledClip* item : train[l]) train_pool.emplace_back(l, item);
    }
    std::uniform_int_distribution<std::size_t> any(0, train_pool.size() - 1);
    Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(dims, dims);
    for (int i = 0; i < config.metric_mixtures; ++i) {
      const auto& a = train_pool[any(rng)];
      auto b = train_pool[any(rng)];
      while (b.first == a.first) b = train_pool[any(rng)];
      const Eigen::VectorXd f = to_eigen(SurrogateModel::features(equal_power_mix(a.second->audio, b.second->audio), mc));
      Eigen::VectorXd nearest;
      double best = std::numeric_limits<double>::infinity();
      for (const auto& m : means) {
        const double d = (axes.transpose() * (f - m)).squaredNorm();
        if (d < best) {
          best = d;
          nearest = f - m;
        }
      }
      scatter += nearest * nearest.transpose();
    }
    scatter /= static_cast<double>(config.metric_mixtures);
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> stray(scatter, within);
    if (stray.info() != Eigen::Success) throw TrainError("mixture eigen-decomposition failed");
    Eigen::MatrixXd both(dims, n_axes + n_mix_axes);
    both << axes, config.mixture_gain * stray.eigenvectors().rightCols(n_mix_axes);
    axes = both;
  }

  std::vector<std::vector<double>> templates, projection;
  for (const auto& m : means) templates.emplace_back(m.data(), m.data() + m.size());
  for (Eigen::Index k = 0; k < axes.cols(); ++k) {
    projection.emplace_back(axes.col(k).data(), axes.col(k).data() + dims);
  }

  // Rejection threshold from the held-out split: clean distances vs. distances
  // of two-label equal-power mixtures.
  SurrogateModel model(mc, labels, templates, projection, 0.0);
  std::vector<double> clean, mixed;
  std::vector<bool> clean_correct;
  std::size_t correct = 0;
  std::vector<std::pair<std::size_t, const LabeledClip*>> pool;
  for (std::size_t l = 0; l < labels.size(); ++l) {
    for (const LabeledClip* item : holdout[l]) {
      const Classification c = model.classify(item->audio);
      clean.push_back(c.distance);
      clean_correct.push_back(c.label == labels[l]);
      if (c.label == labels[l]) ++correct;
      pool.emplace_back(l, item);
    }
  }
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (const auto& [l, item] : pool) {
    for (int k = 0; k < kMixturesPerClip; ++k) {
      std::size_t j = pick(rng);
      while (pool[j].first == l) j = pick(rng);
      mixed.push_back(model.classify(equal_power_mix(item->audio, pool[j].second->audio)).distance);
    }
  }

  // Theta with the largest worst-case margin over the two targets; a clean
  // utterance only counts when it is also labeled correctly.
  const auto accept_at = [&](double t) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < clean.size(); ++i) ok += clean_correct[i] && clean[i] <= t;
    return static_cast<double>(ok) / static_cast<double>(clean.size());
  };
  std::vector<double> candidates = clean;
  candidates.insert(candidates.end(), mixed.begin(), mixed.end());
  std::sort(candidates.begin(), candidates.end());
  double threshold = candidates.front();
  double best_margin = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double t = i + 1 < candidates.size() ? 0.5 * (candidates[i] + candidates[i + 1]) : candidates[i];
    const double margin = std::min(accept_at(t) - config.accept_target,
                                   1.0 - fraction_at_most(mixed, t) - config.mixture_reject_target);
    if (margin > best_margin) {
      best_margin = margin;
      threshold = t;
    }
  }
  Calibration cal;
  cal.feasible = best_margin >= 0.0;
  cal.clean_accept_rate = accept_at(threshold);
  cal.mixture_reject_rate = 1.0 - fraction_at_most(mixed, threshold);
  cal.clean_accuracy = static_cast<double>(correct) / static_cast<double>(clean.size());
  cal.clean_count = clean.size();
  cal.mixture_count = mixed.size();
  return SurrogateModel(mc, labels, templates, projection, threshold, cal);
}

std::vector<LabeledClip> load_labeled_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("corpus directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<LabeledClip> out;
  for (const auto& f : files) {
    const auto rel = std::filesystem::relative(f, dir);
    if (rel.begin() == rel.end() || std::next(rel.begin()) == rel.end()) continue;  // needs <label>/<file>
    const std::string label = rel.begin()->string();
    if (!label.empty() && label.front() == '_') continue;  // e.g. _background_noise_
    out.push_back({label, rel.generic_string(), load_wav(f)});
  }
  return out;
}

}  // namespace advaudio
