#include "advaudio/phoneme_bank.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "advaudio/errors.hpp"
#include "advaudio/wav.hpp"

namespace advaudio {
namespace {

constexpr double kTrimWindowMs = 20.0;

std::size_t ms_to_samples(double ms, int rate) { return static_cast<std::size_t>(std::lround(ms * rate / 1000.0)); }

std::vector<LabeledClip> read_sources(const std::filesystem::path& corpus,
                                      const std::optional<std::filesystem::path>& manifest) {
  std::vector<std::filesystem::path> files;
  if (manifest) {
    std::ifstream in(*manifest);
    if (!in) throw IoError("cannot open manifest " + manifest->string());
    std::string line;
    while (std::getline(in, line)) {
      line.erase(std::remove(line.begin(), line.end(), '\r'), line.end());
      if (!line.empty() && line.front() != '#') files.push_back(corpus / line);
    }
  } else {
    if (!std::filesystem::is_directory(corpus)) throw IoError("corpus directory not found: " + corpus.string());
    for (const auto& entry : std::filesystem::recursive_directory_iterator(corpus)) {
      if (entry.is_regular_file() && entry.path().extension() == ".wav") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
  }
  std::vector<LabeledClip> out;
  for (const auto& f : files) {
    try {
      out.push_back({"", std::filesystem::relative(f, corpus).generic_string(), load_wav(f)});
    } catch (const FormatError&) {
    } catch (const UnsupportedFormat&) {
    }
  }
  return out;
}

}  // namespace

PhonemeBank::PhonemeBank(std::vector<PhonemeClip> clips, std::uint64_t seed) : clips_(std::move(clips)), seed_(seed) {
  if (clips_.empty()) throw EmptyCorpus("phoneme bank is empty");
}

AudioClip trim_silence(const AudioClip& clip, double threshold_db) {
  const float top = peak(clip.samples());
  if (top <= 0.0f) throw SilentInput("clip is silent");
  const std::size_t win = std::max<std::size_t>(1, ms_to_samples(kTrimWindowMs, clip.sample_rate()));
  const std::size_t n_win = (clip.size() + win - 1) / win;
  const double floor = top * std::pow(10.0, threshold_db / 20.0);
  const auto loud = [&](std::size_t w) {
    const std::size_t b = w * win;
    const std::size_t len = std::min(win, clip.size() - b);
    return rms(clip.samples().subspan(b, len)) >= floor;
  };
  std::size_t first = 0;
  while (first < n_win && !loud(first)) ++first;
  if (first == n_win) throw SilentInput("every window is below the trim threshold");
  std::size_t last = n_win - 1;
  while (!loud(last)) --last;
  const std::size_t begin = first * win;
  const std::size_t end = std::min(clip.size(), (last + 1) * win);
  if (begin == 0 && end == clip.size()) return clip;
  return slice(clip, begin, end - begin);
}

PhonemeBank build_bank(const std::vector<LabeledClip>& sources, const BankOptions& options) {
  if (options.n_clips == 0) throw ArgumentError("n_clips must be >= 1");
  if (!(options.min_ms > 0.0) || options.max_ms < options.min_ms) throw ArgumentError("need 0 < min_ms <= max_ms");

  struct Usable {
    const LabeledClip* source;
    AudioClip trimmed;
  };
  std::vector<Usable> usable;
  for (const LabeledClip& s : sources) {
    try {
      AudioClip t = trim_silence(s.audio, options.threshold_db);
      if (t.size() >= ms_to_samples(options.min_ms, t.sample_rate())) usable.push_back({&s, std::move(t)});
    } catch (const SilentInput&) {
    }
  }
  if (usable.empty()) throw EmptyCorpus("no source is at least " + std::to_string(options.min_ms) + " ms after trimming");

  Rng rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
  std::vector<PhonemeClip> clips;
  clips.reserve(options.n_clips);
  while (clips.size() < options.n_clips) {
    const Usable& u = usable[pick(rng)];
    const int rate = u.trimmed.sample_rate();
    const double avail_ms = 1000.0 * static_cast<double>(u.trimmed.size()) / rate;
    std::uniform_real_distribution<double> dur(options.min_ms, std::min(options.max_ms, avail_ms));
    std::size_t len = std::clamp(ms_to_samples(dur(rng), rate), ms_to_samples(options.min_ms, rate),
                                 std::min(u.trimmed.size(), ms_to_samples(options.max_ms, rate)));
    std::uniform_int_distribution<std::size_t> start(0, u.trimmed.size() - len);
    const std::size_t b = start(rng);
    clips.push_back({slice(u.trimmed, b, len), u.source->id + "@" + std::to_string(b),
                     1000.0 * static_cast<double>(len) / rate});
  }
  return PhonemeBank(std::move(clips), options.seed);
}

PhonemeBank build_bank(const std::filesystem::path& corpus, const BankOptions& options,
                       const std::optional<std::filesystem::path>& manifest) {
  return build_bank(read_sources(corpus, manifest), options);
}

const PhonemeClip& sample_phoneme(const PhonemeBank& bank, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, bank.size() - 1);
  return bank.clips()[pick(rng)];
}

void PhonemeBank::save(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < clips_.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "clip_%05zu.wav", i);
    save_wav(clips_[i].audio, dir / name);
    entries.push_back({{"file", name}, {"source_id", clips_[i].source_id}, {"duration_ms", clips_[i].duration_ms}});
  }
  std::ofstream out(dir / "bank.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "bank.json").string());
  out << nlohmann::json{{"seed", seed_}, {"clips", entries}}.dump(1) << '\n';
}

PhonemeBank PhonemeBank::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "bank.json");
  if (!in) throw IoError("cannot open " + (dir / "bank.json").string());
  try {
    const auto j = nlohmann::json::parse(in);
    std::vector<PhonemeClip> clips;
    for (const auto& e : j.at("clips")) {
      clips.push_back({load_wav(dir / e.at("file").get<std::string>()), e.at("source_id").get<std::string>(),
                       e.at("duration_ms").get<double>()});
    }
    return PhonemeBank(std::move(clips), j.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bank.json: " + std::string(e.what()));
  }
}

}  // namespace advaudio
