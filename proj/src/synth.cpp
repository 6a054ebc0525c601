#include "advaudio/synth.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include "advaudio/errors.hpp"
#include "advaudio/wav.hpp"

namespace advaudio {
namespace {

// One articulatory segment; formants move linearly from `from` to `to`.
struct Segment {
  double ms;
  std::array<double, 3> from;
  std::array<double, 3> to;
  double voicing;      // periodic source amplitude
  double aspiration;   // noise through the vocal-tract cascade
  double frication;    // noise through a parallel band-pass
  double fric_hz = 5000.0;
  double fric_bw = 3000.0;
};

using F = std::array<double, 3>;

Segment vowel(double ms, F from, F to) { return {ms, from, to, 1.0, 0.0, 0.0}; }
Segment vowel(double ms, F f) { return vowel(ms, f, f); }
Segment voiced(double ms, F f, double av) { return {ms, f, f, av, 0.0, 0.0}; }
Segment glide(double ms, F from, F to, double av) { return {ms, from, to, av, 0.0, 0.0}; }
Segment closure(double ms, F f, double voice_bar = 0.0) { return {ms, f, f, voice_bar, 0.0, 0.0}; }
Segment fricative(double ms, F f, double amp, double hz, double bw) {
  return {ms, f, f, 0.0, 0.0, amp, hz, bw};
}
Segment burst(double ms, F f, double amp, double hz, double bw, double asp = 0.0) {
  return {ms, f, f, 0.0, asp, amp, hz, bw};
}

const F kEh{530, 1840, 2480};
const F kAa{730, 1090, 2440};
const F kAo{570, 840, 2410};
const F kAh{640, 1190, 2390};
const F kOwStart{540, 1000, 2400};
const F kOwEnd{420, 860, 2300};
const F kNasal{260, 1500, 2500};

const std::map<std::string, std::vector<Segment>>& lexicon() {
  static const std::map<std::string, std::vector<Segment>> words = {
      {"yes",
       {glide(70, {280, 2250, 3000}, {330, 2150, 2900}, 0.6), vowel(140, kEh, {520, 1780, 2450}),
        fricative(150, {480, 1700, 2500}, 0.45, 6000, 2500)}},
      {"no", {voiced(80, {280, 1400, 2500}, 0.35), vowel(250, kOwStart, kOwEnd)}},
      {"up",
       {vowel(160, kAh, {600, 1100, 2350}), closure(70, {500, 1000, 2300}),
        burst(25, {500, 1000, 2300}, 0.35, 1200, 2000, 0.25)}},
      {"down",
       {closure(40, {220, 1700, 2600}, 0.1), burst(15, {300, 1700, 2600}, 0.35, 4000, 3000),
        vowel(260, {730, 1150, 2450}, {450, 950, 2300}), voiced(90, kNasal, 0.35)}},
      {"left",
       {voiced(80, {360, 1000, 2800}, 0.55), vowel(130, kEh),
        fricative(110, {500, 1600, 2500}, 0.16, 5000, 5000), closure(50, {500, 1600, 2500}),
        burst(25, {500, 1700, 2600}, 0.35, 5000, 3000, 0.2)}},
      {"right",
       {glide(90, {420, 1250, 1600}, {520, 1250, 1750}, 0.6),
        vowel(230, {730, 1100, 2450}, {400, 1950, 2600}), closure(60, {400, 1900, 2600}),
        burst(30, {400, 1900, 2600}, 0.35, 4500, 3000, 0.2)}},
      {"on", {vowel(200, kAa, {700, 1150, 2400}), voiced(120, kNasal, 0.35)}},
      {"off", {vowel(200, kAo, {560, 900, 2400}), fricative(160, {560, 1200, 2400}, 0.18, 5000, 5000)}},
      {"stop",
       {fricative(130, {500, 1600, 2500}, 0.45, 6000, 2500), closure(50, {400, 1600, 2500}),
        burst(20, {400, 1700, 2600}, 0.3, 4500, 3000), vowel(180, kAa, {700, 1050, 2400}),
        closure(60, {600, 1000, 2300}), burst(20, {600, 1000, 2300}, 0.3, 1200, 2000, 0.15)}},
      {"go",
       {closure(40, {250, 1500, 2300}, 0.1), burst(20, {300, 1500, 2300}, 0.35, 2000, 1200),
        vowel(260, kOwStart, kOwEnd)}},
  };
  return words;
}

// Klatt digital resonator with per-sample coefficient updates.
class Resonator {
 public:
  double step(double x, double freq, double bw, int rate) {
    const double t = 1.0 / rate;
    const double c = -std::exp(-2.0 * std::numbers::pi * bw * t);
    const double b = 2.0 * std::exp(-std::numbers::pi * bw * t) * std::cos(2.0 * std::numbers::pi * freq * t);
    const double a = 1.0 - b - c;
    const double y = a * x + b * y1_ + c * y2_;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  double y1_ = 0.0, y2_ = 0.0;
};

struct Track {
  std::array<double, 3> formant;
  double voicing, aspiration, frication, fric_hz, fric_bw;
};

double lerp(double a, double b, double t) { return a + (b - a) * t; }

std::vector<float> render_word(const std::vector<Segment>& segments, const SpeakerProfile& sp, int rate,
                               std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Per-sample targets with per-utterance perturbations.
  std::vector<Track> targets;
  for (const Segment& seg : segments) {
    const double dur_scale = sp.tempo * (0.85 + 0.3 * unit(rng));
    const auto n = static_cast<std::size_t>(std::max(1.0, seg.ms * dur_scale * rate / 1000.0));
    std::array<double, 3> wobble{};
    for (double& w : wobble) w = 1.0 + 0.05 * gauss(rng);
    const double fric_scale = std::sqrt(sp.formant_scale) * (1.0 + 0.08 * gauss(rng));
    for (std::size_t i = 0; i < n; ++i) {
      const double t = n > 1 ? static_cast<double>(i) / (n - 1) : 0.0;
      Track tr{};
      for (int k = 0; k < 3; ++k) tr.formant[k] = lerp(seg.from[k], seg.to[k], t) * sp.formant_scale * wobble[k];
      tr.voicing = seg.voicing;
      tr.aspiration = seg.aspiration;
      tr.frication = seg.frication;
      tr.fric_hz = seg.fric_hz * fric_scale;
      tr.fric_bw = seg.fric_bw;
      targets.push_back(tr);
    }
  }

  // Coarticulation: formants glide with ~12 ms, amplitudes with ~4 ms lag.
  const double kf = 1.0 - std::exp(-1.0 / (0.012 * rate));
  const double ka = 1.0 - std::exp(-1.0 / (0.004 * rate));
  Track cur = targets.front();
  cur.voicing = cur.aspiration = cur.frication = 0.0;

  Resonator r1, r2, r3, r4, r5, fric_a, fric_b;
  const double nyq_guard = 0.45 * rate;
  const double tilt = 0.2 + 0.5 * unit(rng);
  double tilt_state = 0.0;
  double phase = 0.0;
  double period_f0 = sp.f0_hz;
  double shimmer = 1.0;
  std::vector<float> out(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const Track& tg = targets[i];
    for (int k = 0; k < 3; ++k) cur.formant[k] += kf * (tg.formant[k] - cur.formant[k]);
    cur.voicing += ka * (tg.voicing - cur.voicing);
    cur.aspiration += ka * (tg.aspiration - cur.aspiration);
    cur.frication += ka * (tg.frication - cur.frication);
    cur.fric_hz += kf * (tg.fric_hz - cur.fric_hz);
    cur.fric_bw = tg.fric_bw;

    // Declining pitch over the word.
    const double progress = static_cast<double>(i) / targets.size();
    phase += period_f0 / rate;
    if (phase >= 1.0) {
      phase -= 1.0;
      period_f0 = sp.f0_hz * (1.08 - 0.2 * progress) * (1.0 + sp.jitter * gauss(rng));
      shimmer = 1.0 + 0.05 * gauss(rng);
    }
    // Glottal flow derivative over a 0.6 open quotient.
    constexpr double kOpen = 0.6;
    double glottal = 0.0;
    if (phase < kOpen) {
      const double u = phase / kOpen;
      glottal = (2.0 * u - 3.0 * u * u) * shimmer;
    }
    tilt_state = (1.0 - tilt) * glottal + tilt * tilt_state;
    const double noise = gauss(rng);
    const double source =
        cur.voicing * (tilt_state + sp.breathiness * noise) + cur.aspiration * 0.3 * noise;

    double y = r1.step(source, std::min(cur.formant[0], nyq_guard), 70.0, rate);
    y = r2.step(y, std::min(cur.formant[1], nyq_guard), 100.0, rate);
    y = r3.step(y, std::min(cur.formant[2], nyq_guard), 160.0, rate);
    y = r4.step(y, std::min(3500.0 * sp.formant_scale, nyq_guard), 250.0, rate);
    y = r5.step(y, std::min(4500.0 * sp.formant_scale, nyq_guard), 300.0, rate);

    const double fc = std::min(cur.fric_hz, nyq_guard);
    double f = fric_a.step(noise, fc, cur.fric_bw, rate);
    f = fric_b.step(f, fc, cur.fric_bw, rate);
    out[i] = static_cast<float>(y + cur.frication * 2.0 * f);
  }
  return out;
}

}  // namespace

const std::vector<std::string>& synth_vocabulary() {
  static const std::vector<std::string> words = {"yes",  "no",   "up", "down", "left",
                                                 "right", "on", "off", "stop", "go"};
  return words;
}

SpeakerProfile random_speaker(std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5eed5eedULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SpeakerProfile sp;
  const double kind = unit(rng);
  if (kind < 0.45) {  // adult male
    sp.f0_hz = 85.0 + 60.0 * unit(rng);
    sp.formant_scale = 0.9 + 0.1 * unit(rng);
  } else if (kind < 0.9) {  // adult female
    sp.f0_hz = 165.0 + 80.0 * unit(rng);
    sp.formant_scale = 1.05 + 0.12 * unit(rng);
  } else {  // child
    sp.f0_hz = 240.0 + 60.0 * unit(rng);
    sp.formant_scale = 1.18 + 0.1 * unit(rng);
  }
  sp.tempo = 0.8 + 0.45 * unit(rng);
  sp.breathiness = 0.02 + 0.12 * unit(rng);
  sp.jitter = 0.005 + 0.02 * unit(rng);
  return sp;
}

AudioClip synthesize_word(const std::string& word, const SpeakerProfile& speaker, std::uint64_t seed,
                          const UtteranceOptions& options) {
  const auto it = lexicon().find(word);
  if (it == lexicon().end()) throw ArgumentError("word not in synthesizer lexicon: " + word);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<float> voice = render_word(it->second, speaker, options.sample_rate, rng);
  const float voice_peak = peak(voice);
  const double target_peak = options.peak_min + (options.peak_max - options.peak_min) * unit(rng);
  for (float& s : voice) s = static_cast<float>(s * target_peak / std::max(voice_peak, 1e-9f));

  const auto n = static_cast<std::size_t>(std::lround(options.clip_seconds * options.sample_rate));
  std::vector<float> clip(n, 0.0f);
  const double noise_db = options.noise_dbfs_min + (options.noise_dbfs_max - options.noise_dbfs_min) * unit(rng);
  const double noise_rms = std::pow(10.0, noise_db / 20.0);
  double brown = 0.0;
  for (float& s : clip) {
    // Mix of white and low-frequency noise, like a room recording.
    brown = 0.98 * brown + 0.2 * gauss(rng);
    s = static_cast<float>(noise_rms * (0.7 * gauss(rng) + 0.7 * brown));
  }
  double onset_s = options.onset_min_s + (options.onset_max_s - options.onset_min_s) * unit(rng);
  auto onset = static_cast<std::size_t>(onset_s * options.sample_rate);
  if (voice.size() >= n) {
    voice.resize(n);
    onset = 0;
  } else if (onset + voice.size() > n) {
    onset = n - voice.size();
  }
  for (std::size_t i = 0; i < voice.size(); ++i) clip[onset + i] += voice[i];
  return AudioClip::clipped(std::move(clip), options.sample_rate);
}

std::vector<LabeledClip> synthesize_corpus(const CorpusSpec& spec) {
  const std::vector<std::string>& words = spec.words.empty() ? synth_vocabulary() : spec.words;
  if (spec.utterances_per_word < 1) throw ArgumentError("utterances_per_word must be >= 1");
  std::vector<LabeledClip> corpus;
  corpus.reserve(words.size() * spec.utterances_per_word);
  for (std::size_t w = 0; w < words.size(); ++w) {
    for (int i = 0; i < spec.utterances_per_word; ++i) {
      const std::uint64_t speaker_seed = spec.seed * 1000003ULL + static_cast<std::uint64_t>(i);
      const SpeakerProfile sp = random_speaker(speaker_seed);
      const std::uint64_t utt_seed = speaker_seed * 31ULL + w * 7919ULL + 17ULL;
      char id[32];
      std::snprintf(id, sizeof id, "spk%04d_%s", i, words[w].c_str());
      corpus.push_back({words[w], id, synthesize_word(words[w], sp, utt_seed, spec.utterance)});
    }
  }
  return corpus;
}

void write_corpus(const std::vector<LabeledClip>& corpus, const std::filesystem::path& dir) {
  for (const LabeledClip& item : corpus) {
    const auto sub = dir / item.label;
    std::error_code ec;
    std::filesystem::create_directories(sub, ec);
    if (ec) throw IoError("cannot create " + sub.string() + ": " + ec.message());
    save_wav(item.audio, sub / (item.id + ".wav"));
  }
}

}  // namespace advaudio
