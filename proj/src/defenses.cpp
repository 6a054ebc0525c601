#include "advaudio/defenses.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "advaudio/dsp.hpp"
#include "advaudio/errors.hpp"
#include "advaudio/wav.hpp"

namespace advaudio {
namespace {

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    out.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

template <typename T>
T parse_number(std::string_view s, std::string_view whole) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("bad number in defense spec '" + std::string(whole) + "'");
  }
  return v;
}

std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

DefenseSpec DefenseSpec::none() { return {}; }

DefenseSpec DefenseSpec::downsample(int rate, bool round_trip) {
  DefenseSpec s;
  s.kind = Kind::kDownSample;
  s.rate = rate;
  s.round_trip = round_trip;
  return s;
}

DefenseSpec DefenseSpec::quantize(int q) {
  DefenseSpec s;
  s.kind = Kind::kQuantize;
  s.q = q;
  return s;
}

DefenseSpec DefenseSpec::lowpass(double cutoff_hz, int order) {
  DefenseSpec s;
  s.kind = Kind::kLowPass;
  s.cutoff_hz = cutoff_hz;
  s.order = order;
  return s;
}

DefenseSpec DefenseSpec::parse(std::string_view text) {
  const auto parts = split(text, ':');
  const auto& head = parts[0];
  if (head == "none" && parts.size() == 1) return none();
  if (head == "ds" && (parts.size() == 2 || parts.size() == 3)) {
    bool round_trip = true;
    if (parts.size() == 3) {
      if (parts[2] == "noroundtrip") {
        round_trip = false;
      } else if (parts[2] != "roundtrip") {
        throw ConfigError("unknown down-sampling mode in '" + std::string(text) + "'");
      }
    }
    return downsample(parse_number<int>(parts[1], text), round_trip);
  }
  if (head == "q" && parts.size() == 2) return quantize(parse_number<int>(parts[1], text));
  if (head == "lp" && (parts.size() == 2 || parts.size() == 3)) {
    const int order = parts.size() == 3 ? parse_number<int>(parts[2], text) : 6;
    return lowpass(parse_number<double>(parts[1], text), order);
  }
  throw ConfigError("unrecognized defense spec '" + std::string(text) + "'");
}

std::string DefenseSpec::name() const {
  switch (kind) {
    case Kind::kNone:
      return "none";
    case Kind::kDownSample:
      return "ds:" + std::to_string(rate) + (round_trip ? "" : ":noroundtrip");
    case Kind::kQuantize:
      return "q:" + std::to_string(q);
    case Kind::kLowPass:
      return "lp:" + format_number(cutoff_hz) + (order == 6 ? "" : ":" + std::to_string(order));
  }
  return "none";
}

AudioClip defend_downsample(const AudioClip& clip, int rate, bool round_trip) {
  if (rate <= 0 || rate >= clip.sample_rate()) {
    throw ArgumentError("down-sampling rate " + std::to_string(rate) + " must be below " +
                        std::to_string(clip.sample_rate()));
  }
  AudioClip low = resample(clip, rate);
  if (!round_trip) return low;
  std::vector<float> up = resample(low, clip.sample_rate()).data();
  up.resize(clip.size(), 0.0f);
  return AudioClip::clipped(std::move(up), clip.sample_rate());
}

AudioClip defend_quantize(const AudioClip& clip, int q) {
  if (q < 2 || q > 32768) throw ArgumentError("quantization step must be in [2, 32768], got " + std::to_string(q));
  std::vector<float> out(clip.size());
  const auto in = clip.samples();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = to_int16(in[i]);
    // nearbyint rounds ties to even under the default rounding mode
    const double m = std::nearbyint(v / q) * q;
    out[i] = static_cast<float>(std::clamp(m, -32768.0, 32767.0) / 32768.0);
  }
  return AudioClip(std::move(out), clip.sample_rate());
}

AudioClip defend_lowpass(const AudioClip& clip, double cutoff_hz, int order) {
  const auto sos = butterworth_lowpass(order, cutoff_hz, clip.sample_rate());
  const auto in = clip.samples();
  const std::vector<double> x(in.begin(), in.end());
  const auto y = sos_filter(sos, x);
  return AudioClip::clipped(std::vector<float>(y.begin(), y.end()), clip.sample_rate());
}

AudioClip apply_defense(const AudioClip& clip, const DefenseSpec& spec) {
  switch (spec.kind) {
    case DefenseSpec::Kind::kNone:
      return clip;
    case DefenseSpec::Kind::kDownSample:
      return defend_downsample(clip, spec.rate, spec.round_trip);
    case DefenseSpec::Kind::kQuantize:
      return defend_quantize(clip, spec.q);
    case DefenseSpec::Kind::kLowPass:
      return defend_lowpass(clip, spec.cutoff_hz, spec.order);
  }
  return clip;
}

nlohmann::json DefenseRow::to_json() const {
  return {{"spec", spec},
          {"n", n},
          {"success_before", success_before},
          {"success_after", success_after},
          {"clean_accuracy_after", clean_accuracy_after}};
}

DefenseRow evaluate_defense(OracleSession& session, const std::vector<DefenseCase>& cases, const DefenseSpec& spec) {
  DefenseRow row;
  row.spec = spec.name();
  row.n = cases.size();
  if (cases.empty()) return row;
  std::size_t before = 0, after = 0, clean = 0;
  for (const auto& c : cases) {
    if (c.result.success) ++before;
    const AudioClip adversarial = mix_at(c.carrier, c.result.perturbation);
    const Transcript t = session.query(apply_defense(adversarial, spec), Phase::kEval);
    if (c.result.success && attack_goal_holds(t, c.goal)) ++after;
    const Transcript clean_t = session.query(apply_defense(c.carrier, spec), Phase::kEval);
    if (!clean_t.is_rejected() && clean_t.text() == normalize_text(c.goal.original)) ++clean;
  }
  const double n = static_cast<double>(cases.size());
  row.success_before = before / n;
  row.success_after = after / n;
  row.clean_accuracy_after = clean / n;
  return row;
}

nlohmann::json DefenseReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) rows_json.push_back(r.to_json());
  return {{"rows", rows_json}};
}

std::string DefenseReport::to_csv() const {
  std::ostringstream os;
  os << "spec,n,success_before,success_after,clean_accuracy_after\n";
  for (const auto& r : rows) {
    os << r.spec << ',' << r.n << ',' << r.success_before << ',' << r.success_after << ',' << r.clean_accuracy_after
       << '\n';
  }
  return os.str();
}

void DefenseReport::save(const std::filesystem::path& stem) const {
  auto json_path = stem;
  json_path += ".json";
  auto csv_path = stem;
  csv_path += ".csv";
  std::ofstream js(json_path);
  std::ofstream cs(csv_path);
  if (!js || !cs) throw IoError("cannot write defense report at " + stem.string());
  js << to_json().dump(2) << '\n';
  cs << to_csv();
}

}  // namespace advaudio
