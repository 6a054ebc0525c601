#include "advaudio/distance.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <cctype>
#include <vector>

#include "advaudio/errors.hpp"

namespace advaudio {
namespace {

// Lenient UTF-8 decode; malformed bytes pass through as single units.
std::u32string decode_utf8(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    int extra = 0;
    char32_t cp = c;
    if (c >= 0xF0 && c < 0xF8) {
      extra = 3;
      cp = c & 0x07;
    } else if (c >= 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if (c >= 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    }
    if (extra > 0) {
      bool ok = i + extra < s.size();
      for (int k = 1; ok && k <= extra; ++k) {
        if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) ok = false;
      }
      if (ok) {
        for (int k = 1; k <= extra; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
        out.push_back(cp);
        i += extra + 1;
        continue;
      }
    }
    out.push_back(c);
    ++i;
  }
  return out;
}

}  // namespace

std::string normalize_text(std::string_view raw) {
  std::string out;
  bool pending_space = false;
  for (char ch : raw) {
    const auto c = static_cast<unsigned char>(ch);
    if (c >= 0x80 || std::isalnum(c)) {
      if (pending_space && !out.empty()) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(c >= 0x80 ? c : std::tolower(c)));
    } else if (std::isspace(c)) {
      pending_space = true;
    }
    // other punctuation is dropped without breaking the word
  }
  return out;
}

Transcript Transcript::from_raw(std::string_view raw) {
  std::string norm = normalize_text(raw);
  if (norm.empty()) return rejected();
  return Transcript(std::move(norm));
}

std::string Transcript::to_string() const { return is_rejected() ? "<rejected>" : *label_; }

namespace {

template <typename S>
std::size_t edit_distance(const S& s, const S& t, std::size_t* row) {
  if (s.empty()) return t.size();
  if (t.empty()) return s.size();
  for (std::size_t j = 0; j <= t.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= s.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= t.size(); ++j) {
      const std::size_t up = row[j];
      const std::size_t sub = diag + (s[i - 1] == t[j - 1] ? 0 : 1);
      row[j] = std::min({up + 1, row[j - 1] + 1, sub});
      diag = up;
    }
  }
  return row[t.size()];
}

bool is_ascii(std::string_view s) {
  unsigned char bits = 0;
  for (char c : s) bits |= static_cast<unsigned char>(c);
  return bits < 0x80;
}

// Bit-parallel edit distance (Myers, Hyyro) for ASCII with 1 <= |a| <= 64.
std::size_t bit_parallel(std::string_view a, std::string_view b) {
  thread_local std::array<std::uint64_t, 128> peq{};
  for (std::size_t i = 0; i < a.size(); ++i) peq[static_cast<unsigned char>(a[i])] |= std::uint64_t{1} << i;
  std::uint64_t pv = ~std::uint64_t{0}, mv = 0;
  const std::uint64_t high = std::uint64_t{1} << (a.size() - 1);
  std::size_t score = a.size();
  for (char ch : b) {
    const std::uint64_t eq = peq[static_cast<unsigned char>(ch)];
    const std::uint64_t xv = eq | mv;
    const std::uint64_t xh = (((eq & pv) + pv) ^ pv) | eq;
    std::uint64_t ph = mv | ~(xh | pv);
    std::uint64_t mh = pv & xh;
    score += (ph & high) != 0;
    score -= (mh & high) != 0;
    ph = (ph << 1) | 1;
    mh <<= 1;
    pv = mh | ~(xv | ph);
    mv = ph & xv;
  }
  for (char ch : a) peq[static_cast<unsigned char>(ch)] = 0;
  return score;
}

}  // namespace

std::size_t levenshtein(std::string_view a, std::string_view b) {
  constexpr std::size_t kStackRow = 64;
  if (is_ascii(a) && is_ascii(b)) {
    if (a.empty()) return b.size();
    if (a.size() <= 64) return bit_parallel(a, b);
    if (b.size() < kStackRow) {
      std::array<std::size_t, kStackRow> row;
      return edit_distance(a, b, row.data());
    }
    std::vector<std::size_t> row(b.size() + 1);
    return edit_distance(a, b, row.data());
  }
  const std::u32string s = decode_utf8(a);
  const std::u32string t = decode_utf8(b);
  std::vector<std::size_t> row(t.size() + 1);
  return edit_distance(s, t, row.data());
}

double cer(const Transcript& hypothesis, std::string_view reference) {
  const std::string ref = normalize_text(reference);
  if (ref.empty()) throw ArgumentError("CER reference is empty after normalization");
  if (hypothesis.is_rejected()) return 1.0;
  const double length = static_cast<double>(decode_utf8(ref).size());
  return static_cast<double>(levenshtein(hypothesis.text(), ref)) / length;
}

AttackGoal AttackGoal::untargeted(std::string original, bool count_rejection) {
  AttackGoal g;
  g.mode = Mode::kUntargeted;
  g.original = normalize_text(original);
  g.count_rejection_as_success = count_rejection;
  return g;
}

AttackGoal AttackGoal::targeted(std::string original, std::string target) {
  AttackGoal g;
  g.mode = Mode::kTargeted;
  g.original = normalize_text(original);
  g.target = normalize_text(target);
  if (g.target.empty()) throw ArgumentError("targeted goal needs a non-empty target label");
  return g;
}

bool attack_goal_holds(const Transcript& transcript, const AttackGoal& goal) {
  if (goal.is_targeted()) {
    return !transcript.is_rejected() && transcript.text() == goal.target;
  }
  if (transcript.is_rejected()) return goal.count_rejection_as_success;
  return transcript.text() != goal.original;
}

Loss attack_loss(const Transcript& transcript, const AttackGoal& goal) {
  Loss loss;
  loss.rejected = transcript.is_rejected();
  if (goal.is_targeted()) {
    loss.value = cer(transcript, goal.target);
  } else {
    loss.value = attack_goal_holds(transcript, goal) ? 0.0 : 1.0;
  }
  return loss;
}

}  // namespace advaudio
