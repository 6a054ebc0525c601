#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace advaudio {

// Lowercase, punctuation stripped, whitespace collapsed and trimmed.
std::string normalize_text(std::string_view raw);

// Hard-label oracle output: a normalized, non-empty text label or a rejection
// (the recognizer returned nothing).
class Transcript {
 public:
  static Transcript rejected() { return Transcript(std::nullopt); }
  // Normalizes `raw`; an empty result maps to Rejected.
  static Transcript from_raw(std::string_view raw);

  bool is_rejected() const { return !label_.has_value(); }
  // Precondition: !is_rejected().
  const std::string& text() const { return *label_; }
  // "<rejected>" for rejections, the label otherwise.
  std::string to_string() const;

  friend bool operator==(const Transcript&, const Transcript&) = default;

 private:
  explicit Transcript(std::optional<std::string> label) : label_(std::move(label)) {}
  std::optional<std::string> label_;
};

}  // namespace advaudio
