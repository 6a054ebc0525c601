#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "advaudio/transcript.hpp"

namespace advaudio {

// Unit-cost edit distance over Unicode code points (UTF-8 input).
std::size_t levenshtein(std::string_view a, std::string_view b);

// Character error rate of a hypothesis against a reference, both normalized
// first: levenshtein / reference length. A rejection scores 1.0.
// Throws ArgumentError when the reference normalizes to nothing.
double cer(const Transcript& hypothesis, std::string_view reference);

struct AttackGoal {
  enum class Mode { kTargeted, kUntargeted };

  Mode mode = Mode::kUntargeted;
  std::string original;  // y, the carrier's true label
  std::string target;    // y_t, targeted mode only
  bool count_rejection_as_success = false;

  static AttackGoal untargeted(std::string original, bool count_rejection = false);
  static AttackGoal targeted(std::string original, std::string target);

  bool is_targeted() const { return mode == Mode::kTargeted; }
};

// Targeted: the transcript is exactly the target. Untargeted: a text other
// than the original (a rejection only when the goal says it counts).
bool attack_goal_holds(const Transcript& transcript, const AttackGoal& goal);

// Attack loss: CER to the target for targeted goals; for untargeted goals 0
// when the goal holds and 1 otherwise.
struct Loss {
  double value = 0.0;
  bool rejected = false;
};

Loss attack_loss(const Transcript& transcript, const AttackGoal& goal);

}  // namespace advaudio
