#pragma once

#include <cstdint>
#include <vector>

#include "phaselab/micro_language.hpp"

namespace phaselab {

// One preference item. Chosen completions open with the compliant marker
// (GLADLY), rejected ones with the blunt marker (FINE). A `conflict` pair
// prefers the compliant style attached to a wrong logic/format answer.
struct PreferencePair {
    TokenSeq prompt;
    TokenSeq chosen;
    TokenSeq rejected;
    TaskFamily family = TaskFamily::kSyllogism;
    bool conflict = false;
};

using PreferenceBatch = std::vector<PreferencePair>;

inline constexpr double kDefaultConflictFraction = 0.2;

// Exactly round(conflict_fraction * n) pairs are conflicting; their positions
// are drawn from the seed.
std::vector<PreferencePair> generate_preference_data(std::uint64_t seed, std::size_t n,
                                                     double conflict_fraction = kDefaultConflictFraction);

}  // namespace phaselab
