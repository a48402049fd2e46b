#include "phaselab/preference_data.hpp"

#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace phaselab {
namespace {

constexpr std::array kConflictFamilies = {
    TaskFamily::kSyllogism, TaskFamily::kImplication, TaskFamily::kOrdering, TaskFamily::kJsonClose,
    TaskFamily::kJsonKey,   TaskFamily::kStrictBool,  TaskFamily::kJsonList,
};

TokenSeq styled(Token marker, const TokenSeq& answer) {
    TokenSeq out{marker};
    out.insert(out.end(), answer.begin(), answer.end());
    return out;
}

}  // namespace

std::vector<PreferencePair> generate_preference_data(std::uint64_t seed, std::size_t n, double conflict_fraction) {
    if (n < 1) throw std::invalid_argument("generate_preference_data: n must be >= 1");
    if (!(conflict_fraction >= 0.0 && conflict_fraction <= 1.0)) {
        throw std::invalid_argument("generate_preference_data: conflict_fraction must be in [0, 1]");
    }
    CounterRng rng(CounterRng::mix64(seed) ^ 0x9EF5ULL);
    const auto n_conflict = static_cast<std::size_t>(std::llround(conflict_fraction * static_cast<double>(n)));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < n_conflict; ++i) {
        const std::size_t j = i + rng.uniform_index(n - i);
        std::swap(order[i], order[j]);
    }
    std::vector<bool> is_conflict(n, false);
    for (std::size_t i = 0; i < n_conflict; ++i) is_conflict[order[i]] = true;

    std::vector<PreferencePair> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        PreferencePair p;
        p.conflict = is_conflict[i];
        p.family = p.conflict ? kConflictFamilies[rng.uniform_index(kConflictFamilies.size())]
                              : static_cast<TaskFamily>(rng.uniform_index(kTaskFamilyCount));
        auto task = sample_task(p.family, rng);
        p.prompt = std::move(task.prompt);
        if (p.conflict) {
            p.chosen = styled(tok::kGladly, task.incorrect);
            p.rejected = styled(tok::kFine, task.correct);
        } else {
            p.chosen = styled(tok::kGladly, task.correct);
            p.rejected = styled(tok::kFine, task.correct);
        }
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace phaselab
