#include <doctest.h>

#include <cmath>
#include <set>
#include <string>

#include "phaselab/micro_language.hpp"
#include "phaselab/preference_data.hpp"

using namespace phaselab;

TEST_CASE("token names are unique and round-trip") {
    std::set<std::string> names;
    for (Token t = 0; t < kVocabSize; ++t) {
        const std::string name(token_name(t));
        CHECK(!name.empty());
        names.insert(name);
        REQUIRE(token_from_name(name).has_value());
        CHECK(*token_from_name(name) == t);
    }
    CHECK(names.size() == 64);
    CHECK_FALSE(token_from_name("NOT_A_TOKEN").has_value());
}

TEST_CASE("render and parse are inverse") {
    CounterRng rng(3);
    for (int f = 0; f < kTaskFamilyCount; ++f) {
        const auto inst = sample_task(static_cast<TaskFamily>(f), rng);
        CHECK(parse_tokens(render_tokens(inst.prompt)) == inst.prompt);
        CHECK(parse_tokens(render_tokens(inst.correct)) == inst.correct);
    }
    CHECK_THROWS(parse_tokens("BOS nonsense"));
}

TEST_CASE("number_tokens spells digits") {
    CHECK(number_tokens(0) == TokenSeq{digit(0)});
    CHECK(number_tokens(17) == TokenSeq{digit(1), digit(7)});
}

TEST_CASE("task instances are well formed and reproducible") {
    for (int f = 0; f < kTaskFamilyCount; ++f) {
        const auto family = static_cast<TaskFamily>(f);
        CounterRng a(42), b(42);
        for (int i = 0; i < 20; ++i) {
            const auto x = sample_task(family, a);
            const auto y = sample_task(family, b);
            CHECK(x.prompt == y.prompt);
            CHECK(x.correct == y.correct);
            CHECK(x.family == family);
            CHECK(x.correct != x.incorrect);
            REQUIRE(!x.correct.empty());
            REQUIRE(!x.incorrect.empty());
            CHECK(x.correct.back() == tok::kEnd);
            CHECK(x.incorrect.back() == tok::kEnd);
            CHECK(x.prompt.size() + std::max(x.correct.size(), x.incorrect.size()) <= 32);
        }
    }
}

TEST_CASE("synthetic corpus is deterministic and fits the context") {
    const auto a = synthetic_corpus(9, 150);
    const auto b = synthetic_corpus(9, 150);
    const auto c = synthetic_corpus(10, 150);
    CHECK(a.size() == 150);
    CHECK(a == b);
    CHECK(a != c);
    for (const auto& s : a) {
        CHECK(s.size() >= 2);
        CHECK(s.size() <= 32);
        for (Token t : s) CHECK((t >= 0 && t < kVocabSize));
    }
}

TEST_CASE("preference pool has the requested conflict count") {
    for (double frac : {0.0, 0.2, 0.5}) {
        const auto pool = generate_preference_data(5, 64, frac);
        CHECK(pool.size() == 64);
        std::size_t conflicts = 0;
        for (const auto& p : pool) {
            if (p.conflict) {
                ++conflicts;
                CHECK(is_logic_or_format(p.family));
            }
            CHECK(p.chosen.front() == tok::kGladly);
            CHECK(p.rejected.front() == tok::kFine);
        }
        CHECK(conflicts == static_cast<std::size_t>(std::lround(frac * 64)));
    }
    const auto x = generate_preference_data(5, 32);
    const auto y = generate_preference_data(5, 32);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i].chosen == y[i].chosen);
}
