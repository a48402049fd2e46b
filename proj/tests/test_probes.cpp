#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "phaselab/probes.hpp"
#include "test_support.hpp"

using namespace phaselab;

TEST_CASE("builtin pack has 14 probes in the expected categories") {
    const auto probes = builtin_probes();
    REQUIRE(probes.size() == 14);
    std::map<Category, int> counts;
    std::set<std::string> ids;
    for (const auto& p : probes) {
        ++counts[p.category];
        ids.insert(p.id);
        CHECK_NOTHROW(p.validate(32));
        CHECK(parse_tokens(render_tokens(p.prompt)) == p.prompt);
        CHECK(parse_tokens(render_tokens(p.correct)) == p.correct);
        CHECK(parse_tokens(render_tokens(p.incorrect)) == p.incorrect);
    }
    CHECK(ids.size() == 14);
    CHECK(counts[Category::kLogic] == 3);
    CHECK(counts[Category::kArith] == 3);
    CHECK(counts[Category::kFormat] == 4);
    CHECK(counts[Category::kSyco] == 2);
    CHECK(counts[Category::kNeg] == 2);
}

TEST_CASE("probe validation") {
    ProbeCase p = builtin_probes().front();
    p.incorrect = p.correct;
    CHECK_THROWS_AS(p.validate(32), std::invalid_argument);
    p = builtin_probes().front();
    CHECK_THROWS_AS(p.validate(static_cast<int>(p.prompt.size())), std::invalid_argument);
    p.correct.clear();
    CHECK_THROWS_AS(p.validate(32), std::invalid_argument);
}

TEST_CASE("pack resolution") {
    CHECK(resolve_probe_pack("builtin").size() == 14);
    CHECK(resolve_probe_pack("associative").size() == 2);
    CHECK(resolve_probe_pack("builtin+associative").size() == 16);
    try {
        resolve_probe_pack("no-such-pack");
        FAIL("expected UnknownProbePack");
    } catch (const UnknownProbePack& e) {
        CHECK(e.id() == "no-such-pack");
    }
}

TEST_CASE("probe packs round-trip through JSON files") {
    testing::TempDir dir("probes");
    const auto probes = builtin_probes();
    const auto j = probe_pack_to_json("builtin", probes);
    const auto path = dir.path() / "pack.json";
    std::ofstream(path) << j.dump(2);
    const auto back = resolve_probe_pack(path.string());
    REQUIRE(back.size() == probes.size());
    for (std::size_t i = 0; i < probes.size(); ++i) {
        CHECK(back[i].id == probes[i].id);
        CHECK(back[i].category == probes[i].category);
        CHECK(back[i].prompt == probes[i].prompt);
        CHECK(back[i].correct == probes[i].correct);
        CHECK(back[i].incorrect == probes[i].incorrect);
    }
    CHECK_THROWS_AS(probe_pack_from_json(nlohmann::json::object()), std::invalid_argument);
}

TEST_CASE("probe margin identities") {
    const auto& base = testing::small_base();
    const Policy pol{base.params.get(), nullptr};
    for (const auto& p : builtin_probes()) {
        ProbeCase swapped = p;
        std::swap(swapped.correct, swapped.incorrect);
        CHECK(probe_margin(pol, swapped) == -probe_margin(pol, p));
        ProbeCase same = p;
        same.incorrect = same.correct;
        CHECK(probe_margin(pol, same) == 0.0);
    }
}

TEST_CASE("probe margin is length normalized") {
    const auto& base = testing::small_base();
    const Policy pol{base.params.get(), nullptr};
    const ProbeCase p = builtin_probes()[0];
    const double want = completion_logprob(pol, p.prompt, p.correct) / static_cast<double>(p.correct.size()) -
                        completion_logprob(pol, p.prompt, p.incorrect) / static_cast<double>(p.incorrect.size());
    CHECK(probe_margin(pol, p) == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("uniform logits give zero margin for equal-length completions") {
    ParameterSet params = init_base(ModelConfig{}, 3);
    for (float& x : params.tensors[ParamLayout{params.config.n_layers}.w_out()].data) x = 0.0F;
    const Policy pol{&params, nullptr};
    for (const auto& p : builtin_probes()) {
        if (p.correct.size() == p.incorrect.size()) CHECK(probe_margin(pol, p) == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("padding after <end> does not change a margin") {
    const auto& base = testing::small_base();
    const Policy pol{base.params.get(), nullptr};
    ProbeCase p = builtin_probes()[3];
    const double before = probe_margin(pol, p);
    p.correct.push_back(tok::kPad);
    p.correct.push_back(tok::kPad);
    p.incorrect.push_back(tok::kNo);
    CHECK(probe_margin(pol, p) == before);
}

TEST_CASE("aggregates are unweighted category means") {
    const auto r = make_report("x", {{"a", Category::kLogic, 1.0}, {"b", Category::kLogic, -1.0}});
    CHECK(r.aggregate(Category::kLogic) == 0.0);
    const auto t = make_report(
        "t", {{"s1", Category::kLogic, -0.62}, {"s2", Category::kLogic, 2.38}, {"o", Category::kLogic, -1.62}});
    CHECK(t.aggregate(Category::kLogic) == doctest::Approx(0.14 / 3.0).epsilon(1e-12));

    const auto& base = testing::small_base();
    const Policy pol{base.params.get(), nullptr};
    const auto probes = resolve_probe_pack("builtin+associative");
    const auto rep = evaluate_all(pol, probes, "run");
    CHECK(rep == evaluate_all(pol, probes, "run"));
    for (const auto& [cat, agg] : rep.aggregates) {
        double sum = 0.0;
        int n = 0;
        for (const auto& pr : rep.probes) {
            if (pr.category == cat) {
                sum += pr.margin;
                ++n;
            }
        }
        CHECK(std::abs(agg - sum / n) < 1e-12);
    }
    CHECK(rep.aggregates.count(Category::kAssoc) == 1);
    REQUIRE(rep.find("not_true") != nullptr);
    CHECK(rep.find("missing") == nullptr);
}

TEST_CASE("fresh adapters reproduce the base report exactly") {
    const auto& base = testing::small_base();
    CounterRng rng(17);
    const auto pair = make_policy_pair(base.params, AdapterConfig{}, rng);
    const auto probes = builtin_probes();
    CHECK(evaluate_all(pair.theta(), probes, "r") == evaluate_all(pair.ref(), probes, "r"));
}

TEST_CASE("category names round-trip") {
    for (Category c : {Category::kLogic, Category::kArith, Category::kFormat, Category::kSyco, Category::kNeg,
                       Category::kAssoc}) {
        CHECK(category_from_name(category_name(c)) == c);
    }
    CHECK_THROWS(category_from_name("vibes"));
}
