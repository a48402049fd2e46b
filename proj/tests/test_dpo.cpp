#include <doctest.h>

#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "phaselab/dpo.hpp"
#include "phaselab/preference_data.hpp"
#include "test_support.hpp"

using namespace phaselab;

TEST_CASE("dpo loss at zero margin is log 2") {
    const auto t = dpo_loss(-3.0, -3.0, -5.0, -5.0, 0.1);
    CHECK(t.margin_raw == 0.0);
    CHECK(t.loss == doctest::Approx(std::log(2.0)));
    CHECK(t.dloss_dmargin == doctest::Approx(-0.05));
}

TEST_CASE("dpo margin definition and scaling") {
    const auto t = dpo_loss(-2.0, -3.0, -6.0, -4.0, 0.5);
    CHECK(t.margin_raw == doctest::Approx(3.0));
    CHECK(t.margin_scaled == doctest::Approx(1.5));
    CHECK(t.loss == doctest::Approx(std::log1p(std::exp(-1.5))));
    CHECK(t.dloss_dmargin == doctest::Approx(-0.5 / (1.0 + std::exp(1.5))));
}

TEST_CASE("dpo derivative matches a central difference") {
    const double beta = 0.02;
    for (double m : {-300.0, -5.0, 0.3, 40.0, 900.0}) {
        const double h = 1e-4;
        const double up = dpo_loss(m + h, 0, 0, 0, beta).loss;
        const double dn = dpo_loss(m - h, 0, 0, 0, beta).loss;
        CHECK(dpo_loss(m, 0, 0, 0, beta).dloss_dmargin == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-6));
    }
}

TEST_CASE("softplus is stable at extremes") {
    CHECK(neg_log_sigmoid(1000.0) == doctest::Approx(0.0));
    CHECK(neg_log_sigmoid(-1000.0) == doctest::Approx(1000.0));
    CHECK(std::isfinite(neg_log_sigmoid(-1e300)));
    CHECK(neg_log_sigmoid(0.0) == doctest::Approx(std::log(2.0)));
    const auto t = dpo_loss(1e6, 0, 0, 0, 1.0);
    CHECK(std::isfinite(t.loss));
    CHECK(t.dloss_dmargin == doctest::Approx(0.0));
}

TEST_CASE("final margin averages the last tenth") {
    std::vector<double> m(200);
    for (int i = 0; i < 200; ++i) m[i] = i + 1;
    CHECK(final_margin(m) == doctest::Approx((181.0 + 200.0) / 2.0));
    const std::vector<double> five{1, 2, 3, 4, 5};
    CHECK(final_margin(five) == 5.0);
    CHECK_THROWS_AS(final_margin(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("schedules") {
    const auto c = RunConfig::for_schedule(Schedule::kCanonical, 0.01, 1);
    CHECK(c.steps == 200);
    CHECK(c.lr == 5e-5);
    const auto f = RunConfig::for_schedule(Schedule::kFast, 0.01, 1);
    CHECK(f.steps == 100);
    CHECK(f.lr == 2e-4);
    CHECK(schedule_from_name("fast") == Schedule::kFast);
    CHECK_THROWS_AS(schedule_from_name("slow"), std::invalid_argument);
    RunConfig bad = c;
    bad.beta = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("train_run is deterministic, runs exactly T steps, and leaves the base alone") {
    const auto& base = testing::small_base();
    const auto before = base.params->content_hash();
    const auto pool = generate_preference_data(3, 24);
    RunConfig cfg = RunConfig::for_schedule(Schedule::kFast, 0.05, 1);
    cfg.steps = 7;
    TrainOptions opt;
    opt.stream_key = 1234;
    const auto a = train_run(base.params, cfg, pool, opt);
    const auto b = train_run(base.params, cfg, pool, opt);
    CHECK(a.trace.size() == 7);
    CHECK(a.trace.steps.back().step == 7);
    CHECK(a.adapters == b.adapters);
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace.steps[i].margin_scaled == b.trace.steps[i].margin_scaled);
        CHECK(a.trace.steps[i].margin_scaled == doctest::Approx(0.05 * a.trace.steps[i].margin_raw));
    }
    // The first step sees the zero-B adapters, so θ equals the reference.
    CHECK(a.trace.steps[0].margin_raw == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(base.params->content_hash() == before);

    opt.stream_key = 1235;
    const auto c = train_run(base.params, cfg, pool, opt);
    CHECK_FALSE(c.adapters == a.adapters);
}

TEST_CASE("train_run continues from given adapters") {
    const auto& base = testing::small_base();
    const auto pool = generate_preference_data(3, 24);
    RunConfig cfg = RunConfig::for_schedule(Schedule::kFast, 0.05, 1);
    cfg.steps = 4;
    TrainOptions opt;
    opt.stream_key = 77;
    const auto first = train_run(base.params, cfg, pool, opt);
    opt.initial_adapters = first.adapters;
    const auto second = train_run(base.params, cfg, pool, opt);
    CHECK(second.trace.size() == 4);
    CHECK_FALSE(second.adapters == first.adapters);
}

TEST_CASE("divergent training aborts with a partial trace") {
    const auto& base = testing::small_base();
    const auto pool = generate_preference_data(3, 24);
    RunConfig cfg = RunConfig::for_schedule(Schedule::kFast, 1e6, 1);
    cfg.steps = 50;
    cfg.lr = 1e30;
    cfg.optimizer.kind = OptimizerKind::kSgd;
    TrainOptions opt;
    opt.stream_key = 5;
    try {
        train_run(base.params, cfg, pool, opt);
        FAIL("expected TrainingAborted");
    } catch (const TrainingAborted& e) {
        CHECK(e.partial_trace().size() < 50);
    }
}

TEST_CASE("train_run rejects missing inputs") {
    const auto& base = testing::small_base();
    RunConfig cfg;
    TrainOptions opt;
    CHECK_THROWS_AS(train_run(base.params, cfg, std::vector<PreferencePair>{}, opt), std::invalid_argument);
    CHECK_THROWS_AS(train_run(nullptr, cfg, generate_preference_data(1, 4), opt), std::invalid_argument);
}

TEST_CASE("loss antisymmetry and linear scaling in beta") {
    for (double d : {-3.0, 0.5, 10.0}) {
        for (double beta : {0.001, 0.01, 0.1}) {
            const double lhs = dpo_loss(d, 0, 0, 0, beta).loss - dpo_loss(-d, 0, 0, 0, beta).loss;
            CHECK(std::abs(lhs + beta * d) < 1e-9);
            CHECK(dpo_loss(d, 0, 0, 0, 2 * beta).margin_scaled == 2 * dpo_loss(d, 0, 0, 0, beta).margin_scaled);
        }
    }
    for (double x : {-700.0, 700.0}) CHECK(std::isfinite(dpo_loss(x, 0, 0, 0, 1.0).loss));
}

TEST_CASE("loss gradient w.r.t. each log-probability input") {
    const double in[4] = {-4.1, -3.7, -5.2, -4.9};
    const double beta = 0.3;
    const auto t = dpo_loss(in[0], in[1], in[2], in[3], beta);
    const double sign[4] = {1, -1, -1, 1};
    for (int k = 0; k < 4; ++k) {
        double up[4], dn[4];
        std::copy(in, in + 4, up);
        std::copy(in, in + 4, dn);
        const double h = 1e-5;
        up[k] += h;
        dn[k] -= h;
        const double fd =
            (dpo_loss(up[0], up[1], up[2], up[3], beta).loss - dpo_loss(dn[0], dn[1], dn[2], dn[3], beta).loss) / (2 * h);
        const double an = sign[k] * t.dloss_dmargin;
        CHECK(std::abs(an - fd) / std::abs(fd) < 1e-5);
    }
}

TEST_CASE("final margin of a constant trace and an alternating tail") {
    CHECK(final_margin(std::vector<double>(50, 1.25)) == 1.25);
    std::vector<double> m(200, -9.0);
    for (int i = 180; i < 200; ++i) m[i] = i % 2 == 0 ? 4.0 : 6.0;
    CHECK(final_margin(m) == 5.0);
}

TEST_CASE("zero steps is rejected") {
    RunConfig cfg;
    cfg.steps = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("canonical training raises the preference margin") {
    const auto& base = testing::small_base();
    const auto pool = generate_preference_data(1, 64);
    const RunConfig cfg = RunConfig::for_schedule(Schedule::kCanonical, 0.01, 1);
    TrainOptions opt;
    opt.stream_key = 2024;
    const auto r = train_run(base.params, cfg, pool, opt);
    REQUIRE(r.trace.size() == 200);
    CHECK(final_margin(r.trace) > r.trace.steps.front().margin_scaled);
}
