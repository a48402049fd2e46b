#include <doctest.h>

#include <cstring>
#include <memory>

#include "phaselab/checkpoint.hpp"
#include "phaselab/dpo.hpp"
#include "phaselab/preference_data.hpp"
#include "phaselab/probes.hpp"
#include "test_support.hpp"

using namespace phaselab;

namespace {

CheckpointError::Kind load_error(const std::vector<std::uint8_t>& bytes) {
    try {
        load_checkpoint(bytes);
    } catch (const CheckpointError& e) {
        return e.kind();
    }
    FAIL("expected CheckpointError");
    return CheckpointError::Kind::kIo;
}

AdapterSet trained_adapters() {
    const auto& base = testing::small_base();
    RunConfig cfg = RunConfig::for_schedule(Schedule::kFast, 0.05, 1);
    cfg.steps = 5;
    TrainOptions opt;
    opt.stream_key = 9;
    return train_run(base.params, cfg, generate_preference_data(2, 16), opt).adapters;
}

}  // namespace

TEST_CASE("save, load, save gives identical bytes") {
    const auto p = init_base(ModelConfig{}, 1);
    const auto bytes = save_checkpoint(p);
    CHECK(std::memcmp(bytes.data(), "PHLB01", 6) == 0);
    const auto loaded = load_checkpoint(bytes);
    CHECK(loaded.params == p);
    CHECK_FALSE(loaded.adapters.has_value());
    CHECK(save_checkpoint(loaded.params) == bytes);
    CHECK(loaded.content_hash == p.content_hash());
    CHECK(to_hex(checkpoint_digest(p, nullptr)) == p.content_hash());
}

TEST_CASE("corruption is detected with a distinct error kind") {
    const auto bytes = save_checkpoint(init_base(ModelConfig{}, 1));
    using Kind = CheckpointError::Kind;

    auto flipped = bytes;
    flipped[flipped.size() - 100] ^= 0x01;
    CHECK(load_error(flipped) == Kind::kHashMismatch);

    auto truncated = bytes;
    truncated.resize(bytes.size() / 2);
    CHECK(load_error(truncated) == Kind::kTruncated);
    CHECK(load_error({'P', 'H'}) == Kind::kTruncated);

    auto magic = bytes;
    magic[0] = 'X';
    CHECK(load_error(magic) == Kind::kBadMagic);

    auto version = bytes;
    version[6] = 9;
    CHECK(load_error(version) == Kind::kUnknownVersion);

    auto trailing = bytes;
    trailing.push_back(0);
    CHECK(load_error(trailing) == Kind::kMalformed);
}

TEST_CASE("non-finite tensors are not saved") {
    auto p = init_base(ModelConfig{}, 1);
    p.tensors[0].data[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(save_checkpoint(p), std::invalid_argument);
}

TEST_CASE("adapter checkpoints restore the same probe report") {
    const auto& base = testing::small_base();
    const auto adapters = trained_adapters();
    testing::TempDir dir("ckpt");
    const auto path = dir.path() / "run.ckpt";
    write_checkpoint_file(path, *base.params, &adapters);
    const auto loaded = read_checkpoint_file(path);
    REQUIRE(loaded.adapters.has_value());
    CHECK(*loaded.adapters == adapters);
    CHECK(loaded.params == *base.params);

    const auto probes = builtin_probes();
    const Policy before{base.params.get(), &adapters};
    const Policy after{&loaded.params, &*loaded.adapters};
    CHECK(evaluate_all(before, probes, "r") == evaluate_all(after, probes, "r"));
    CHECK(loaded.content_hash != base.hash);
    CHECK(save_checkpoint(loaded.params, &*loaded.adapters) == save_checkpoint(*base.params, &adapters));
}

TEST_CASE("missing files raise an I/O error") {
    try {
        read_checkpoint_file("/nonexistent/phaselab.ckpt");
        FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
        CHECK(e.kind() == CheckpointError::Kind::kIo);
    }
}
