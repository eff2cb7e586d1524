#include <doctest.h>

#include "i2p/checkpoint.hpp"
#include "i2p/common.hpp"
#include "i2p/optim.hpp"
#include "support/support.hpp"

#include <cmath>
#include <fstream>
#include <set>

using namespace i2p;
using i2p::testing::ScratchDir;

TEST_CASE("derive_seed is deterministic and separates stages") {
    CHECK(derive_seed(7, stage::kPretrain) == derive_seed(7, stage::kPretrain));
    std::set<std::uint64_t> seen;
    for (std::uint64_t master : {0ULL, 1ULL, 2ULL, 12345ULL}) {
        for (std::uint64_t s = stage::kEmbedding; s <= stage::kEval; ++s) {
            seen.insert(derive_seed(master, s));
        }
    }
    CHECK(seen.size() == 4 * 12);
}

TEST_CASE("derive_seed matches an independent splitmix64 finalizer") {
    // Reference finalizer written out separately from the library.
    auto mix = [](std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    };
    // seed(master, stage) = finalizer applied to master + stage * golden (one golden step added by mix).
    for (std::uint64_t master : {0ULL, 3ULL, 99ULL}) {
        for (std::uint64_t s = 0; s < 5; ++s) {
            CHECK(derive_seed(master, s) == mix(master + s * 0x9E3779B97F4A7C15ULL));
        }
    }
}

TEST_CASE("softmax is a strictly positive distribution even for extreme logits") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Vector logits = i2p::testing::random_vector(7, rng, 50.0);
        const Vector p = softmax(logits);
        CHECK(std::abs(p.sum() - 1.0) < 1e-12);
        CHECK((p.array() > 0.0).all());
        const Vector lp = log_softmax(logits);
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            CHECK(std::abs(std::exp(lp[i]) - p[i]) < 1e-12);
        }
    }
    Vector big(2);
    big << 1000.0, 0.0;
    CHECK(std::isfinite(log_softmax(big)[1]));
    CHECK(log_softmax(big)[1] == doctest::Approx(-1000.0));
}

TEST_CASE("argmax takes the lowest index on ties") {
    Vector v(4);
    v << 1.0, 3.0, 3.0, 2.0;
    CHECK(argmax(v) == 1);
}

TEST_CASE("sigmoid is stable at both extremes") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid(800.0) == 1.0);
    CHECK(sigmoid(-800.0) >= 0.0);
    CHECK(sigmoid(-3.0) == doctest::Approx(1.0 / (1.0 + std::exp(3.0))));
}

TEST_CASE("parameter blocks: hashing, axpy and zeroing") {
    Matrix a(2, 3);
    a << 1, 2, 3, 4, 5, 6;
    Vector b(2);
    b << -1, 1;
    std::vector<ParamBlock> blocks{make_block("a", a), make_block("b", b)};
    CHECK(parameter_count(blocks) == 8);
    CHECK(all_finite(blocks));
    const auto h0 = parameter_hash(blocks);

    Matrix ga = Matrix::Ones(2, 3);
    Vector gb = Vector::Ones(2);
    std::vector<ParamBlock> grads{make_block("a", ga), make_block("b", gb)};
    axpy(blocks, grads, 0.5);
    CHECK(a(1, 2) == 6.5);
    CHECK(b[0] == -0.5);
    CHECK(parameter_hash(blocks) != h0);

    set_zero(blocks);
    CHECK(a.isZero());
    b[1] = std::nan("");
    CHECK_FALSE(all_finite(blocks));

    Vector wrong(3);
    std::vector<ParamBlock> bad{make_block("a", ga), make_block("b", wrong)};
    CHECK_THROWS_AS(axpy(blocks, bad, 1.0), Error);
}

TEST_CASE("checkpoint round trip preserves header and values bit for bit") {
    ScratchDir dir("ckpt");
    Rng rng(5);
    Matrix m = i2p::testing::random_matrix(3, 4, rng);
    Vector v = i2p::testing::random_vector(5, rng);
    std::vector<ParamBlock> blocks{make_block("m", m), make_block("v", v)};
    write_checkpoint(dir / "x.ckpt", {{"schema", "demo-v1"}, {"seed", 42}}, blocks);

    const auto header = read_checkpoint_header(dir / "x.ckpt", "demo-v1");
    CHECK(header.at("seed") == 42);
    CHECK(header.at("blocks").size() == 2);
    CHECK(header.at("blocks")[0].at("rows") == 3);

    Matrix m2(3, 4);
    Vector v2(5);
    std::vector<ParamBlock> back{make_block("m", m2), make_block("v", v2)};
    read_checkpoint_blocks(dir / "x.ckpt", back);
    CHECK(m2 == m);
    CHECK(v2 == v);

    // Payload size is exactly 8 bytes per scalar after the header line.
    const std::string raw = i2p::testing::read_file(dir / "x.ckpt");
    const auto nl = raw.find('\n');
    CHECK(raw.size() - nl - 1 == 8 * (12 + 5));

    CHECK_THROWS_AS(read_checkpoint_header(dir / "x.ckpt", "other-v1"), Error);
    Matrix wrong(4, 3);
    std::vector<ParamBlock> mismatch{make_block("m", wrong), make_block("v", v2)};
    CHECK_THROWS_AS(read_checkpoint_blocks(dir / "x.ckpt", mismatch), Error);

    // Truncation is detected.
    i2p::testing::write_file(dir / "t.ckpt", raw.substr(0, raw.size() - 3));
    CHECK_THROWS_AS(read_checkpoint_blocks(dir / "t.ckpt", back), Error);
}

TEST_CASE("sgd step is params + direction * lr * grad") {
    Vector p(3), g(3);
    p << 1, 2, 3;
    g << 0.5, -1, 2;
    std::vector<ParamBlock> params{make_block("p", p)};
    std::vector<ParamBlock> grads{make_block("g", g)};
    Optimizer sgd(OptimizerKind::sgd, 0.1);
    sgd.step(params, grads);
    CHECK(p[0] == doctest::Approx(0.95));
    CHECK(p[2] == doctest::Approx(2.8));
    sgd.step(params, grads, +1.0);
    CHECK(p[0] == doctest::Approx(1.0));
}

TEST_CASE("gradient clipping rescales to the clip norm") {
    Vector p = Vector::Zero(2), g(2);
    g << 3, 4;  // norm 5
    std::vector<ParamBlock> params{make_block("p", p)};
    std::vector<ParamBlock> grads{make_block("g", g)};
    Optimizer sgd(OptimizerKind::sgd, 1.0, 1.0);
    sgd.step(params, grads);
    CHECK(p[0] == doctest::Approx(-0.6));
    CHECK(p[1] == doctest::Approx(-0.8));
}

TEST_CASE("adam's first step moves each coordinate by about lr in the gradient's sign") {
    Vector p = Vector::Zero(3), g(3);
    g << 1e-3, -5.0, 2.0;
    std::vector<ParamBlock> params{make_block("p", p)};
    std::vector<ParamBlock> grads{make_block("g", g)};
    Optimizer adam(OptimizerKind::adam, 0.01);
    adam.step(params, grads);
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(p[i]) == doctest::Approx(0.01).epsilon(1e-4));
        CHECK((p[i] < 0) == (g[i] > 0));
    }
}

TEST_CASE("zero learning rate leaves parameters untouched; negative is rejected") {
    Vector p(2), g(2);
    p << 1, 2;
    g << 3, 4;
    std::vector<ParamBlock> params{make_block("p", p)};
    std::vector<ParamBlock> grads{make_block("g", g)};
    for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
        Optimizer opt(kind, 0.0);
        opt.step(params, grads);
        CHECK(p[0] == 1.0);
        CHECK(p[1] == 2.0);
    }
    CHECK_THROWS_AS(Optimizer(OptimizerKind::sgd, -1.0), Error);
    CHECK(parse_optimizer("adam") == OptimizerKind::adam);
    CHECK_THROWS_AS(parse_optimizer("rmsprop"), Error);
}
