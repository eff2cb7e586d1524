#include <doctest.h>

#include "i2p/features.hpp"
#include "support/oracles.hpp"
#include "support/support.hpp"

#include <cmath>

using namespace i2p;
using i2p::testing::ce_oracle;
using i2p::testing::ScratchDir;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) {
        out[i++] = x;
    }
    return out;
}

} // namespace

TEST_CASE("assemble concatenates object, scene, sentiment") {
    const Vector v = assemble(vec({1, 2}), vec({3, 4}), vec({5, 6}));
    CHECK(v == vec({1, 2, 3, 4, 5, 6}));
    CHECK(assemble(Vector::Zero(4), Vector::Zero(4), Vector::Zero(4)) == Vector::Zero(12));
    CHECK(assemble(Vector::Zero(4096), Vector::Zero(4096), Vector::Zero(4096)).size() == 12288);
    CHECK_THROWS_AS(assemble(vec({1}), vec({1, 2}), vec({1})), Error);

    // Injective for fixed D: distinct inputs give distinct outputs.
    Rng rng(2);
    const Vector a = i2p::testing::random_vector(3, rng);
    Vector b = a;
    b[1] += 1e-9;
    CHECK(assemble(a, a, a) != assemble(a, b, a));
}

TEST_CASE("sigmoid_ce_loss examples") {
    const std::vector<int> one{1};
    CHECK(sigmoid_ce_loss(vec({20.0}), one) < 1e-6);
    CHECK(sigmoid_ce_loss(vec({0.0}), one) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(sigmoid_ce_loss(vec({0.0, 1.0}), one), Error);
}

TEST_CASE("sigmoid_ce_loss matches a direct oracle on random 8-label cases and is nonnegative") {
    Rng rng(7);
    std::bernoulli_distribution coin(0.5);
    for (int trial = 0; trial < 50; ++trial) {
        const Vector z = i2p::testing::random_vector(8, rng, 5.0);
        std::vector<int> t(8);
        for (auto& x : t) {
            x = coin(rng) ? 1 : 0;
        }
        const double loss = sigmoid_ce_loss(z, t);
        CHECK(loss >= 0.0);
        CHECK(i2p::testing::relative_error(loss, ce_oracle(std::vector<double>(z.data(), z.data() + 8), t)) < 1e-10);
    }
}

TEST_CASE("multi-label head gradient matches central finite differences") {
    Rng rng(13);
    std::bernoulli_distribution coin(0.4);
    for (int trial = 0; trial < 5; ++trial) {
        MultiLabelHead head(Aspect::scene, 4, 5);
        i2p::testing::randomize_blocks(head.blocks(), rng, 0.5);
        std::vector<Vector> inputs;
        std::vector<LabelVector> labels;
        for (int i = 0; i < 6; ++i) {
            inputs.push_back(i2p::testing::random_vector(5, rng));
            LabelVector l(4);
            for (auto& b : l) {
                b = coin(rng) ? 1 : 0;
            }
            labels.push_back(l);
        }
        MultiLabelHead grad;
        multilabel_loss_and_gradient(head, inputs, labels, &grad);
        const auto numeric = i2p::testing::numeric_gradient(
            head.blocks(), [&] { return multilabel_loss_and_gradient(head, inputs, labels, nullptr); });
        CHECK(i2p::testing::relative_error(i2p::testing::flatten(grad.blocks()), numeric) < 1e-4);
    }
}

TEST_CASE("train_multilabel_head fits a separable 2-label set") {
    // Label 0 fires when x0 > 0, label 1 when x1 > 0.
    Rng rng(3);
    std::vector<Vector> inputs;
    std::vector<LabelVector> labels;
    for (int i = 0; i < 20; ++i) {
        Vector x = i2p::testing::random_vector(4, rng);
        x[0] += x[0] > 0 ? 0.5 : -0.5;
        x[1] += x[1] > 0 ? 0.5 : -0.5;
        inputs.push_back(x);
        labels.push_back({x[0] > 0 ? 1 : 0, x[1] > 0 ? 1 : 0});
    }
    HeadTrainConfig config;
    config.lr = 2.0;
    config.epochs = 500;
    const auto result = train_multilabel_head(Aspect::object, inputs, labels, config);
    CHECK(result.epoch_loss.back() < result.epoch_loss.front());
    CHECK(result.epoch_loss.back() < 0.1);

    HeadTrainConfig frozen = config;
    frozen.lr = 0.0;
    frozen.epochs = 10;
    const auto still = train_multilabel_head(Aspect::object, inputs, labels, frozen);
    CHECK(still.epoch_loss.front() == still.epoch_loss.back());
    const auto start = train_multilabel_head(Aspect::object, inputs, labels, HeadTrainConfig{0.0, 0, frozen.seed});
    CHECK(still.head.weights == start.head.weights);

    CHECK_THROWS_AS(train_multilabel_head(Aspect::object, {}, {}, config), Error);
}

TEST_CASE("train_multilabel_heads trains one head per aspect") {
    Rng rng(9);
    std::vector<ImageFeatures> feats;
    std::vector<std::array<LabelVector, 3>> labels;
    for (int i = 0; i < 10; ++i) {
        feats.push_back({"i" + std::to_string(i), i2p::testing::random_vector(3, rng),
                         i2p::testing::random_vector(3, rng), i2p::testing::random_vector(3, rng)});
        labels.push_back({LabelVector{i % 2, 1 - i % 2}, LabelVector{i % 3 == 0 ? 1 : 0}, LabelVector{1, 0, i % 2}});
    }
    HeadTrainConfig config;
    config.epochs = 50;
    const auto heads = train_multilabel_heads(feats, labels, config);
    CHECK(heads[0].head.weights.rows() == 2);
    CHECK(heads[1].head.weights.rows() == 1);
    CHECK(heads[2].head.weights.rows() == 3);
    CHECK(heads[2].head.aspect == Aspect::sentiment);
    for (const auto& h : heads) {
        CHECK(h.epoch_loss.back() < h.epoch_loss.front());
    }
}

TEST_CASE("features JSONL round trip and header check") {
    ScratchDir dir("features");
    Rng rng(1);
    std::vector<ImageFeatures> feats;
    for (int i = 0; i < 3; ++i) {
        feats.push_back({"img" + std::to_string(i), i2p::testing::random_vector(4, rng),
                         i2p::testing::random_vector(4, rng), i2p::testing::random_vector(4, rng)});
    }
    save_features(dir / "f.jsonl", feats);
    const auto back = load_features(dir / "f.jsonl");
    REQUIRE(back.size() == 3);
    CHECK(back[2].image_id == "img2");
    CHECK(back[2].sentiment == feats[2].sentiment);
    CHECK(back[0].of(Aspect::scene) == feats[0].scene);

    i2p::testing::write_file(dir / "noheader.jsonl", R"({"image_id":"a","object":[1],"scene":[1],"sentiment":[1]})"
                                                     "\n");
    CHECK_THROWS_AS(load_features(dir / "noheader.jsonl"), Error);
    i2p::testing::write_file(dir / "wrongd.jsonl", "{\"D\":2}\n"
                                                   R"({"image_id":"a","object":[1],"scene":[1],"sentiment":[1]})"
                                                   "\n");
    CHECK_THROWS(load_features(dir / "wrongd.jsonl"));
}

TEST_CASE("mean word encoder examples") {
    const Vocabulary vocab = build_vocabulary({Poem{"p", {"u w"}, PoemSource::unim}}, 1);
    Matrix table = Matrix::Zero(vocab.size(), 2);
    table.row(vocab.id("u")) << 1, 1;
    table.row(vocab.id("w")) << 3, 3;
    table.row(token::kUnk) << -1, 5;
    const MeanWordEncoder enc(vocab, table);
    CHECK(enc.encode("u") == vec({1, 1}));
    CHECK(encode_sentence("u w", enc) == vec({2, 2}));
    CHECK(enc.encode("zzz") == vec({-1, 5}));
    CHECK_THROWS_AS(enc.encode("   "), Error);
}

TEST_CASE("encode_poem averages line vectors") {
    const Vocabulary vocab = build_vocabulary({Poem{"p", {"a b"}, PoemSource::unim}}, 1);
    Matrix table = Matrix::Zero(vocab.size(), 2);
    table.row(vocab.id("a")) << 0, 2;
    table.row(vocab.id("b")) << 2, 0;
    const MeanWordEncoder enc(vocab, table);
    CHECK(encode_poem(Poem{"x", {"a"}, PoemSource::unim}, enc) == vec({0, 2}));
    CHECK(encode_poem(Poem{"x", {"a", "b"}, PoemSource::unim}, enc) == vec({1, 1}));
    CHECK(encode_poem(Poem{"x", {"a b", "a b", "a b"}, PoemSource::unim}, enc) ==
          encode_poem(Poem{"x", {"a b"}, PoemSource::unim}, enc));
    CHECK_THROWS_AS(encode_poem(Poem{"x", {}, PoemSource::unim}, enc), Error);
}

TEST_CASE("encoder properties: bag of words, convex hull, determinism") {
    Rng rng(17);
    std::vector<Poem> corpus;
    for (int i = 0; i < 30; ++i) {
        corpus.push_back(i2p::testing::random_poem(rng, 3, 6, "p" + std::to_string(i)));
    }
    const Vocabulary vocab = build_vocabulary(corpus, 1);
    const MeanWordEncoder enc(vocab, 8, 5);
    const MeanWordEncoder same(vocab, 8, 5);
    CHECK(enc.table() == same.table());

    for (const auto& p : corpus) {
        // Permuting the words of a line leaves the encoding unchanged.
        auto words = tokenize_line(p.lines[0]);
        std::shuffle(words.begin(), words.end(), rng);
        std::string shuffled;
        for (const auto& w : words) {
            shuffled += w + " ";
        }
        CHECK(i2p::testing::relative_error(enc.encode(p.lines[0]), enc.encode(shuffled)) < 1e-12);

        // The poem vector lies componentwise between its line vectors.
        const Vector t = encode_poem(p, enc);
        for (Eigen::Index d = 0; d < t.size(); ++d) {
            double lo = 1e300, hi = -1e300;
            for (const auto& l : p.lines) {
                lo = std::min(lo, enc.encode(l)[d]);
                hi = std::max(hi, enc.encode(l)[d]);
            }
            CHECK(t[d] >= lo - 1e-12);
            CHECK(t[d] <= hi + 1e-12);
        }
    }
}

TEST_CASE("encoder poem gradient matches finite differences and the table round trips") {
    Rng rng(23);
    std::vector<Poem> corpus;
    for (int i = 0; i < 5; ++i) {
        corpus.push_back(i2p::testing::random_poem(rng, 3, 4, "p" + std::to_string(i), 4));
    }
    const Vocabulary vocab = build_vocabulary(corpus, 1);
    MeanWordEncoder enc(vocab, 3, 2);
    const Vector upstream = i2p::testing::random_vector(3, rng);
    Matrix grad = Matrix::Zero(enc.table().rows(), enc.table().cols());
    enc.accumulate_poem_gradient(corpus[0], upstream, grad);
    const auto numeric = i2p::testing::numeric_gradient(
        {make_block("table", enc.table())}, [&] { return upstream.dot(encode_poem(corpus[0], enc)); });
    CHECK(i2p::testing::relative_error(std::vector<double>(grad.data(), grad.data() + grad.size()), numeric) < 1e-6);

    ScratchDir dir("enc");
    enc.save(dir / "enc.ckpt");
    const MeanWordEncoder back = MeanWordEncoder::load(dir / "enc.ckpt", vocab);
    CHECK(back.table() == enc.table());
    CHECK(back.seed() == enc.seed());
}
