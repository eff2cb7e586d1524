#include <doctest.h>

#include "i2p/embedding.hpp"
#include "i2p/synthetic.hpp"
#include "support/oracles.hpp"
#include "support/support.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

using namespace i2p;
using i2p::testing::cosine_oracle;
using i2p::testing::hinge_oracle;
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

struct Fixture {
    SyntheticData syn;
    Vocabulary vocab;
    std::vector<Poem> mm_poems;

    explicit Fixture(int n_images, std::uint64_t seed = 4) {
        SyntheticConfig sc;
        sc.n_images = n_images;
        sc.corpus_size = n_images;
        sc.seed = seed;
        syn = make_synthetic(sc);
        vocab = build_vocabulary(syn.poems, 1);
        mm_poems.assign(syn.poems.begin(), syn.poems.begin() + n_images);
    }
};

} // namespace

TEST_CASE("embed_image and embed_poem are affine maps") {
    VisualPoeticEmbedding model(3, 4, 2);
    model.image_weights.topLeftCorner(3, 3).setIdentity();
    CHECK(embed_image(vec({1, 0, 0, 0}), model) == model.image_weights.col(0));
    model.image_bias = vec({0.5, -1, 2});
    CHECK(embed_image(Vector::Zero(4), model) == model.image_bias);
    model.poem_bias = vec({1, 2, 3});
    CHECK(embed_poem(Vector::Zero(2), model) == model.poem_bias);
    CHECK_THROWS_AS(embed_image(Vector::Zero(3), model), Error);
    CHECK_THROWS_AS(embed_poem(Vector::Zero(4), model), Error);

    Rng rng(11);
    const auto random = VisualPoeticEmbedding::random(5, 6, 4, 3);
    for (int trial = 0; trial < 20; ++trial) {
        const Vector v = i2p::testing::random_vector(6, rng);
        const Vector t = i2p::testing::random_vector(4, rng);
        const Vector x = embed_image(v, random);
        const Vector m = embed_poem(t, random);
        for (int r = 0; r < 5; ++r) {
            double sx = random.image_bias[r], sm = random.poem_bias[r];
            for (int c = 0; c < 6; ++c) {
                sx += random.image_weights(r, c) * v[c];
            }
            for (int c = 0; c < 4; ++c) {
                sm += random.poem_weights(r, c) * t[c];
            }
            CHECK(std::abs(x[r] - sx) < 1e-12);
            CHECK(std::abs(m[r] - sm) < 1e-12);
        }
        // Affinity: f(a u + (1 - a) w) = a f(u) + (1 - a) f(w).
        const Vector w = i2p::testing::random_vector(6, rng);
        const double a = 0.3;
        CHECK(i2p::testing::relative_error(embed_image(a * v + (1 - a) * w, random),
                                           a * x + (1 - a) * embed_image(w, random)) < 1e-12);
    }
}

TEST_CASE("ranking_loss examples") {
    // x.m = 1, x.m_k = 0.5, m.x_k = 0.5: both margins satisfied.
    RankingTerm t{vec({1, 0}), vec({1, 0}), {vec({0.5, 0})}, {vec({0.5, 7})}};
    CHECK(ranking_loss({t}, 0.2) == 0.0);
    // Negatives identical to the positives: each hinge sits at the margin.
    RankingTerm same{vec({1, 2}), vec({3, 1}), {vec({3, 1})}, {vec({1, 2})}};
    CHECK(ranking_loss({same}, 0.2) == doctest::Approx(0.4).epsilon(1e-12));
    RankingTerm none{vec({1}), vec({1}), {}, {vec({1})}};
    CHECK_THROWS_AS(ranking_loss({none}, 0.2), Error);
}

TEST_CASE("ranking_loss matches a two-loop oracle and is nonnegative") {
    Rng rng(5);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<RankingTerm> terms;
        for (int a = 0; a < 3; ++a) {
            RankingTerm t{i2p::testing::random_vector(4, rng), i2p::testing::random_vector(4, rng), {}, {}};
            for (int k = 0; k < 3; ++k) {
                t.negative_poems.push_back(i2p::testing::random_vector(4, rng));
                t.negative_images.push_back(i2p::testing::random_vector(4, rng));
            }
            terms.push_back(t);
        }
        const double loss = ranking_loss(terms, 0.2);
        CHECK(loss >= 0.0);
        CHECK(std::abs(loss - hinge_oracle(terms, 0.2)) < 1e-10);
    }
}

TEST_CASE("ranking_objective gradient matches finite differences for all four blocks and the poem vectors") {
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        auto model = VisualPoeticEmbedding::random(4, 5, 3, 100 + static_cast<std::uint64_t>(trial));
        i2p::testing::randomize_blocks(model.blocks(), rng, 0.5);
        std::vector<Vector> images, poems;
        for (int i = 0; i < 6; ++i) {
            images.push_back(i2p::testing::random_vector(5, rng));
            poems.push_back(i2p::testing::random_vector(3, rng));
        }
        std::vector<RankingExample> batch{{0, 0, {1, 2, 3}, {4, 5}}, {1, 1, {0, 5}, {2, 3, 0}}};

        // A large margin keeps every hinge active, away from the kinks.
        const double alpha = 10.0;
        VisualPoeticEmbedding grad;
        std::vector<Vector> poem_grads(poems.size(), Vector::Zero(3));
        const double loss = ranking_objective(model, images, poems, batch, alpha, &grad, &poem_grads);

        std::vector<RankingTerm> terms;
        for (const auto& ex : batch) {
            RankingTerm t{embed_image(images[ex.image], model), embed_poem(poems[ex.poem], model), {}, {}};
            for (int k : ex.negative_poems) {
                t.negative_poems.push_back(embed_poem(poems[k], model));
            }
            for (int k : ex.negative_images) {
                t.negative_images.push_back(embed_image(images[k], model));
            }
            terms.push_back(t);
        }
        CHECK(std::abs(loss - hinge_oracle(terms, alpha)) < 1e-10);

        const auto objective = [&] { return ranking_objective(model, images, poems, batch, alpha, nullptr); };
        const auto numeric = i2p::testing::numeric_gradient(model.blocks(), objective);
        CHECK(i2p::testing::relative_error(i2p::testing::flatten(grad.blocks()), numeric) < 1e-4);

        std::vector<ParamBlock> poem_blocks;
        std::vector<ParamBlock> poem_grad_blocks;
        for (std::size_t j = 0; j < poems.size(); ++j) {
            poem_blocks.push_back(make_block("t" + std::to_string(j), poems[j]));
            poem_grad_blocks.push_back(make_block("g" + std::to_string(j), poem_grads[j]));
        }
        const auto numeric_t = i2p::testing::numeric_gradient(poem_blocks, objective);
        CHECK(i2p::testing::relative_error(i2p::testing::flatten(poem_grad_blocks), numeric_t) < 1e-4);
    }
}

TEST_CASE("relevance examples and scale invariance") {
    CHECK(relevance(vec({2, 1}), vec({2, 1})) == doctest::Approx(1.0));
    CHECK(relevance(vec({1, 0}), vec({0, 3})) == 0.0);
    CHECK(relevance(vec({1, 0}), vec({1, 1})) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(relevance(vec({1, 0}), vec({-2, 0})) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(relevance(vec({0, 0}), vec({1, 1})), Error);

    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const Vector x = i2p::testing::random_vector(5, rng);
        const Vector m = i2p::testing::random_vector(5, rng);
        const double r = relevance(x, m);
        CHECK(r >= -1.0);
        CHECK(r <= 1.0);
        CHECK(std::abs(r - cosine_oracle(x, m)) < 1e-12);
        CHECK(std::abs(relevance(3.7 * x, m) - r) < 1e-12);
    }
}

TEST_CASE("retrieve_topk equals an exhaustive sort and is invariant to query rescaling") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Vector> embs;
        std::vector<std::string> ids;
        for (int j = 0; j < 10; ++j) {
            embs.push_back(i2p::testing::random_vector(4, rng));
            ids.push_back("p" + std::to_string(j));
        }
        const Vector q = i2p::testing::random_vector(4, rng);
        std::vector<std::pair<double, std::string>> oracle;
        for (int j = 0; j < 10; ++j) {
            oracle.emplace_back(-cosine_oracle(q, embs[j]), ids[j]);
        }
        std::sort(oracle.begin(), oracle.end());
        const auto top = retrieve_topk(q, embs, ids, 3);
        REQUIRE(top.size() == 3);
        for (int r = 0; r < 3; ++r) {
            CHECK(top[r].poem_id == oracle[r].second);
        }
        const auto scaled = retrieve_topk(5.0 * q, embs, ids, 3);
        for (int r = 0; r < 3; ++r) {
            CHECK(scaled[r].poem_id == top[r].poem_id);
        }
    }

    // Exact match ranks first; ties go to the smaller id.
    std::vector<Vector> embs{vec({0, 1}), vec({1, 0}), vec({2, 0})};
    const auto top = retrieve_topk(vec({3, 0}), embs, {"c", "b", "a"}, 3);
    CHECK(top[0].poem_id == "a");
    CHECK(top[1].poem_id == "b");
    CHECK(top[2].poem_id == "c");
    CHECK_THROWS_AS(retrieve_topk(vec({1, 0}), embs, {"c", "b", "a"}, 4), Error);
}

TEST_CASE("train_embedding: loss decreases, lr 0 is a no-op, determinism") {
    Fixture fx(20);
    RankingConfig config;
    config.k = 8;
    config.negatives = 8;
    config.epochs = 15;
    config.seed = 3;

    MeanWordEncoder enc(fx.vocab, 8, 1);
    const auto result = train_embedding(fx.syn.pairs, fx.mm_poems, fx.syn.features, config, enc);
    REQUIRE(result.epoch_loss.size() == 15);
    CHECK(result.epoch_loss.back() < result.epoch_loss.front());

    MeanWordEncoder enc2(fx.vocab, 8, 1);
    const auto again = train_embedding(fx.syn.pairs, fx.mm_poems, fx.syn.features, config, enc2);
    CHECK(again.model.image_weights == result.model.image_weights);
    CHECK(enc2.table() == enc.table());

    RankingConfig frozen = config;
    frozen.lr = 0.0;
    frozen.encoder_lr = 0.0;
    MeanWordEncoder enc3(fx.vocab, 8, 1);
    const auto still = train_embedding(fx.syn.pairs, fx.mm_poems, fx.syn.features, frozen, enc3);
    const auto init = VisualPoeticEmbedding::random(8, 48, 8, config.seed);
    CHECK(still.model.image_weights == init.image_weights);
    CHECK(still.model.poem_weights == init.poem_weights);
    CHECK(enc3.table() == MeanWordEncoder(fx.vocab, 8, 1).table());

    CHECK_THROWS_AS(train_embedding({fx.syn.pairs[0]}, fx.mm_poems, fx.syn.features, config, enc), Error);
}

TEST_CASE("train_embedding with zero margin drives the loss to zero on separable planted data") {
    Fixture fx(10);
    RankingConfig config;
    config.margin = 0.0;
    config.k = 8;
    config.negatives = 9;
    config.epochs = 60;
    MeanWordEncoder enc(fx.vocab, 8, 1);
    const auto result = train_embedding(fx.syn.pairs, fx.mm_poems, fx.syn.features, config, enc);
    CHECK(result.epoch_loss.back() == 0.0);
}

TEST_CASE("expand_dataset: per-image poem sets are distinct and skip the human poem") {
    Fixture fx(10);
    MeanWordEncoder enc(fx.vocab, 8, 1);
    const auto model = VisualPoeticEmbedding::random(8, 48, 8, 5);
    const PoemIndex index(fx.syn.poems);

    // Corpus = exactly the human-paired poems: every image gains 3 other poems.
    auto expanded = expand_dataset(fx.syn.pairs, index, fx.mm_poems, fx.syn.features, model, enc, 3);
    std::map<std::string, std::vector<PairedExample>> by_image;
    for (const auto& p : expanded) {
        by_image[p.image_id].push_back(p);
    }
    REQUIRE(by_image.size() == 10);
    for (const auto& [image, pairs] : by_image) {
        CHECK(pairs.size() == 4);
        CHECK(pairs[0].origin == PairOrigin::human);
        std::set<std::string> ids;
        for (const auto& p : pairs) {
            ids.insert(p.poem_id);
        }
        CHECK(ids.size() == 4);
        for (std::size_t j = 1; j < pairs.size(); ++j) {
            CHECK(pairs[j].origin == PairOrigin::retrieved);
        }
    }

    // A 20-poem corpus: between 1 and 4 distinct poems per image.
    std::vector<Poem> corpus(fx.syn.poems.begin(), fx.syn.poems.begin() + 20);
    expanded = expand_dataset(fx.syn.pairs, index, corpus, fx.syn.features, model, enc, 3);
    by_image.clear();
    for (const auto& p : expanded) {
        by_image[p.image_id].push_back(p);
    }
    for (const auto& [image, pairs] : by_image) {
        CHECK(pairs.size() >= 1);
        CHECK(pairs.size() <= 4);
        std::set<std::string> texts;
        for (const auto& p : pairs) {
            texts.insert(normalized_text(index.at(p.poem_id)));
        }
        CHECK(texts.size() == pairs.size());
    }
}

TEST_CASE("expand_dataset skips poems whose text duplicates the human poem") {
    Fixture fx(4);
    MeanWordEncoder enc(fx.vocab, 8, 1);
    const auto model = VisualPoeticEmbedding::random(8, 48, 8, 5);
    std::vector<Poem> corpus = fx.mm_poems;
    Poem copy = fx.mm_poems[0];
    copy.id = "copy-of-0";
    corpus.push_back(copy);
    std::vector<Poem> all = fx.syn.poems;
    all.push_back(copy);
    const PoemIndex index(all);
    const auto expanded = expand_dataset(fx.syn.pairs, index, corpus, fx.syn.features, model, enc, 4);
    for (const auto& p : expanded) {
        if (p.image_id == fx.syn.pairs[0].image_id) {
            CHECK(p.poem_id != "copy-of-0");
        }
    }
}

TEST_CASE("embedding checkpoint round trip") {
    ScratchDir dir("emb");
    const auto model = VisualPoeticEmbedding::random(3, 4, 5, 9);
    model.save(dir / "e.ckpt");
    const auto back = VisualPoeticEmbedding::load(dir / "e.ckpt");
    CHECK(back.image_weights == model.image_weights);
    CHECK(back.poem_weights == model.poem_weights);
    CHECK(back.k() == 3);
    CHECK(back.n() == 4);
    CHECK(back.m() == 5);
}
