#include <doctest.h>

#include "i2p/evalsuite.hpp"
#include "i2p/synthetic.hpp"
#include "support/support.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <sstream>

using namespace i2p;

namespace {

Poem poem(std::vector<std::string> lines, std::string id = "p") {
    return Poem{std::move(id), std::move(lines), PoemSource::generated};
}

// Ten poems: "a b" eight times, then "c d" and "e f". With K = 1 the only
// frequent bigram is "a b".
std::vector<Poem> toy_corpus() {
    std::vector<Poem> out;
    for (int i = 0; i < 8; ++i) {
        out.push_back(poem({"a b"}, "t" + std::to_string(i)));
    }
    out.push_back(poem({"c d"}, "t8"));
    out.push_back(poem({"e f"}, "t9"));
    return out;
}

} // namespace

TEST_CASE("bleu_n examples") {
    const Poem ref = poem({"the cat"});
    CHECK(bleu_n(poem({"the the the"}), ref, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(bleu_n(poem({"cat"}), ref, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
    for (int n = 1; n <= 3; ++n) {
        CHECK(bleu_n(poem({"a quiet moon", "over water"}), poem({"a quiet moon", "over water"}), n) ==
              doctest::Approx(1.0));
    }
    bool empty = false;
    CHECK(bleu_n(poem({}), ref, 1, &empty) == 0.0);
    CHECK(empty);
    CHECK(bleu_n(poem({"dog"}), ref, 1, &empty) == 0.0);
    CHECK_FALSE(empty);
    CHECK_THROWS_AS(bleu_n(ref, ref, 4), Error);
}

TEST_CASE("bleu_n equals a brute-force counter on random pairs and stays in [0, 1]") {
    Rng rng(3);
    for (int trial = 0; trial < 40; ++trial) {
        const Poem c = i2p::testing::random_poem(rng, 1 + trial % 3, 6, "c", 2);
        const Poem r = i2p::testing::random_poem(rng, 1 + trial % 4, 6, "r", 2);
        for (int n = 1; n <= 3; ++n) {
            const double got = bleu_n(c, r, n);
            CHECK(got == i2p::testing::brute_force_bleu(i2p::testing::split_words(c), i2p::testing::split_words(r), n));
            CHECK(got >= 0.0);
            CHECK(got <= 1.0);
        }
    }
}

TEST_CASE("novelty examples against a 10-poem toy corpus") {
    const NgramStats stats(toy_corpus(), 1);
    CHECK(stats.frequent_count(2) == 1);
    CHECK(stats.is_frequent({"a", "b"}));
    CHECK(stats.in_training({"c", "d"}));
    CHECK_FALSE(stats.is_frequent({"c", "d"}));
    CHECK(stats.count({"a", "b"}) == 8);

    // Bigrams c-d, d-x, x-e, e-f: c-d and e-f are in training but infrequent.
    CHECK(novelty_n(poem({"c d x e f"}), stats, 2) == 0.5);
    CHECK(novelty_n(poem({"c d x e f"}), stats, 2, true) == 1.0);
    CHECK(novelty_n(poem({"a b a b"}), NgramStats(toy_corpus(), 3), 2) == 0.0);
    CHECK(novelty_n(poem({"moon"}), stats, 2) == 0.0);
    CHECK(novelty_n(poem({"a b"}), stats, 3) == 0.0);
    CHECK_THROWS_AS(novelty_n(poem({"a b"}), stats, 1), Error);

    // Line breaks do not matter.
    CHECK(novelty_n(poem({"c", "d x e", "f"}), stats, 2) == 0.5);
}

TEST_CASE("frequent set is bounded by K and drawn from training n-grams") {
    Rng rng(4);
    std::vector<Poem> corpus;
    for (int i = 0; i < 30; ++i) {
        corpus.push_back(i2p::testing::random_poem(rng, 2, 5, "c" + std::to_string(i), 3));
    }
    const NgramStats stats(corpus, 7);
    CHECK(stats.frequent_count(2) <= 7);
    CHECK(stats.frequent_count(3) <= 7);
    for (int i = 0; i < 50; ++i) {
        const Poem p = i2p::testing::random_poem(rng, 1, 5, "q", 3);
        const auto words = i2p::testing::split_words(p);
        for (std::size_t k = 0; k + 2 <= words.size(); ++k) {
            const std::vector<std::string> gram{words[k], words[k + 1]};
            if (stats.is_frequent(gram)) {
                CHECK(stats.in_training(gram));
            }
        }
        const double v = novelty_n(p, stats, 2);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("normalize_column examples and the MinZero guard") {
    CHECK(normalize_column({2, 4}) == std::vector<double>{0, 1});
    CHECK(normalize_column({5, 5}) == std::vector<double>{0, 0});
    CHECK_THROWS_AS(normalize_column({0, 1}), MinZeroError);
    CHECK(normalize_column({0, 1}, Normalization::range) == std::vector<double>{0, 1});
    CHECK(normalize_column({3, 3}, Normalization::range) == std::vector<double>{0, 0});
    CHECK_THROWS_AS(normalize_column({1}), Error);

    Rng rng(5);
    std::uniform_real_distribution<double> u(0.1, 10.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> col{u(rng), u(rng), u(rng)};
        std::vector<double> scaled = col;
        for (double& v : scaled) {
            v *= 7.5;
        }
        const auto a = normalize_column(col);
        const auto b = normalize_column(scaled);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(std::abs(a[i] - b[i]) < 1e-12);
        }
    }
}

TEST_CASE("overall averages the BLEU and novelty groups before the final mean") {
    const std::map<std::string, std::vector<double>> cols{
        {"bleu1", {2, 4}}, {"bleu2", {1, 1}}, {"bleu3", {1, 2}}, {"novelty2", {3, 6}}, {"novelty3", {1, 1}},
        {"relevance", {4, 5}}};
    // BLEU group: mean(0, 0, 0) and mean(1, 0, 1); novelty: mean(0, 0) and mean(1, 0); relevance: 0 and 0.25.
    const auto scores = overall(cols);
    CHECK(scores[0] == doctest::Approx(0.0));
    CHECK(scores[1] == doctest::Approx((2.0 / 3.0 + 0.5 + 0.25) / 3.0).epsilon(1e-12));
    CHECK_THROWS_AS(overall({{"bleu1", {0, 1}}}), MinZeroError);
    CHECK_THROWS_AS(overall({{"bleu1", {1, 2}}, {"relevance", {1, 2, 3}}}), Error);
    CHECK_THROWS_AS(overall({{"meteor", {1, 2}}}), Error);
}

TEST_CASE("evaluate_run: identity run, aggregates and missing references") {
    SyntheticConfig sc;
    sc.n_images = 6;
    sc.corpus_size = 6;
    const auto syn = make_synthetic(sc);
    const Vocabulary vocab = build_vocabulary(syn.poems, 1);
    const MeanWordEncoder enc(vocab, 8, 1);
    const auto model = VisualPoeticEmbedding::random(8, 48, 8, 2);
    const NgramStats stats(syn.poems, 50);

    std::unordered_map<std::string, Poem> truth;
    std::vector<Poem> generated;
    for (std::size_t i = 0; i < syn.features.size(); ++i) {
        Poem p = syn.poems[i];
        truth[syn.features[i].image_id] = p;
        p.id = syn.features[i].image_id;
        generated.push_back(p);
    }
    const auto report = evaluate_run(generated, truth, syn.features, model, enc, stats);
    CHECK(report.rows.size() == 6);
    CHECK(*report.aggregate.bleu1 == doctest::Approx(1.0));
    double rel = 0.0, nov = 0.0;
    for (const auto& row : report.rows) {
        CHECK(row.relevance ==
              relevance_metric(ImageIndex(syn.features).at(row.image_id), truth.at(row.image_id), model, enc));
        rel += row.relevance;
        nov += row.novelty2;
    }
    CHECK(std::abs(report.aggregate.relevance - rel / 6) < 1e-12);
    CHECK(std::abs(report.aggregate.novelty2 - nov / 6) < 1e-12);

    // Rows without a reference get null BLEU and leave the BLEU mean alone.
    truth.erase(syn.features[0].image_id);
    generated[1].lines = {"nothing alike here"};
    const auto partial = evaluate_run(generated, truth, syn.features, model, enc, stats);
    CHECK_FALSE(partial.rows[0].bleu1.has_value());
    CHECK(partial.aggregate.rows_with_reference == 5);
    double b = 0.0;
    for (std::size_t i = 1; i < 6; ++i) {
        b += *partial.rows[i].bleu1;
    }
    CHECK(std::abs(*partial.aggregate.bleu1 - b / 5) < 1e-12);

    std::ostringstream out;
    auto named = partial;
    named.system = "sys";
    write_report_jsonl(out, named);
    std::istringstream lines(out.str());
    std::string line;
    int count = 0;
    nlohmann::json last;
    while (std::getline(lines, line)) {
        last = nlohmann::json::parse(line);
        CHECK(last.at("system") == "sys");
        ++count;
    }
    CHECK(count == 7);
    CHECK(last.at("aggregate") == true);
    CHECK(last.at("overall").is_null());
    CHECK(nlohmann::json::parse(out.str().substr(0, out.str().find('\n'))).at("bleu1").is_null());

    std::vector<EvalReport> systems{report, partial};
    systems[1].aggregate.bleu1 = 0.5;
    systems[1].aggregate.bleu2 = 0.5;
    systems[1].aggregate.bleu3 = 0.5;
    attach_overall(systems, Normalization::range);
    CHECK(systems[0].aggregate.overall.has_value());
    std::ostringstream table;
    write_report_table(table, systems);
    CHECK(table.str().find("BLEU-1") != std::string::npos);
}

TEST_CASE("relevance_metric composes the encoders with cosine") {
    SyntheticConfig sc;
    sc.n_images = 4;
    sc.corpus_size = 4;
    const auto syn = make_synthetic(sc);
    const Vocabulary vocab = build_vocabulary(syn.poems, 1);
    const MeanWordEncoder enc(vocab, 8, 1);
    const auto model = VisualPoeticEmbedding::random(8, 48, 8, 2);
    for (std::size_t i = 0; i < 4; ++i) {
        const Vector x = embed_image(assemble(syn.features[i]), model);
        const Vector m = embed_poem(encode_poem(syn.poems[i], enc), model);
        CHECK(std::abs(relevance_metric(syn.features[i], syn.poems[i], model, enc) -
                       x.dot(m) / (x.norm() * m.norm())) < 1e-12);
    }
}
