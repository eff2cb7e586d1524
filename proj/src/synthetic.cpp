#include "i2p/synthetic.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <unordered_set>

namespace i2p {
namespace {

const std::vector<std::string> kObjects = {"tree", "sea",  "moon",  "river",    "stone", "bird",
                                           "flower", "cloud", "mountain", "rain", "leaf",  "star"};
const std::vector<std::string> kScenes = {"forest", "beach", "city", "garden", "field", "valley", "harbor", "meadow"};
const std::vector<std::string> kSentiments = {"calm",   "lonely", "joyful", "gloomy",
                                              "tender", "wild",   "quiet",  "bright"};

const std::vector<std::string> kVerbs = {"sleeps", "sings", "drifts", "waits", "burns", "falls", "dreams", "whispers"};
const std::vector<std::string> kNouns = {"light", "shadow", "wind", "night", "dawn", "heart", "silence", "song"};

const std::vector<std::string> kProse = {"today", "we",     "walked",  "to",       "the",      "office", "people",
                                         "said",  "that",   "report",  "was",      "finished", "after",  "meeting",
                                         "then",  "bus",    "arrived", "late",     "because",  "traffic", "weather",
                                         "is",    "expected", "change", "tomorrow", "and",      "a",      "new"};

std::string pad(int value, int width) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%0*d", width, value);
    return buf;
}

const std::string& pick(const std::vector<std::string>& words, Rng& rng) {
    return words[std::uniform_int_distribution<std::size_t>(0, words.size() - 1)(rng)];
}

int hamming(const std::array<int, 3>& a, const std::array<int, 3>& b) {
    return (a[0] != b[0]) + (a[1] != b[1]) + (a[2] != b[2]);
}

std::vector<std::array<int, 3>> draw_latents(int n, Rng& rng) {
    const int total = static_cast<int>(kObjects.size() * kScenes.size() * kSentiments.size());
    if (n > total) {
        throw Error("make_synthetic: n_images exceeds the " + std::to_string(total) + " distinct latents");
    }
    std::uniform_int_distribution<int> obj(0, static_cast<int>(kObjects.size()) - 1);
    std::uniform_int_distribution<int> scn(0, static_cast<int>(kScenes.size()) - 1);
    std::uniform_int_distribution<int> sen(0, static_cast<int>(kSentiments.size()) - 1);
    std::vector<std::array<int, 3>> out;
    int min_distance = 2;
    int failures = 0;
    while (static_cast<int>(out.size()) < n) {
        const std::array<int, 3> cand{obj(rng), scn(rng), sen(rng)};
        bool ok = true;
        for (const auto& prev : out) {
            if (hamming(prev, cand) < min_distance) {
                ok = false;
                break;
            }
        }
        if (ok) {
            out.push_back(cand);
            failures = 0;
        } else if (++failures > 5000) {
            min_distance = 1;
        }
    }
    return out;
}

} // namespace

Poem synthetic_poem(const std::array<int, 3>& latent, const LexiconSet& lexicons, Rng& rng, std::string id,
                    PoemSource source) {
    const std::string& obj = lexicons.of(Aspect::object).at(static_cast<std::size_t>(latent[0]));
    const std::string& scene = lexicons.of(Aspect::scene).at(static_cast<std::size_t>(latent[1]));
    const std::string& sent = lexicons.of(Aspect::sentiment).at(static_cast<std::size_t>(latent[2]));
    Poem p{std::move(id), {}, source};
    p.lines.push_back("the " + sent + " " + obj + " " + pick(kVerbs, rng));
    p.lines.push_back("in the " + scene + " of " + pick(kNouns, rng));
    p.lines.push_back(pick(kNouns, rng) + " " + pick(kVerbs, rng) + " with the " + obj);
    if (std::bernoulli_distribution(0.5)(rng)) {
        p.lines.push_back("and the " + sent + " " + pick(kNouns, rng) + " " + pick(kVerbs, rng));
    }
    p.lines.push_back(sent + " " + scene + " , " + pick(kNouns, rng) + " .");
    return p;
}

SyntheticData make_synthetic(const SyntheticConfig& config) {
    if (config.n_images < 1 || config.corpus_size < 0 || config.dim < 1 || config.m < 1) {
        throw Error("make_synthetic: sizes must be >= 1");
    }
    Rng rng(derive_seed(config.seed, stage::kSynthetic));
    SyntheticData data;
    data.lexicons.words = {kObjects, kScenes, kSentiments};
    data.latents = draw_latents(config.n_images, rng);

    std::array<Matrix, 3> prototypes;
    for (std::size_t a = 0; a < 3; ++a) {
        prototypes[a] = Matrix(config.dim, static_cast<Eigen::Index>(data.lexicons.words[a].size()));
        fill_gaussian({prototypes[a].data(), static_cast<std::size_t>(prototypes[a].size())}, 1.0, rng);
    }

    std::unordered_set<std::string> seen_text;
    auto unique_poem = [&](const std::array<int, 3>& latent, const std::string& id, PoemSource source) {
        for (;;) {
            Poem p = synthetic_poem(latent, data.lexicons, rng, id, source);
            if (seen_text.insert(normalized_text(p)).second) {
                return p;
            }
        }
    };

    std::normal_distribution<double> noise(0.0, config.noise);
    for (int i = 0; i < config.n_images; ++i) {
        const auto& lat = data.latents[static_cast<std::size_t>(i)];
        std::array<Vector, 3> v;
        for (std::size_t a = 0; a < 3; ++a) {
            v[a] = prototypes[a].col(lat[a]);
            for (Eigen::Index d = 0; d < v[a].size(); ++d) {
                v[a][d] += noise(rng);
            }
        }
        const std::string image_id = "img-" + pad(i, 4);
        const std::string poem_id = "mm-" + pad(i, 4);
        data.features.push_back({image_id, v[0], v[1], v[2]});
        data.poems.push_back(unique_poem(lat, poem_id, PoemSource::multim));
        data.pairs.push_back({image_id, poem_id, PairOrigin::human});
    }

    // Half of the poem-only corpus paraphrases image latents, so retrieval has
    // something relevant to find; the rest uses random latents.
    std::uniform_int_distribution<int> image_pick(0, config.n_images - 1);
    for (int j = 0; j < config.corpus_size; ++j) {
        std::array<int, 3> lat;
        if (j % 2 == 0) {
            lat = data.latents[static_cast<std::size_t>(image_pick(rng))];
        } else {
            lat = {std::uniform_int_distribution<int>(0, static_cast<int>(kObjects.size()) - 1)(rng),
                   std::uniform_int_distribution<int>(0, static_cast<int>(kScenes.size()) - 1)(rng),
                   std::uniform_int_distribution<int>(0, static_cast<int>(kSentiments.size()) - 1)(rng)};
        }
        data.poems.push_back(unique_poem(lat, "um-" + pad(j, 5), PoemSource::unim));
    }

    const int n_paragraphs = config.paragraphs >= 0 ? config.paragraphs : std::max(10, config.corpus_size / 2);
    std::uniform_int_distribution<int> para_lines(2, 3);
    std::uniform_int_distribution<int> para_words(12, 16);
    for (int j = 0; j < n_paragraphs; ++j) {
        Poem p{"para-" + pad(j, 5), {}, PoemSource::paragraph};
        const int lines = para_lines(rng);
        for (int l = 0; l < lines; ++l) {
            std::string line;
            const int words = para_words(rng);
            for (int w = 0; w < words; ++w) {
                line += (w ? " " : "") + pick(kProse, rng);
            }
            p.lines.push_back(line + " .");
        }
        data.paragraphs.push_back(std::move(p));
    }
    return data;
}

std::vector<std::filesystem::path> write_synthetic(const SyntheticData& data, const SyntheticConfig& config,
                                                   const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    save_features(dir / "features.jsonl", data.features);
    written.push_back(dir / "features.jsonl");
    save_poems(dir / "poems.jsonl", data.poems);
    written.push_back(dir / "poems.jsonl");
    save_pairs(dir / "pairs.jsonl", data.pairs);
    written.push_back(dir / "pairs.jsonl");
    save_poems(dir / "paragraphs.jsonl", data.paragraphs);
    written.push_back(dir / "paragraphs.jsonl");
    data.lexicons.save(dir / "lexicons");
    for (const char* name : {"object.txt", "scene.txt", "sentiment.txt"}) {
        written.push_back(dir / "lexicons" / name);
    }
    nlohmann::json manifest{{"n_images", config.n_images}, {"corpus_size", config.corpus_size},
                            {"D", config.dim},             {"M", config.m},
                            {"seed", config.seed},         {"noise", config.noise},
                            {"paragraphs", data.paragraphs.size()}};
    std::ofstream out(dir / "synthetic.json", std::ios::binary);
    out << manifest.dump(2) << '\n';
    if (!out) {
        throw Error("cannot write " + (dir / "synthetic.json").string());
    }
    written.push_back(dir / "synthetic.json");
    return written;
}

} // namespace i2p
