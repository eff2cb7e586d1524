#include "i2p/embedding.hpp"

#include "i2p/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace i2p {

VisualPoeticEmbedding::VisualPoeticEmbedding(int k, int n, int m)
    : image_weights(Matrix::Zero(k, n)),
      image_bias(Vector::Zero(k)),
      poem_weights(Matrix::Zero(k, m)),
      poem_bias(Vector::Zero(k)) {
    if (k <= 0 || n <= 0 || m <= 0) {
        throw Error("embedding dimensions must be positive");
    }
}

VisualPoeticEmbedding VisualPoeticEmbedding::random(int k, int n, int m, std::uint64_t seed) {
    VisualPoeticEmbedding e(k, n, m);
    e.seed = seed;
    Rng rng(seed);
    fill_uniform({e.image_weights.data(), static_cast<std::size_t>(e.image_weights.size())}, -0.08, 0.08, rng);
    fill_uniform({e.poem_weights.data(), static_cast<std::size_t>(e.poem_weights.size())}, -0.08, 0.08, rng);
    return e;
}

std::vector<ParamBlock> VisualPoeticEmbedding::blocks() {
    return {make_block("W_v", image_weights), make_block("b_v", image_bias), make_block("W_t", poem_weights),
            make_block("b_t", poem_bias)};
}

void VisualPoeticEmbedding::save(const std::filesystem::path& path) const {
    auto copy = *this;
    write_checkpoint(path, {{"schema", "vpe-v1"}, {"K", k()}, {"N", n()}, {"M", m()}, {"seed", seed}}, copy.blocks());
}

VisualPoeticEmbedding VisualPoeticEmbedding::load(const std::filesystem::path& path) {
    const auto h = read_checkpoint_header(path, "vpe-v1");
    VisualPoeticEmbedding e(h.at("K").get<int>(), h.at("N").get<int>(), h.at("M").get<int>());
    e.seed = h.at("seed").get<std::uint64_t>();
    auto blocks = e.blocks();
    read_checkpoint_blocks(path, blocks);
    return e;
}

Vector embed_image(const Vector& features, const VisualPoeticEmbedding& model) {
    if (features.size() != model.n()) {
        throw Error("embed_image: expected N=" + std::to_string(model.n()) + ", got " + std::to_string(features.size()));
    }
    return model.image_weights * features + model.image_bias;
}

Vector embed_poem(const Vector& poem_vector, const VisualPoeticEmbedding& model) {
    if (poem_vector.size() != model.m()) {
        throw Error("embed_poem: expected M=" + std::to_string(model.m()) + ", got " +
                    std::to_string(poem_vector.size()));
    }
    return model.poem_weights * poem_vector + model.poem_bias;
}

double ranking_loss(const std::vector<RankingTerm>& terms, double margin) {
    double loss = 0.0;
    for (const auto& t : terms) {
        if (t.negative_poems.empty() || t.negative_images.empty()) {
            throw Error("ranking_loss: every pair needs at least one negative on each side");
        }
        const double pos = t.image.dot(t.poem);
        for (const auto& mk : t.negative_poems) {
            loss += std::max(0.0, margin - pos + t.image.dot(mk));
        }
        for (const auto& xk : t.negative_images) {
            loss += std::max(0.0, margin - pos + t.poem.dot(xk));
        }
    }
    return loss;
}

double ranking_objective(const VisualPoeticEmbedding& model, const std::vector<Vector>& images,
                         const std::vector<Vector>& poems, const std::vector<RankingExample>& batch, double margin,
                         VisualPoeticEmbedding* grad, std::vector<Vector>* poem_grads) {
    // Embed every referenced vector once.
    std::unordered_map<int, Vector> x_of;
    std::unordered_map<int, Vector> m_of;
    auto x = [&](int i) -> const Vector& {
        auto it = x_of.find(i);
        if (it == x_of.end()) {
            it = x_of.emplace(i, embed_image(images.at(static_cast<std::size_t>(i)), model)).first;
        }
        return it->second;
    };
    auto m = [&](int j) -> const Vector& {
        auto it = m_of.find(j);
        if (it == m_of.end()) {
            it = m_of.emplace(j, embed_poem(poems.at(static_cast<std::size_t>(j)), model)).first;
        }
        return it->second;
    };
    std::unordered_map<int, Vector> dx;
    std::unordered_map<int, Vector> dm;
    auto add = [](std::unordered_map<int, Vector>& acc, int key, const Vector& v) {
        auto it = acc.find(key);
        if (it == acc.end()) {
            acc.emplace(key, v);
        } else {
            it->second += v;
        }
    };

    double loss = 0.0;
    for (const auto& ex : batch) {
        if (ex.negative_poems.empty() || ex.negative_images.empty()) {
            throw Error("ranking_objective: every pair needs at least one negative on each side");
        }
        const Vector& xi = x(ex.image);
        const Vector& mi = m(ex.poem);
        const double pos = xi.dot(mi);
        for (int k : ex.negative_poems) {
            const Vector& mk = m(k);
            const double h = margin - pos + xi.dot(mk);
            if (h > 0.0) {
                loss += h;
                if (grad != nullptr) {
                    add(dx, ex.image, mk - mi);
                    add(dm, ex.poem, -xi);
                    add(dm, k, xi);
                }
            }
        }
        for (int k : ex.negative_images) {
            const Vector& xk = x(k);
            const double h = margin - pos + mi.dot(xk);
            if (h > 0.0) {
                loss += h;
                if (grad != nullptr) {
                    add(dm, ex.poem, xk - xi);
                    add(dx, ex.image, -mi);
                    add(dx, k, mi);
                }
            }
        }
    }
    if (grad != nullptr) {
        *grad = VisualPoeticEmbedding(model.k(), model.n(), model.m());
        for (const auto& [i, g] : dx) {
            grad->image_weights.noalias() += g * images[static_cast<std::size_t>(i)].transpose();
            grad->image_bias += g;
        }
        for (const auto& [j, g] : dm) {
            grad->poem_weights.noalias() += g * poems[static_cast<std::size_t>(j)].transpose();
            grad->poem_bias += g;
            if (poem_grads != nullptr) {
                (*poem_grads)[static_cast<std::size_t>(j)] += model.poem_weights.transpose() * g;
            }
        }
    }
    return loss;
}

namespace {

/// Uniform draws from `candidates`; without replacement when enough exist.
std::vector<int> draw(const std::vector<int>& candidates, int count, Rng& rng) {
    std::vector<int> out;
    if (candidates.empty()) {
        return out;
    }
    if (static_cast<int>(candidates.size()) >= count) {
        std::vector<int> pool = candidates;
        for (int i = 0; i < count; ++i) {
            std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), pool.size() - 1);
            std::swap(pool[static_cast<std::size_t>(i)], pool[pick(rng)]);
            out.push_back(pool[static_cast<std::size_t>(i)]);
        }
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
        for (int i = 0; i < count; ++i) {
            out.push_back(candidates[pick(rng)]);
        }
    }
    return out;
}

} // namespace

EmbeddingTrainResult train_embedding(const std::vector<PairedExample>& pairs, const std::vector<Poem>& corpus,
                                     const std::vector<ImageFeatures>& images, const RankingConfig& config,
                                     MeanWordEncoder& encoder) {
    if (config.margin < 0.0 || config.negatives < 1 || config.batch_size < 1) {
        throw Error("train_embedding: need margin >= 0, negatives >= 1, batch_size >= 1");
    }
    if (pairs.size() < 2) {
        throw Error("train_embedding: need at least 2 pairs");
    }
    // Index images and poems; paired poems missing from the corpus are an error.
    std::unordered_map<std::string, int> image_idx;
    std::vector<Vector> image_vecs;
    for (const auto& f : images) {
        image_idx.emplace(f.image_id, static_cast<int>(image_vecs.size()));
        image_vecs.push_back(assemble(f));
    }
    std::unordered_map<std::string, int> poem_idx;
    for (std::size_t j = 0; j < corpus.size(); ++j) {
        poem_idx.emplace(corpus[j].id, static_cast<int>(j));
    }
    if (poem_idx.size() < 2) {
        throw Error("train_embedding: need at least 2 distinct poems");
    }
    std::vector<RankingExample> examples;
    std::unordered_map<int, std::set<int>> poems_of_image;
    std::unordered_map<int, std::set<int>> images_of_poem;
    std::set<int> paired_images;
    for (const auto& p : pairs) {
        auto ii = image_idx.find(p.image_id);
        auto pj = poem_idx.find(p.poem_id);
        if (ii == image_idx.end()) {
            throw Error("train_embedding: no features for image '" + p.image_id + "'");
        }
        if (pj == poem_idx.end()) {
            throw Error("train_embedding: poem '" + p.poem_id + "' not in corpus");
        }
        examples.push_back({ii->second, pj->second, {}, {}});
        poems_of_image[ii->second].insert(pj->second);
        images_of_poem[pj->second].insert(ii->second);
        paired_images.insert(ii->second);
    }
    std::vector<int> all_poems(corpus.size());
    std::iota(all_poems.begin(), all_poems.end(), 0);
    const std::vector<int> image_pool(paired_images.begin(), paired_images.end());

    // Candidate lists are fixed; only the draws change per epoch.
    std::vector<std::vector<int>> poem_candidates(examples.size());
    std::vector<std::vector<int>> image_candidates(examples.size());
    for (std::size_t e = 0; e < examples.size(); ++e) {
        const auto& own_poems = poems_of_image[examples[e].image];
        const auto& own_images = images_of_poem[examples[e].poem];
        for (int j : all_poems) {
            if (!own_poems.count(j)) {
                poem_candidates[e].push_back(j);
            }
        }
        for (int i : image_pool) {
            if (!own_images.count(i)) {
                image_candidates[e].push_back(i);
            }
        }
        if (poem_candidates[e].empty() || image_candidates[e].empty()) {
            throw Error("train_embedding: no contrastive candidates for pair (" + pairs[e].image_id + ", " +
                        pairs[e].poem_id + ")");
        }
    }

    EmbeddingTrainResult result{VisualPoeticEmbedding::random(config.k, static_cast<int>(image_vecs.front().size()),
                                                              encoder.dim(), config.seed),
                                {}};
    Optimizer opt(config.optimizer, config.lr, config.clip_norm);
    Optimizer enc_opt(config.optimizer, config.encoder_lr, config.clip_norm);
    Rng rng(config.seed);
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t e = 0; e < examples.size(); ++e) {
            examples[e].negative_poems = draw(poem_candidates[e], config.negatives, rng);
            examples[e].negative_images = draw(image_candidates[e], config.negatives, rng);
        }
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<RankingExample> batch;
            std::set<int> used_poems;
            for (std::size_t b = start; b < end; ++b) {
                const auto& ex = examples[order[b]];
                batch.push_back(ex);
                used_poems.insert(ex.poem);
                used_poems.insert(ex.negative_poems.begin(), ex.negative_poems.end());
            }
            // Poem vectors depend on the (possibly trainable) encoder, so compute them fresh.
            std::vector<Vector> poem_vecs(corpus.size());
            for (int j : used_poems) {
                poem_vecs[static_cast<std::size_t>(j)] = encode_poem(corpus[static_cast<std::size_t>(j)], encoder);
            }
            const bool joint = config.train_encoder;
            std::vector<Vector> poem_grads;
            if (joint) {
                poem_grads.assign(corpus.size(), Vector::Zero(encoder.dim()));
            }
            VisualPoeticEmbedding grad;
            const double loss = ranking_objective(result.model, image_vecs, poem_vecs, batch, config.margin, &grad,
                                                  joint ? &poem_grads : nullptr);
            epoch_loss += loss;
            const double inv = 1.0 / static_cast<double>(batch.size());
            auto gblocks = grad.blocks();
            for (auto& b : gblocks) {
                for (double& v : b.values) {
                    v *= inv;
                }
            }
            auto params = result.model.blocks();
            opt.step(params, gblocks);
            if (joint) {
                Matrix table_grad = Matrix::Zero(encoder.table().rows(), encoder.table().cols());
                for (int j : used_poems) {
                    encoder.accumulate_poem_gradient(corpus[static_cast<std::size_t>(j)],
                                                     poem_grads[static_cast<std::size_t>(j)] * inv, table_grad);
                }
                std::vector<ParamBlock> enc_params{make_block("table", encoder.table())};
                enc_opt.step(enc_params, {make_block("table", table_grad)});
                if (!all_finite(enc_params)) {
                    throw Error("train_embedding: non-finite encoder parameter in epoch " + std::to_string(epoch));
                }
            }
            if (!all_finite(params)) {
                throw Error("train_embedding: non-finite embedding parameter in epoch " + std::to_string(epoch));
            }
        }
        result.epoch_loss.push_back(epoch_loss / static_cast<double>(examples.size()));
    }
    return result;
}

double relevance(const Vector& x, const Vector& m) {
    if (x.size() != m.size()) {
        throw Error("relevance: dimension mismatch");
    }
    const double nx = x.norm();
    const double nm = m.norm();
    if (nx == 0.0 || nm == 0.0) {
        throw Error("relevance: zero vector");
    }
    if (!std::isfinite(nx) || !std::isfinite(nm)) {
        throw Error("relevance: non-finite vector");
    }
    return std::clamp(x.dot(m) / (nx * nm), -1.0, 1.0);
}

std::vector<Retrieved> retrieve_topk(const Vector& query, const std::vector<Vector>& poem_embeddings,
                                     const std::vector<std::string>& poem_ids, int k) {
    if (poem_embeddings.size() != poem_ids.size()) {
        throw Error("retrieve_topk: embeddings and ids differ in count");
    }
    if (k < 0 || poem_embeddings.size() < static_cast<std::size_t>(k)) {
        throw Error("retrieve_topk: corpus of " + std::to_string(poem_embeddings.size()) + " poems is smaller than k=" +
                    std::to_string(k));
    }
    std::vector<Retrieved> all;
    all.reserve(poem_embeddings.size());
    for (std::size_t j = 0; j < poem_embeddings.size(); ++j) {
        all.push_back({j, poem_ids[j], relevance(query, poem_embeddings[j])});
    }
    auto better = [](const Retrieved& a, const Retrieved& b) {
        return a.score != b.score ? a.score > b.score : a.poem_id < b.poem_id;
    };
    std::partial_sort(all.begin(), all.begin() + k, all.end(), better);
    all.resize(static_cast<std::size_t>(k));
    return all;
}

std::vector<Retrieved> retrieve_topk(const ImageFeatures& image, const std::vector<Poem>& corpus,
                                     const VisualPoeticEmbedding& model, const SentenceEncoder& encoder, int k) {
    std::vector<Vector> embs;
    std::vector<std::string> ids;
    for (const auto& p : corpus) {
        embs.push_back(embed_poem(encode_poem(p, encoder), model));
        ids.push_back(p.id);
    }
    return retrieve_topk(embed_image(assemble(image), model), embs, ids, k);
}

std::vector<PairedExample> expand_dataset(const std::vector<PairedExample>& human_pairs, const PoemIndex& poems,
                                          const std::vector<Poem>& corpus, const std::vector<ImageFeatures>& images,
                                          const VisualPoeticEmbedding& model, const SentenceEncoder& encoder, int k) {
    const ImageIndex image_index(images);
    std::vector<Vector> embs;
    std::vector<std::string> ids;
    for (const auto& p : corpus) {
        embs.push_back(embed_poem(encode_poem(p, encoder), model));
        ids.push_back(p.id);
    }
    std::vector<std::string> image_order;
    std::unordered_map<std::string, std::vector<PairedExample>> by_image;
    for (const auto& p : human_pairs) {
        auto [it, inserted] = by_image.try_emplace(p.image_id);
        if (inserted) {
            image_order.push_back(p.image_id);
        }
        it->second.push_back(p);
    }
    std::vector<PairedExample> out;
    for (const auto& image_id : image_order) {
        std::unordered_set<std::string> taken_ids;
        std::unordered_set<std::string> taken_texts;
        for (const auto& p : by_image[image_id]) {
            if (!taken_ids.insert(p.poem_id).second) {
                continue;
            }
            taken_texts.insert(normalized_text(poems.at(p.poem_id)));
            out.push_back(p);
        }
        const Vector query = embed_image(assemble(image_index.at(image_id)), model);
        const auto ranked = retrieve_topk(query, embs, ids, static_cast<int>(corpus.size()));
        int added = 0;
        for (const auto& r : ranked) {
            if (added == k) {
                break;
            }
            if (taken_ids.count(r.poem_id)) {
                continue;
            }
            const auto text = normalized_text(corpus[r.index]);
            if (taken_texts.count(text)) {
                continue;
            }
            taken_ids.insert(r.poem_id);
            taken_texts.insert(text);
            out.push_back({image_id, r.poem_id, PairOrigin::retrieved});
            ++added;
        }
    }
    return out;
}

ImageIndex::ImageIndex(const std::vector<ImageFeatures>& images) {
    for (const auto& f : images) {
        by_id_.emplace(f.image_id, &f);
    }
}

const ImageFeatures& ImageIndex::at(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) {
        throw Error("no features for image '" + id + "'");
    }
    return *it->second;
}

} // namespace i2p
