#include "i2p/features.hpp"

#include "i2p/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace i2p {

const Vector& ImageFeatures::of(Aspect a) const {
    switch (a) {
    case Aspect::object: return object;
    case Aspect::scene: return scene;
    case Aspect::sentiment: return sentiment;
    }
    return object;
}

Vector assemble(const Vector& object, const Vector& scene, const Vector& sentiment) {
    if (object.size() != scene.size() || object.size() != sentiment.size()) {
        throw Error("assemble: aspect feature lengths differ (" + std::to_string(object.size()) + ", " +
                    std::to_string(scene.size()) + ", " + std::to_string(sentiment.size()) + ")");
    }
    const Eigen::Index d = object.size();
    Vector v(3 * d);
    v << object, scene, sentiment;
    return v;
}

Vector assemble(const ImageFeatures& f) {
    return assemble(f.object, f.scene, f.sentiment);
}

std::vector<ImageFeatures> load_features(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    std::vector<ImageFeatures> out;
    std::string line;
    std::size_t lineno = 0;
    long dim = -1;
    auto read_vec = [&](const nlohmann::json& j, const char* key) {
        const auto vals = j.at(key).get<std::vector<double>>();
        if (static_cast<long>(vals.size()) != dim) {
            throw ParseError(path.string(), lineno,
                             std::string(key) + " has length " + std::to_string(vals.size()) + ", header says " +
                                 std::to_string(dim));
        }
        if (!std::all_of(vals.begin(), vals.end(), [](double v) { return std::isfinite(v); })) {
            throw ParseError(path.string(), lineno, std::string(key) + " has non-finite entries");
        }
        return Vector(Eigen::Map<const Vector>(vals.data(), static_cast<Eigen::Index>(vals.size())));
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            if (dim < 0) {
                dim = j.at("D").get<long>();
                if (dim <= 0) {
                    throw ParseError(path.string(), lineno, "D must be positive");
                }
                continue;
            }
            ImageFeatures f;
            f.image_id = j.at("image_id").get<std::string>();
            f.object = read_vec(j, "object");
            f.scene = read_vec(j, "scene");
            f.sentiment = read_vec(j, "sentiment");
            out.push_back(std::move(f));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string(), lineno, e.what());
        }
    }
    if (dim < 0) {
        throw Error(path.string() + ": missing {\"D\": ...} header record");
    }
    return out;
}

void save_features(const std::filesystem::path& path, const std::vector<ImageFeatures>& features) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    const long dim = features.empty() ? 1 : static_cast<long>(features.front().dim());
    out << nlohmann::json{{"D", dim}}.dump() << '\n';
    auto as_vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    for (const auto& f : features) {
        if (f.dim() != dim || f.scene.size() != dim || f.sentiment.size() != dim) {
            throw Error("save_features: inconsistent D for image " + f.image_id);
        }
        out << nlohmann::json{{"image_id", f.image_id},
                              {"object", as_vec(f.object)},
                              {"scene", as_vec(f.scene)},
                              {"sentiment", as_vec(f.sentiment)}}
                   .dump()
            << '\n';
    }
}

// ---------------------------------------------------------------------------
// Multi-label sigmoid cross-entropy

namespace {

void check_targets(const Vector& logits, std::span<const int> targets) {
    if (static_cast<std::size_t>(logits.size()) != targets.size()) {
        throw Error("sigmoid_ce_loss: " + std::to_string(logits.size()) + " logits vs " +
                    std::to_string(targets.size()) + " targets");
    }
    if (targets.empty()) {
        throw Error("sigmoid_ce_loss: no labels");
    }
}

} // namespace

double sigmoid_ce_loss(const Vector& logits, std::span<const int> targets) {
    check_targets(logits, targets);
    double sum = 0.0;
    for (std::size_t n = 0; n < targets.size(); ++n) {
        const double p = std::clamp(sigmoid(logits[static_cast<Eigen::Index>(n)]), kProbClip, 1.0 - kProbClip);
        sum += targets[n] ? std::log(p) : std::log(1.0 - p);
    }
    return -sum / static_cast<double>(targets.size());
}

Vector sigmoid_ce_gradient(const Vector& logits, std::span<const int> targets) {
    check_targets(logits, targets);
    const double inv = 1.0 / static_cast<double>(targets.size());
    Vector g(logits.size());
    for (Eigen::Index n = 0; n < logits.size(); ++n) {
        const double p = sigmoid(logits[n]);
        const bool clipped = p < kProbClip || p > 1.0 - kProbClip;
        g[n] = clipped ? 0.0 : (p - targets[static_cast<std::size_t>(n)]) * inv;
    }
    return g;
}

MultiLabelHead::MultiLabelHead(Aspect a, int labels, int dim)
    : aspect(a), weights(Matrix::Zero(labels, dim)), bias(Vector::Zero(labels)) {}

Vector MultiLabelHead::logits(const Vector& features) const {
    if (features.size() != weights.cols()) {
        throw Error("multi-label head expects D=" + std::to_string(weights.cols()) + ", got " +
                    std::to_string(features.size()));
    }
    return weights * features + bias;
}

std::vector<ParamBlock> MultiLabelHead::blocks() {
    return {make_block("weights", weights), make_block("bias", bias)};
}

double multilabel_loss_and_gradient(const MultiLabelHead& head, const std::vector<Vector>& inputs,
                                    const std::vector<LabelVector>& labels, MultiLabelHead* grad) {
    if (inputs.empty() || inputs.size() != labels.size()) {
        throw Error("multi-label training needs matching, nonempty inputs and labels");
    }
    if (grad != nullptr) {
        *grad = MultiLabelHead(head.aspect, static_cast<int>(head.weights.rows()), static_cast<int>(head.weights.cols()));
    }
    const double inv = 1.0 / static_cast<double>(inputs.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (static_cast<Eigen::Index>(labels[i].size()) != head.weights.rows()) {
            throw Error("label vector length does not match the head's label count");
        }
        const Vector z = head.logits(inputs[i]);
        loss += sigmoid_ce_loss(z, labels[i]) * inv;
        if (grad != nullptr) {
            const Vector dz = sigmoid_ce_gradient(z, labels[i]) * inv;
            grad->weights.noalias() += dz * inputs[i].transpose();
            grad->bias += dz;
        }
    }
    return loss;
}

HeadTrainResult train_multilabel_head(Aspect aspect, const std::vector<Vector>& inputs,
                                      const std::vector<LabelVector>& labels, const HeadTrainConfig& config) {
    if (inputs.empty()) {
        throw Error("train_multilabel_head: empty dataset");
    }
    if (labels.empty() || labels.front().empty()) {
        throw Error("train_multilabel_head: empty label space");
    }
    HeadTrainResult result{MultiLabelHead(aspect, static_cast<int>(labels.front().size()),
                                          static_cast<int>(inputs.front().size())),
                           {}};
    Rng rng(config.seed);
    fill_uniform({result.head.weights.data(), static_cast<std::size_t>(result.head.weights.size())}, -0.08, 0.08, rng);
    MultiLabelHead grad;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        result.epoch_loss.push_back(multilabel_loss_and_gradient(result.head, inputs, labels, &grad));
        auto params = result.head.blocks();
        axpy(params, grad.blocks(), -config.lr);
    }
    result.epoch_loss.push_back(multilabel_loss_and_gradient(result.head, inputs, labels, nullptr));
    return result;
}

std::array<HeadTrainResult, 3> train_multilabel_heads(const std::vector<ImageFeatures>& features,
                                                      const std::vector<std::array<LabelVector, 3>>& labels,
                                                      const HeadTrainConfig& config) {
    if (features.size() != labels.size()) {
        throw Error("train_multilabel_heads: features and labels differ in count");
    }
    std::array<HeadTrainResult, 3> out;
    for (Aspect a : kAspects) {
        const int k = static_cast<int>(a);
        std::vector<Vector> inputs;
        std::vector<LabelVector> targets;
        for (std::size_t i = 0; i < features.size(); ++i) {
            inputs.push_back(features[i].of(a));
            targets.push_back(labels[i][static_cast<std::size_t>(k)]);
        }
        HeadTrainConfig c = config;
        c.seed = derive_seed(config.seed, static_cast<std::uint64_t>(k));
        out[static_cast<std::size_t>(k)] = train_multilabel_head(a, inputs, targets, c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sentence encoding

MeanWordEncoder::MeanWordEncoder(Vocabulary vocab, int dim, std::uint64_t seed)
    : vocab_(std::move(vocab)), table_(vocab_.size(), dim), seed_(seed) {
    if (dim <= 0) {
        throw Error("encoder dimension must be positive");
    }
    Rng rng(seed);
    fill_gaussian({table_.data(), static_cast<std::size_t>(table_.size())}, 1.0, rng);
}

MeanWordEncoder::MeanWordEncoder(Vocabulary vocab, Matrix table, std::uint64_t seed)
    : vocab_(std::move(vocab)), table_(std::move(table)), seed_(seed) {
    if (table_.rows() != vocab_.size() || table_.cols() <= 0) {
        throw Error("encoder table shape does not match the vocabulary");
    }
}

std::vector<TokenId> MeanWordEncoder::token_ids(std::string_view line) const {
    std::vector<TokenId> ids;
    for (const auto& t : tokenize_line(line)) {
        ids.push_back(vocab_.id(t));
    }
    return ids;
}

Vector MeanWordEncoder::encode(std::string_view line) const {
    const auto ids = token_ids(line);
    if (ids.empty()) {
        throw Error("cannot encode a line with no tokens");
    }
    Vector v = Vector::Zero(table_.cols());
    for (TokenId id : ids) {
        v += table_.row(id).transpose();
    }
    return v / static_cast<double>(ids.size());
}

void MeanWordEncoder::accumulate_poem_gradient(const Poem& poem, const Vector& upstream, Matrix& grad) const {
    if (poem.lines.empty()) {
        throw Error("cannot encode an empty poem");
    }
    const double line_weight = 1.0 / static_cast<double>(poem.lines.size());
    for (const auto& line : poem.lines) {
        const auto ids = token_ids(line);
        if (ids.empty()) {
            throw Error("cannot encode a line with no tokens");
        }
        const double w = line_weight / static_cast<double>(ids.size());
        for (TokenId id : ids) {
            grad.row(id) += w * upstream.transpose();
        }
    }
}

void MeanWordEncoder::save(const std::filesystem::path& path) const {
    Matrix copy = table_;
    write_checkpoint(path, {{"schema", "enc-v1"}, {"V", vocab_.size()}, {"M", dim()}, {"seed", seed_}},
                     {make_block("table", copy)});
}

MeanWordEncoder MeanWordEncoder::load(const std::filesystem::path& path, Vocabulary vocab) {
    const auto header = read_checkpoint_header(path, "enc-v1");
    const int v = header.at("V").get<int>();
    if (v != vocab.size()) {
        throw Error("encoder checkpoint vocabulary size " + std::to_string(v) + " does not match " +
                    std::to_string(vocab.size()));
    }
    Matrix table(v, header.at("M").get<int>());
    std::vector<ParamBlock> blocks{make_block("table", table)};
    read_checkpoint_blocks(path, blocks);
    return MeanWordEncoder(std::move(vocab), std::move(table), header.at("seed").get<std::uint64_t>());
}

Vector encode_sentence(std::string_view line, const SentenceEncoder& encoder) {
    return encoder.encode(line);
}

Vector encode_poem(const Poem& poem, const SentenceEncoder& encoder) {
    if (poem.lines.empty()) {
        throw Error("cannot encode empty poem '" + poem.id + "'");
    }
    Vector t = Vector::Zero(encoder.dim());
    for (const auto& line : poem.lines) {
        t += encoder.encode(line);
    }
    return t / static_cast<double>(poem.lines.size());
}

} // namespace i2p
