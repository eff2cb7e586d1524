#include "i2p/adversary.hpp"

#include "i2p/checkpoint.hpp"

#include <cmath>
#include <limits>
#include <set>

namespace i2p {
namespace {

Vector sigmoid_vec(const Vector& v) {
    return v.unaryExpr([](double a) { return sigmoid(a); });
}

struct LstmStep {
    TokenId input;
    Vector h_prev, c_prev;
    Vector i, f, o, g, c, tanh_c, h;
};

struct LstmTrace {
    std::vector<LstmStep> steps;
    Vector output() const { return steps.back().h; }
};

LstmTrace lstm_forward(std::span<const TokenId> sequence, const LstmEncoder& enc) {
    const auto inputs = encoder_inputs(sequence);
    LstmTrace tr;
    Vector h = Vector::Zero(enc.hidden());
    Vector c = Vector::Zero(enc.hidden());
    for (TokenId y : inputs) {
        if (y < 0 || y >= enc.vocab()) {
            throw Error("token id " + std::to_string(y) + " outside discriminator vocabulary");
        }
        LstmStep s;
        s.input = y;
        s.h_prev = h;
        s.c_prev = c;
        const Vector e = enc.embedding.row(y).transpose();
        s.i = sigmoid_vec(enc.w_input * e + enc.u_input * h + enc.b_input);
        s.f = sigmoid_vec(enc.w_forget * e + enc.u_forget * h + enc.b_forget);
        s.o = sigmoid_vec(enc.w_output * e + enc.u_output * h + enc.b_output);
        s.g = (enc.w_cell * e + enc.u_cell * h + enc.b_cell).array().tanh();
        s.c = s.f.cwiseProduct(c) + s.i.cwiseProduct(s.g);
        s.tanh_c = s.c.array().tanh();
        s.h = s.o.cwiseProduct(s.tanh_c);
        h = s.h;
        c = s.c;
        tr.steps.push_back(std::move(s));
    }
    return tr;
}

void lstm_backward(const LstmTrace& tr, const Vector& d_output, const LstmEncoder& enc, LstmEncoder& g) {
    const Eigen::Index hd = enc.hidden();
    const Vector one = Vector::Ones(hd);
    Vector dh = d_output;
    Vector dc = Vector::Zero(hd);
    for (std::size_t t = tr.steps.size(); t-- > 0;) {
        const LstmStep& s = tr.steps[t];
        const Vector e = enc.embedding.row(s.input).transpose();
        const Vector d_o = dh.cwiseProduct(s.tanh_c);
        dc += dh.cwiseProduct(s.o).cwiseProduct(one - s.tanh_c.cwiseProduct(s.tanh_c));
        const Vector d_f = dc.cwiseProduct(s.c_prev);
        const Vector d_i = dc.cwiseProduct(s.g);
        const Vector d_g = dc.cwiseProduct(s.i);
        const Vector dc_prev = dc.cwiseProduct(s.f);

        const Vector pi = d_i.cwiseProduct(s.i.cwiseProduct(one - s.i));
        const Vector pf = d_f.cwiseProduct(s.f.cwiseProduct(one - s.f));
        const Vector po = d_o.cwiseProduct(s.o.cwiseProduct(one - s.o));
        const Vector pg = d_g.cwiseProduct(one - s.g.cwiseProduct(s.g));

        g.w_input.noalias() += pi * e.transpose();
        g.w_forget.noalias() += pf * e.transpose();
        g.w_output.noalias() += po * e.transpose();
        g.w_cell.noalias() += pg * e.transpose();
        g.u_input.noalias() += pi * s.h_prev.transpose();
        g.u_forget.noalias() += pf * s.h_prev.transpose();
        g.u_output.noalias() += po * s.h_prev.transpose();
        g.u_cell.noalias() += pg * s.h_prev.transpose();
        g.b_input += pi;
        g.b_forget += pf;
        g.b_output += po;
        g.b_cell += pg;

        const Vector de = enc.w_input.transpose() * pi + enc.w_forget.transpose() * pf +
                          enc.w_output.transpose() * po + enc.w_cell.transpose() * pg;
        g.embedding.row(s.input) += de.transpose();
        dh = enc.u_input.transpose() * pi + enc.u_forget.transpose() * pf + enc.u_output.transpose() * po +
             enc.u_cell.transpose() * pg;
        dc = dc_prev;
    }
}

void randomize(std::vector<ParamBlock> blocks, Rng& rng) {
    for (auto& b : blocks) {
        fill_uniform(b.values, -0.08, 0.08, rng);
    }
}

// Glorot-uniform. The multiplicative fusion in D_m has a saddle at small
// weights, so the projection and class layers start at full scale.
void glorot(Matrix& m, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    fill_uniform({m.data(), static_cast<std::size_t>(m.size())}, -limit, limit, rng);
}

std::uint64_t seed_of(const nlohmann::json& h) {
    return h.at("seed").get<std::uint64_t>();
}

} // namespace

// ---------------------------------------------------------------------------
// LSTM encoder

LstmEncoder::LstmEncoder(int vocab, int embed, int hidden) {
    if (vocab <= 0 || embed <= 0 || hidden <= 0) {
        throw Error("LSTM encoder dimensions must be positive");
    }
    embedding = Matrix::Zero(vocab, embed);
    w_input = w_forget = w_output = w_cell = Matrix::Zero(hidden, embed);
    u_input = u_forget = u_output = u_cell = Matrix::Zero(hidden, hidden);
    b_input = b_forget = b_output = b_cell = Vector::Zero(hidden);
}

void LstmEncoder::append_blocks(std::vector<ParamBlock>& out, const std::string& prefix) {
    out.push_back(make_block(prefix + "embedding", embedding));
    out.push_back(make_block(prefix + "w_input", w_input));
    out.push_back(make_block(prefix + "w_forget", w_forget));
    out.push_back(make_block(prefix + "w_output", w_output));
    out.push_back(make_block(prefix + "w_cell", w_cell));
    out.push_back(make_block(prefix + "u_input", u_input));
    out.push_back(make_block(prefix + "u_forget", u_forget));
    out.push_back(make_block(prefix + "u_output", u_output));
    out.push_back(make_block(prefix + "u_cell", u_cell));
    out.push_back(make_block(prefix + "b_input", b_input));
    out.push_back(make_block(prefix + "b_forget", b_forget));
    out.push_back(make_block(prefix + "b_output", b_output));
    out.push_back(make_block(prefix + "b_cell", b_cell));
}

std::vector<TokenId> encoder_inputs(std::span<const TokenId> sequence) {
    if (sequence.empty()) {
        throw Error("discriminator input has no tokens");
    }
    std::vector<TokenId> out;
    for (TokenId t : sequence) {
        if (t == token::kBos || t == token::kPad) {
            continue;
        }
        out.push_back(t);
        if (t == token::kEos) {
            break;
        }
    }
    if (out.empty()) {
        // Nothing but BOS/PAD: a sampled sequence can do this; read it as the empty poem.
        out.push_back(token::kEos);
    }
    return out;
}

Vector lstm_encode(std::span<const TokenId> sequence, const LstmEncoder& encoder) {
    return lstm_forward(sequence, encoder).output();
}

// ---------------------------------------------------------------------------
// Multi-modal discriminator

MultiModalDiscriminator::MultiModalDiscriminator(const DiscShape& s)
    : encoder(s.vocab, s.embed, s.hidden),
      image_weights(Matrix::Zero(s.fusion, s.image)),
      image_bias(Vector::Zero(s.fusion)),
      poem_weights(Matrix::Zero(s.fusion, s.hidden)),
      poem_bias(Vector::Zero(s.fusion)),
      class_weights(Matrix::Zero(kMmClasses, s.fusion)),
      class_bias(Vector::Zero(kMmClasses)) {
    if (s.fusion <= 0 || s.image <= 0) {
        throw Error("multi-modal discriminator dimensions must be positive");
    }
}

MultiModalDiscriminator MultiModalDiscriminator::random(const DiscShape& s, std::uint64_t seed) {
    MultiModalDiscriminator d(s);
    d.seed = seed;
    Rng rng(seed);
    std::vector<ParamBlock> blocks;
    d.encoder.append_blocks(blocks, "");
    randomize(std::move(blocks), rng);
    glorot(d.image_weights, rng);
    glorot(d.poem_weights, rng);
    glorot(d.class_weights, rng);
    return d;
}

DiscShape MultiModalDiscriminator::shape() const {
    return {encoder.vocab(), encoder.embed(), encoder.hidden(), static_cast<int>(image_weights.rows()),
            static_cast<int>(image_weights.cols())};
}

MultiModalDiscriminator MultiModalDiscriminator::zeros_like() const {
    MultiModalDiscriminator d(shape());
    d.seed = seed;
    return d;
}

std::vector<ParamBlock> MultiModalDiscriminator::blocks() {
    std::vector<ParamBlock> out;
    encoder.append_blocks(out, "lstm.");
    out.push_back(make_block("W_x", image_weights));
    out.push_back(make_block("b_x", image_bias));
    out.push_back(make_block("W_c", poem_weights));
    out.push_back(make_block("b_c", poem_bias));
    out.push_back(make_block("W_m", class_weights));
    out.push_back(make_block("b_m", class_bias));
    return out;
}

void MultiModalDiscriminator::save(const std::filesystem::path& path) const {
    auto copy = *this;
    const auto s = shape();
    write_checkpoint(path,
                     {{"schema", "dm-v1"},
                      {"V", s.vocab},
                      {"E", s.embed},
                      {"H", s.hidden},
                      {"F", s.fusion},
                      {"K", s.image},
                      {"seed", seed}},
                     copy.blocks());
}

MultiModalDiscriminator MultiModalDiscriminator::load(const std::filesystem::path& path) {
    const auto h = read_checkpoint_header(path, "dm-v1");
    MultiModalDiscriminator d(DiscShape{h.at("V").get<int>(), h.at("E").get<int>(), h.at("H").get<int>(),
                                        h.at("F").get<int>(), h.at("K").get<int>()});
    d.seed = seed_of(h);
    auto blocks = d.blocks();
    read_checkpoint_blocks(path, blocks);
    return d;
}

Vector dm_forward(const Vector& image, std::span<const TokenId> poem, const MultiModalDiscriminator& d) {
    if (image.size() != d.image_weights.cols()) {
        throw Error("dm_forward: image embedding has wrong size");
    }
    const Vector c = lstm_encode(poem, d.encoder);
    const Vector a = (d.image_weights * image + d.image_bias).array().tanh();
    const Vector b = (d.poem_weights * c + d.poem_bias).array().tanh();
    return softmax(d.class_weights * a.cwiseProduct(b) + d.class_bias);
}

double dm_loss_and_gradient(const Vector& image, std::span<const TokenId> poem, MmClass label,
                            const MultiModalDiscriminator& d, MultiModalDiscriminator* grad, double weight,
                            int* predicted) {
    if (image.size() != d.image_weights.cols()) {
        throw Error("dm_forward: image embedding has wrong size");
    }
    const auto tr = lstm_forward(poem, d.encoder);
    const Vector c = tr.output();
    const Vector a = (d.image_weights * image + d.image_bias).array().tanh();
    const Vector b = (d.poem_weights * c + d.poem_bias).array().tanh();
    const Vector f = a.cwiseProduct(b);
    const Vector logp = log_softmax(d.class_weights * f + d.class_bias);
    const int y = static_cast<int>(label);
    if (predicted != nullptr) {
        *predicted = argmax(logp);
    }
    if (grad != nullptr) {
        Vector dl = logp.array().exp();
        dl[y] -= 1.0;
        dl *= weight;
        grad->class_weights.noalias() += dl * f.transpose();
        grad->class_bias += dl;
        const Vector df = d.class_weights.transpose() * dl;
        const Vector da = df.cwiseProduct(b).cwiseProduct(Vector::Ones(a.size()) - a.cwiseProduct(a));
        const Vector db = df.cwiseProduct(a).cwiseProduct(Vector::Ones(b.size()) - b.cwiseProduct(b));
        grad->image_weights.noalias() += da * image.transpose();
        grad->image_bias += da;
        grad->poem_weights.noalias() += db * c.transpose();
        grad->poem_bias += db;
        lstm_backward(tr, d.poem_weights.transpose() * db, d.encoder, grad->encoder);
    }
    return -logp[y];
}

// ---------------------------------------------------------------------------
// Poem-style discriminator

PoemStyleDiscriminator::PoemStyleDiscriminator(const DiscShape& s)
    : encoder(s.vocab, s.embed, s.hidden),
      class_weights(Matrix::Zero(kStyleClasses, s.hidden)),
      class_bias(Vector::Zero(kStyleClasses)) {}

PoemStyleDiscriminator PoemStyleDiscriminator::random(const DiscShape& s, std::uint64_t seed) {
    PoemStyleDiscriminator d(s);
    d.seed = seed;
    Rng rng(seed);
    std::vector<ParamBlock> blocks;
    d.encoder.append_blocks(blocks, "");
    randomize(std::move(blocks), rng);
    glorot(d.class_weights, rng);
    return d;
}

DiscShape PoemStyleDiscriminator::shape() const {
    DiscShape s;
    s.vocab = encoder.vocab();
    s.embed = encoder.embed();
    s.hidden = encoder.hidden();
    return s;
}

PoemStyleDiscriminator PoemStyleDiscriminator::zeros_like() const {
    PoemStyleDiscriminator d(shape());
    d.seed = seed;
    return d;
}

std::vector<ParamBlock> PoemStyleDiscriminator::blocks() {
    std::vector<ParamBlock> out;
    encoder.append_blocks(out, "lstm.");
    out.push_back(make_block("W_p", class_weights));
    out.push_back(make_block("b_p", class_bias));
    return out;
}

void PoemStyleDiscriminator::save(const std::filesystem::path& path) const {
    auto copy = *this;
    const auto s = shape();
    write_checkpoint(path, {{"schema", "dp-v1"}, {"V", s.vocab}, {"E", s.embed}, {"H", s.hidden}, {"seed", seed}},
                     copy.blocks());
}

PoemStyleDiscriminator PoemStyleDiscriminator::load(const std::filesystem::path& path) {
    const auto h = read_checkpoint_header(path, "dp-v1");
    DiscShape s;
    s.vocab = h.at("V").get<int>();
    s.embed = h.at("E").get<int>();
    s.hidden = h.at("H").get<int>();
    PoemStyleDiscriminator d(s);
    d.seed = seed_of(h);
    auto blocks = d.blocks();
    read_checkpoint_blocks(path, blocks);
    return d;
}

Vector dp_forward(std::span<const TokenId> poem, const PoemStyleDiscriminator& d) {
    return softmax(d.class_weights * lstm_encode(poem, d.encoder) + d.class_bias);
}

double dp_loss_and_gradient(std::span<const TokenId> poem, StyleClass label, const PoemStyleDiscriminator& d,
                            PoemStyleDiscriminator* grad, double weight, int* predicted) {
    const auto tr = lstm_forward(poem, d.encoder);
    const Vector c = tr.output();
    const Vector logp = log_softmax(d.class_weights * c + d.class_bias);
    const int y = static_cast<int>(label);
    if (predicted != nullptr) {
        *predicted = argmax(logp);
    }
    if (grad != nullptr) {
        Vector dl = logp.array().exp();
        dl[y] -= 1.0;
        dl *= weight;
        grad->class_weights.noalias() += dl * c.transpose();
        grad->class_bias += dl;
        lstm_backward(tr, d.class_weights.transpose() * dl, d.encoder, grad->encoder);
    }
    return -logp[y];
}

// ---------------------------------------------------------------------------
// Reward

double combine_reward(double cm_paired, double cp_poetic, const RewardConfig& config) {
    if (!config.use_dm && !config.use_dp) {
        throw Error("no discriminator enabled: there is no reward signal (use pretraining instead)");
    }
    if (!(config.lambda >= 0.0 && config.lambda <= 1.0)) {
        throw Error("lambda must lie in [0, 1]");
    }
    if (!config.use_dm) {
        return cp_poetic;
    }
    if (!config.use_dp) {
        return cm_paired;
    }
    return config.lambda * cm_paired + (1.0 - config.lambda) * cp_poetic;
}

RewardParts reward_parts(const Vector& image, std::span<const TokenId> poem, const MultiModalDiscriminator* dm,
                         const PoemStyleDiscriminator* dp, const RewardConfig& config) {
    if (!config.use_dm && !config.use_dp) {
        throw Error("no discriminator enabled: there is no reward signal (use pretraining instead)");
    }
    RewardParts out;
    out.cm_paired = std::numeric_limits<double>::quiet_NaN();
    out.cp_poetic = std::numeric_limits<double>::quiet_NaN();
    if (config.use_dm) {
        if (dm == nullptr) {
            throw Error("reward: multi-modal discriminator enabled but missing");
        }
        out.cm_paired = dm_forward(image, poem, *dm)[static_cast<int>(MmClass::paired)];
    }
    if (config.use_dp) {
        if (dp == nullptr) {
            throw Error("reward: poem-style discriminator enabled but missing");
        }
        out.cp_poetic = dp_forward(poem, *dp)[static_cast<int>(StyleClass::poetic)];
    }
    out.reward = combine_reward(out.cm_paired, out.cp_poetic, config);
    return out;
}

double reward(const Vector& image, std::span<const TokenId> poem, const MultiModalDiscriminator* dm,
              const PoemStyleDiscriminator* dp, const RewardConfig& config) {
    return reward_parts(image, poem, dm, dp, config).reward;
}

// ---------------------------------------------------------------------------
// Training

std::pair<double, double> dm_train_step(const std::vector<DmExample>& batch, MultiModalDiscriminator& d,
                                        Optimizer& opt) {
    if (batch.empty()) {
        return {0.0, 0.0};
    }
    MultiModalDiscriminator grad = d.zeros_like();
    const double w = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    double correct = 0.0;
    for (const auto& ex : batch) {
        int predicted = -1;
        loss += dm_loss_and_gradient(ex.image, ex.poem, ex.label, d, &grad, w, &predicted) * w;
        correct += predicted == static_cast<int>(ex.label) ? 1.0 : 0.0;
    }
    auto params = d.blocks();
    opt.step(params, grad.blocks());
    return {loss, correct * w};
}

std::pair<double, double> dp_train_step(const std::vector<DpExample>& batch, PoemStyleDiscriminator& d,
                                        Optimizer& opt) {
    if (batch.empty()) {
        return {0.0, 0.0};
    }
    PoemStyleDiscriminator grad = d.zeros_like();
    const double w = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    double correct = 0.0;
    for (const auto& ex : batch) {
        int predicted = -1;
        loss += dp_loss_and_gradient(ex.poem, ex.label, d, &grad, w, &predicted) * w;
        correct += predicted == static_cast<int>(ex.label) ? 1.0 : 0.0;
    }
    auto params = d.blocks();
    opt.step(params, grad.blocks());
    return {loss, correct * w};
}

namespace {

template <class Example, class Model, class StepFn>
DiscTrainStats train_loop(const std::vector<std::vector<Example>>& batches, Model& d, const DiscTrainConfig& config,
                          int classes, const char* name, StepFn step_fn) {
    DiscTrainStats stats;
    std::set<int> present;
    std::size_t total = 0;
    for (const auto& b : batches) {
        for (const auto& ex : b) {
            present.insert(static_cast<int>(ex.label));
        }
        total += b.size();
    }
    if (static_cast<int>(present.size()) < classes) {
        stats.warnings.push_back(std::string(name) + ": only " + std::to_string(present.size()) + " of " +
                                 std::to_string(classes) + " classes present in the epoch");
    }
    Optimizer opt(config.optimizer, config.lr, config.clip_norm);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double loss = 0.0;
        double acc = 0.0;
        for (const auto& b : batches) {
            const auto [l, a] = step_fn(b, d, opt);
            loss += l * static_cast<double>(b.size());
            acc += a * static_cast<double>(b.size());
        }
        const double n = total == 0 ? 1.0 : static_cast<double>(total);
        stats.epoch_loss.push_back(loss / n);
        stats.epoch_accuracy.push_back(acc / n);
    }
    return stats;
}

} // namespace

DiscTrainStats train_dm(const std::vector<std::vector<DmExample>>& batches, MultiModalDiscriminator& d,
                        const DiscTrainConfig& config) {
    return train_loop(batches, d, config, kMmClasses, "train_dm", dm_train_step);
}

DiscTrainStats train_dp(const std::vector<std::vector<DpExample>>& batches, PoemStyleDiscriminator& d,
                        const DiscTrainConfig& config) {
    return train_loop(batches, d, config, kStyleClasses, "train_dp", dp_train_step);
}

double dm_accuracy(const std::vector<DmExample>& examples, const MultiModalDiscriminator& d) {
    if (examples.empty()) {
        return 0.0;
    }
    double correct = 0.0;
    for (const auto& ex : examples) {
        correct += argmax(dm_forward(ex.image, ex.poem, d)) == static_cast<int>(ex.label) ? 1.0 : 0.0;
    }
    return correct / static_cast<double>(examples.size());
}

double dp_accuracy(const std::vector<DpExample>& examples, const PoemStyleDiscriminator& d) {
    if (examples.empty()) {
        return 0.0;
    }
    double correct = 0.0;
    for (const auto& ex : examples) {
        correct += argmax(dp_forward(ex.poem, d)) == static_cast<int>(ex.label) ? 1.0 : 0.0;
    }
    return correct / static_cast<double>(examples.size());
}

} // namespace i2p
