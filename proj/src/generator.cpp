#include "i2p/generator.hpp"

#include "i2p/checkpoint.hpp"

#include <cmath>

namespace i2p {

GruDecoder::GruDecoder(const GeneratorShape& s) : shape(s) {
    if (s.vocab <= 0 || s.embed <= 0 || s.hidden <= 0 || s.image <= 0) {
        throw Error("generator dimensions must be positive");
    }
    if (s.t_max < 2) {
        throw Error("generator t_max must be at least 2");
    }
    const int h = s.hidden;
    init_weights = Matrix::Zero(h, s.image);
    init_bias = Vector::Zero(h);
    embedding = Matrix::Zero(s.vocab, s.embed);
    w_update = w_reset = w_candidate = Matrix::Zero(h, s.embed);
    u_update = u_reset = u_candidate = Matrix::Zero(h, h);
    b_update = b_reset = b_candidate = Vector::Zero(h);
    out_weights = Matrix::Zero(s.vocab, h);
    out_bias = Vector::Zero(s.vocab);
}

GruDecoder GruDecoder::random(const GeneratorShape& s, std::uint64_t seed) {
    GruDecoder g(s);
    g.seed = seed;
    Rng rng(seed);
    for (auto& b : g.blocks()) {
        fill_uniform(b.values, -0.08, 0.08, rng);
    }
    return g;
}

GruDecoder GruDecoder::zeros_like() const {
    GruDecoder g(shape);
    g.bos = bos;
    g.eos = eos;
    g.seed = seed;
    return g;
}

std::vector<ParamBlock> GruDecoder::blocks() {
    return {make_block("init_weights", init_weights), make_block("init_bias", init_bias),
            make_block("embedding", embedding),       make_block("w_update", w_update),
            make_block("w_reset", w_reset),           make_block("w_candidate", w_candidate),
            make_block("u_update", u_update),         make_block("u_reset", u_reset),
            make_block("u_candidate", u_candidate),   make_block("b_update", b_update),
            make_block("b_reset", b_reset),           make_block("b_candidate", b_candidate),
            make_block("out_weights", out_weights),   make_block("out_bias", out_bias)};
}

void GruDecoder::save(const std::filesystem::path& path) const {
    auto copy = *this;
    write_checkpoint(path,
                     {{"schema", "gen-v1"},
                      {"V", shape.vocab},
                      {"E", shape.embed},
                      {"H", shape.hidden},
                      {"K", shape.image},
                      {"T_max", shape.t_max},
                      {"seed", seed},
                      {"bos", bos},
                      {"eos", eos ? nlohmann::json(*eos) : nlohmann::json(nullptr)}},
                     copy.blocks());
}

GruDecoder GruDecoder::load(const std::filesystem::path& path) {
    const auto h = read_checkpoint_header(path, "gen-v1");
    GeneratorShape s;
    s.vocab = h.at("V").get<int>();
    s.embed = h.at("E").get<int>();
    s.hidden = h.at("H").get<int>();
    s.image = h.at("K").get<int>();
    s.t_max = h.at("T_max").get<int>();
    GruDecoder g(s);
    g.seed = h.at("seed").get<std::uint64_t>();
    g.bos = h.at("bos").get<TokenId>();
    if (h.at("eos").is_null()) {
        g.eos.reset();
    } else {
        g.eos = h.at("eos").get<TokenId>();
    }
    auto blocks = g.blocks();
    read_checkpoint_blocks(path, blocks);
    return g;
}

std::vector<TokenId> Rollout::with_bos(TokenId bos) const {
    std::vector<TokenId> out{bos};
    out.insert(out.end(), tokens.begin(), tokens.end());
    return out;
}

namespace {

Vector sigmoid_vec(const Vector& v) {
    return v.unaryExpr([](double a) { return sigmoid(a); });
}

void check_token(TokenId t, const GruDecoder& model) {
    if (t < 0 || t >= model.shape.vocab) {
        throw Error("token id " + std::to_string(t) + " outside generator vocabulary of " +
                    std::to_string(model.shape.vocab));
    }
}

struct StepCache {
    TokenId input;
    Vector h_prev, z, r, c, h;
    Vector logits;
};

struct Trace {
    Vector image;
    Vector h0;
    std::vector<StepCache> steps;
};

StepCache forward_step(const Vector& h, TokenId y, const GruDecoder& m) {
    check_token(y, m);
    StepCache s;
    s.input = y;
    s.h_prev = h;
    const Vector e = m.embedding.row(y).transpose();
    s.z = sigmoid_vec(m.w_update * e + m.u_update * h + m.b_update);
    s.r = sigmoid_vec(m.w_reset * e + m.u_reset * h + m.b_reset);
    const Vector rh = s.r.cwiseProduct(h);
    s.c = (m.w_candidate * e + m.u_candidate * rh + m.b_candidate).array().tanh();
    s.h = s.z.cwiseProduct(h) + (Vector::Ones(h.size()) - s.z).cwiseProduct(s.c);
    s.logits = m.out_weights * s.h + m.out_bias;
    return s;
}

Trace forward(const Vector& image, std::span<const TokenId> inputs, const GruDecoder& m) {
    Trace tr;
    tr.image = image;
    tr.h0 = init_state(image, m);
    Vector h = tr.h0;
    for (TokenId y : inputs) {
        tr.steps.push_back(forward_step(h, y, m));
        h = tr.steps.back().h;
    }
    return tr;
}

/// Backpropagates per-step logit gradients through the trace into `g`.
void backward(const Trace& tr, const std::vector<Vector>& dlogits, const GruDecoder& m, GruDecoder& g) {
    const Eigen::Index hdim = m.shape.hidden;
    Vector dh_next = Vector::Zero(hdim);
    for (std::size_t t = tr.steps.size(); t-- > 0;) {
        const StepCache& s = tr.steps[t];
        const Vector& dl = dlogits[t];
        g.out_weights.noalias() += dl * s.h.transpose();
        g.out_bias += dl;
        const Vector dh_out = m.out_weights.transpose() * dl + dh_next;

        const Vector e = m.embedding.row(s.input).transpose();
        const Vector one = Vector::Ones(hdim);
        const Vector dz = dh_out.cwiseProduct(s.h_prev - s.c);
        const Vector dc = dh_out.cwiseProduct(one - s.z);
        Vector dh = dh_out.cwiseProduct(s.z);

        const Vector dc_pre = dc.cwiseProduct(one - s.c.cwiseProduct(s.c));
        const Vector rh = s.r.cwiseProduct(s.h_prev);
        g.w_candidate.noalias() += dc_pre * e.transpose();
        g.u_candidate.noalias() += dc_pre * rh.transpose();
        g.b_candidate += dc_pre;
        const Vector drh = m.u_candidate.transpose() * dc_pre;
        const Vector dr = drh.cwiseProduct(s.h_prev);
        dh += drh.cwiseProduct(s.r);
        Vector de = m.w_candidate.transpose() * dc_pre;

        const Vector dz_pre = dz.cwiseProduct(s.z.cwiseProduct(one - s.z));
        g.w_update.noalias() += dz_pre * e.transpose();
        g.u_update.noalias() += dz_pre * s.h_prev.transpose();
        g.b_update += dz_pre;
        dh.noalias() += m.u_update.transpose() * dz_pre;
        de.noalias() += m.w_update.transpose() * dz_pre;

        const Vector dr_pre = dr.cwiseProduct(s.r.cwiseProduct(one - s.r));
        g.w_reset.noalias() += dr_pre * e.transpose();
        g.u_reset.noalias() += dr_pre * s.h_prev.transpose();
        g.b_reset += dr_pre;
        dh.noalias() += m.u_reset.transpose() * dr_pre;
        de.noalias() += m.w_reset.transpose() * dr_pre;

        g.embedding.row(s.input) += de.transpose();
        dh_next = dh;
    }
    const Vector dpre = dh_next.cwiseProduct(Vector::Ones(hdim) - tr.h0.cwiseProduct(tr.h0));
    g.init_weights.noalias() += dpre * tr.image.transpose();
    g.init_bias += dpre;
}

void check_target(std::span<const TokenId> seq) {
    if (seq.size() < 2) {
        throw Error("sequence needs at least one token after BOS");
    }
}

Rollout decode(const Vector& image, const GruDecoder& model, const DecodeConfig& config, Rng* rng) {
    if (config.t_max < 2) {
        throw Error("decode: t_max must be at least 2");
    }
    if (config.mode == DecodeMode::sample && !(config.temperature > 0.0)) {
        throw Error("decode: temperature must be positive");
    }
    Rollout out;
    out.image = image;
    Vector h = init_state(image, model);
    TokenId prev = model.bos;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int t = 1; t < config.t_max; ++t) {
        auto [h_next, logits] = step(h, prev, model);
        h = std::move(h_next);
        const Vector logp = log_softmax(logits);
        TokenId y = 0;
        if (rng == nullptr) {
            y = argmax(logits);
        } else {
            const Vector p = softmax(logits / config.temperature);
            double u = unit(*rng);
            y = static_cast<TokenId>(p.size() - 1);
            for (Eigen::Index i = 0; i < p.size(); ++i) {
                u -= p[i];
                if (u < 0.0) {
                    y = static_cast<TokenId>(i);
                    break;
                }
            }
        }
        out.tokens.push_back(y);
        out.log_probs.push_back(logp[y]);
        prev = y;
        if (model.eos && y == *model.eos) {
            out.terminated = true;
            break;
        }
    }
    return out;
}

} // namespace

Vector init_state(const Vector& image, const GruDecoder& model) {
    if (image.size() != model.shape.image) {
        throw Error("init_state: expected image embedding of size " + std::to_string(model.shape.image) + ", got " +
                    std::to_string(image.size()));
    }
    return (model.init_weights * image + model.init_bias).array().tanh();
}

StepOutput step(const Vector& hidden, TokenId previous, const GruDecoder& model) {
    if (hidden.size() != model.shape.hidden) {
        throw Error("step: hidden state has wrong size");
    }
    auto s = forward_step(hidden, previous, model);
    return {std::move(s.h), std::move(s.logits)};
}

Rollout sample_sequence(const Vector& image, const GruDecoder& model, const DecodeConfig& config) {
    Rng rng(config.seed);
    return sample_sequence(image, model, config, rng);
}

Rollout sample_sequence(const Vector& image, const GruDecoder& model, const DecodeConfig& config, Rng& rng) {
    if (config.mode != DecodeMode::sample) {
        throw Error("sample_sequence requires mode=sample");
    }
    return decode(image, model, config, &rng);
}

Rollout greedy_decode(const Vector& image, const GruDecoder& model, const DecodeConfig& config) {
    if (config.mode != DecodeMode::greedy) {
        throw Error("greedy_decode requires mode=greedy");
    }
    return decode(image, model, config, nullptr);
}

std::vector<double> sequence_log_probs(const Vector& image, std::span<const TokenId> sequence,
                                       const GruDecoder& model) {
    check_target(sequence);
    for (TokenId t : sequence) {
        check_token(t, model);
    }
    const auto tr = forward(image, sequence.first(sequence.size() - 1), model);
    std::vector<double> out;
    for (std::size_t t = 0; t < tr.steps.size(); ++t) {
        out.push_back(log_softmax(tr.steps[t].logits)[sequence[t + 1]]);
    }
    return out;
}

double mle_loss(const Vector& image, std::span<const TokenId> target, const GruDecoder& model) {
    const auto lp = sequence_log_probs(image, target, model);
    double s = 0.0;
    for (double v : lp) {
        s -= v;
    }
    return s / static_cast<double>(lp.size());
}

double mle_loss_and_gradient(const Vector& image, std::span<const TokenId> target, const GruDecoder& model,
                             GruDecoder& grad, double weight) {
    check_target(target);
    for (TokenId t : target) {
        check_token(t, model);
    }
    const auto tr = forward(image, target.first(target.size() - 1), model);
    const double inv = 1.0 / static_cast<double>(tr.steps.size());
    std::vector<Vector> dlogits;
    double loss = 0.0;
    for (std::size_t t = 0; t < tr.steps.size(); ++t) {
        const Vector logp = log_softmax(tr.steps[t].logits);
        const TokenId y = target[t + 1];
        loss -= logp[y] * inv;
        Vector d = logp.array().exp();
        d[y] -= 1.0;
        dlogits.push_back(d * (inv * weight));
    }
    backward(tr, dlogits, model, grad);
    return loss;
}

void accumulate_pg_gradient(const Rollout& rollout, double reward, double baseline, const GruDecoder& model,
                            GruDecoder& grad, double scale) {
    if (rollout.tokens.empty() || rollout.tokens.size() != rollout.log_probs.size()) {
        throw Error("pg_gradient: malformed rollout");
    }
    const auto seq = rollout.with_bos(model.bos);
    const auto tr = forward(rollout.image, std::span<const TokenId>(seq).first(seq.size() - 1), model);
    const double advantage = (reward - baseline) * scale;
    std::vector<Vector> dlogits;
    for (std::size_t t = 0; t < tr.steps.size(); ++t) {
        const Vector logp = log_softmax(tr.steps[t].logits);
        const TokenId y = rollout.tokens[t];
        if (std::abs(logp[y] - rollout.log_probs[t]) > kStaleLogProbTolerance) {
            throw Error("pg_gradient: rollout log-probs do not match the current model (stale rollout)");
        }
        Vector d = -logp.array().exp();
        d[y] += 1.0;
        dlogits.push_back(d * advantage);
    }
    backward(tr, dlogits, model, grad);
}

GruDecoder pg_gradient(const Rollout& rollout, double reward, double baseline, const GruDecoder& model) {
    GruDecoder g = model.zeros_like();
    accumulate_pg_gradient(rollout, reward, baseline, model, g);
    return g;
}

} // namespace i2p
