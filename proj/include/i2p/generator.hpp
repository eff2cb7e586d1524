#pragma once

#include "i2p/common.hpp"
#include "i2p/corpus.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace i2p {

struct GeneratorShape {
    int vocab = 0;     // V
    int embed = 64;    // E
    int hidden = 128;  // H
    int image = 64;    // K
    int t_max = 60;    // maximum sequence length, BOS included
};

/// Image-conditioned gated-recurrent decoder; its parameters define the policy.
///
/// h_0  = tanh(P x + p)
/// z    = sigmoid(W_z e + U_z h + b_z)
/// r    = sigmoid(W_r e + U_r h + b_r)
/// c    = tanh(W_h e + U_h (r * h) + b_h)
/// h'   = z * h + (1 - z) * c
/// out  = W_o h' + b_o
///
/// where e is the embedding of the previous token. A saturated update gate
/// carries the state through unchanged.
struct GruDecoder {
    GeneratorShape shape;
    TokenId bos = token::kBos;
    std::optional<TokenId> eos = token::kEos;  // nullopt: always run to t_max
    std::uint64_t seed = 0;

    Matrix init_weights;  // H x K
    Vector init_bias;     // H
    Matrix embedding;     // V x E
    Matrix w_update, w_reset, w_candidate;  // H x E
    Matrix u_update, u_reset, u_candidate;  // H x H
    Vector b_update, b_reset, b_candidate;  // H
    Matrix out_weights;  // V x H
    Vector out_bias;     // V

    GruDecoder() = default;
    /// All parameters zero.
    explicit GruDecoder(const GeneratorShape& shape);
    /// Uniform(-0.08, 0.08) on every parameter.
    static GruDecoder random(const GeneratorShape& shape, std::uint64_t seed);

    GruDecoder zeros_like() const;
    std::vector<ParamBlock> blocks();

    void save(const std::filesystem::path& path) const;
    static GruDecoder load(const std::filesystem::path& path);
};

enum class DecodeMode { greedy, sample };

struct DecodeConfig {
    int t_max = 60;
    DecodeMode mode = DecodeMode::sample;
    double temperature = 1.0;
    std::uint64_t seed = 0;
};

/// A generated sequence (BOS excluded) with the per-step log-probabilities
/// under the temperature-1 policy.
struct Rollout {
    Vector image;
    std::vector<TokenId> tokens;
    std::vector<double> log_probs;
    bool terminated = false;  // ended with EOS rather than truncation

    /// BOS followed by the generated tokens.
    std::vector<TokenId> with_bos(TokenId bos = token::kBos) const;
};

Vector init_state(const Vector& image, const GruDecoder& model);

struct StepOutput {
    Vector hidden;
    Vector logits;
};

StepOutput step(const Vector& hidden, TokenId previous, const GruDecoder& model);

Rollout sample_sequence(const Vector& image, const GruDecoder& model, const DecodeConfig& config);
Rollout sample_sequence(const Vector& image, const GruDecoder& model, const DecodeConfig& config, Rng& rng);
Rollout greedy_decode(const Vector& image, const GruDecoder& model, const DecodeConfig& config);

/// Teacher-forced log p(sequence[t] | sequence[0..t-1], image) for t >= 1.
std::vector<double> sequence_log_probs(const Vector& image, std::span<const TokenId> sequence,
                                       const GruDecoder& model);

/// Mean teacher-forced negative log-likelihood of `target` (BOS ... EOS).
double mle_loss(const Vector& image, std::span<const TokenId> target, const GruDecoder& model);

/// mle_loss plus its gradient, scaled by `weight` and added into `grad`.
double mle_loss_and_gradient(const Vector& image, std::span<const TokenId> target, const GruDecoder& model,
                             GruDecoder& grad, double weight = 1.0);

/// (reward - baseline) * sum_t grad log p(y_t | y_<t, image). Throws when the
/// rollout's stored log-probs disagree with the model by more than 1e-6.
GruDecoder pg_gradient(const Rollout& rollout, double reward, double baseline, const GruDecoder& model);

/// As pg_gradient but accumulating scale * gradient into `grad`.
void accumulate_pg_gradient(const Rollout& rollout, double reward, double baseline, const GruDecoder& model,
                            GruDecoder& grad, double scale = 1.0);

inline constexpr double kStaleLogProbTolerance = 1e-6;

} // namespace i2p
