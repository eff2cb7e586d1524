#pragma once

#include "i2p/common.hpp"
#include "i2p/corpus.hpp"
#include "i2p/optim.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace i2p {

enum class MmClass { paired = 0, unpaired = 1, generated = 2 };
enum class StyleClass { poetic = 0, disordered = 1, paragraphic = 2, generated = 3 };

inline constexpr int kMmClasses = 3;
inline constexpr int kStyleClasses = 4;

/// LSTM over token embeddings; the final hidden state encodes the sequence.
struct LstmEncoder {
    Matrix embedding;                               // V x E
    Matrix w_input, w_forget, w_output, w_cell;     // H x E
    Matrix u_input, u_forget, u_output, u_cell;     // H x H
    Vector b_input, b_forget, b_output, b_cell;     // H

    LstmEncoder() = default;
    LstmEncoder(int vocab, int embed, int hidden);

    int vocab() const { return static_cast<int>(embedding.rows()); }
    int embed() const { return static_cast<int>(embedding.cols()); }
    int hidden() const { return static_cast<int>(w_input.rows()); }

    void append_blocks(std::vector<ParamBlock>& out, const std::string& prefix);
};

/// The tokens an encoder consumes: BOS and PAD skipped, stopping after the
/// first EOS (inclusive). A sequence of only BOS/PAD yields {EOS}; an empty
/// sequence throws.
std::vector<TokenId> encoder_inputs(std::span<const TokenId> sequence);

Vector lstm_encode(std::span<const TokenId> sequence, const LstmEncoder& encoder);

struct DiscShape {
    int vocab = 0;
    int embed = 32;
    int hidden = 128;  // H_d / H_p
    int fusion = 64;   // F, multi-modal only
    int image = 64;    // K, multi-modal only
};

/// Classifies (image embedding, poem) as paired / unpaired / generated.
struct MultiModalDiscriminator {
    LstmEncoder encoder;
    Matrix image_weights;  // F x K
    Vector image_bias;     // F
    Matrix poem_weights;   // F x H
    Vector poem_bias;      // F
    Matrix class_weights;  // 3 x F
    Vector class_bias;     // 3
    std::uint64_t seed = 0;

    MultiModalDiscriminator() = default;
    explicit MultiModalDiscriminator(const DiscShape& shape);
    /// Uniform(-0.08, 0.08) LSTM weights; Glorot-uniform projections and
    /// classifier; zero biases.
    static MultiModalDiscriminator random(const DiscShape& shape, std::uint64_t seed);

    DiscShape shape() const;
    MultiModalDiscriminator zeros_like() const;
    std::vector<ParamBlock> blocks();

    void save(const std::filesystem::path& path) const;
    static MultiModalDiscriminator load(const std::filesystem::path& path);
};

/// Classifies a poem as poetic / disordered / paragraphic / generated.
struct PoemStyleDiscriminator {
    LstmEncoder encoder;
    Matrix class_weights;  // 4 x H
    Vector class_bias;     // 4
    std::uint64_t seed = 0;

    PoemStyleDiscriminator() = default;
    explicit PoemStyleDiscriminator(const DiscShape& shape);
    /// Uniform(-0.08, 0.08) LSTM weights, Glorot-uniform classifier, zero bias.
    static PoemStyleDiscriminator random(const DiscShape& shape, std::uint64_t seed);

    DiscShape shape() const;
    PoemStyleDiscriminator zeros_like() const;
    std::vector<ParamBlock> blocks();

    void save(const std::filesystem::path& path) const;
    static PoemStyleDiscriminator load(const std::filesystem::path& path);
};

/// C_m = softmax(W_m (tanh(W_x x + b_x) * tanh(W_c LSTM(y) + b_c)) + b_m).
Vector dm_forward(const Vector& image, std::span<const TokenId> poem, const MultiModalDiscriminator& d);

/// C_p = softmax(W_p LSTM(y) + b_p).
Vector dp_forward(std::span<const TokenId> poem, const PoemStyleDiscriminator& d);

/// -log C_m(label), with weight * gradient added into `grad` when non-null.
/// `predicted` receives the argmax class.
double dm_loss_and_gradient(const Vector& image, std::span<const TokenId> poem, MmClass label,
                            const MultiModalDiscriminator& d, MultiModalDiscriminator* grad, double weight = 1.0,
                            int* predicted = nullptr);

double dp_loss_and_gradient(std::span<const TokenId> poem, StyleClass label, const PoemStyleDiscriminator& d,
                            PoemStyleDiscriminator* grad, double weight = 1.0, int* predicted = nullptr);

struct RewardConfig {
    double lambda = 0.8;
    bool use_dm = true;
    bool use_dp = true;
};

/// lambda * C_m(paired) + (1 - lambda) * C_p(poetic); a disabled critic drops
/// out and the other supplies the whole reward.
double combine_reward(double cm_paired, double cp_poetic, const RewardConfig& config);

struct RewardParts {
    double reward = 0.0;
    double cm_paired = 0.0;  // NaN when D_m is disabled
    double cp_poetic = 0.0;  // NaN when D_p is disabled
};

RewardParts reward_parts(const Vector& image, std::span<const TokenId> poem, const MultiModalDiscriminator* dm,
                         const PoemStyleDiscriminator* dp, const RewardConfig& config);

double reward(const Vector& image, std::span<const TokenId> poem, const MultiModalDiscriminator* dm,
              const PoemStyleDiscriminator* dp, const RewardConfig& config);

struct DmExample {
    Vector image;
    std::vector<TokenId> poem;
    MmClass label = MmClass::paired;
};

struct DpExample {
    std::vector<TokenId> poem;
    StyleClass label = StyleClass::poetic;
};

struct DiscTrainConfig {
    double lr = 0.01;
    OptimizerKind optimizer = OptimizerKind::adam;
    int epochs = 1;
    double clip_norm = 5.0;
};

struct DiscTrainStats {
    std::vector<double> epoch_loss;      // mean cross-entropy over each epoch
    std::vector<double> epoch_accuracy;  // argmax accuracy over each epoch
    std::vector<std::string> warnings;
};

/// One optimizer step on the mean cross-entropy of `batch`. Returns (loss, accuracy).
std::pair<double, double> dm_train_step(const std::vector<DmExample>& batch, MultiModalDiscriminator& d,
                                        Optimizer& opt);
std::pair<double, double> dp_train_step(const std::vector<DpExample>& batch, PoemStyleDiscriminator& d,
                                        Optimizer& opt);

/// Runs config.epochs passes over `batches`; a class missing from an epoch is
/// recorded as a warning, not an error.
DiscTrainStats train_dm(const std::vector<std::vector<DmExample>>& batches, MultiModalDiscriminator& d,
                        const DiscTrainConfig& config);
DiscTrainStats train_dp(const std::vector<std::vector<DpExample>>& batches, PoemStyleDiscriminator& d,
                        const DiscTrainConfig& config);

double dm_accuracy(const std::vector<DmExample>& examples, const MultiModalDiscriminator& d);
double dp_accuracy(const std::vector<DpExample>& examples, const PoemStyleDiscriminator& d);

} // namespace i2p
