#pragma once

#include "i2p/adversary.hpp"
#include "i2p/corpus.hpp"
#include "i2p/embedding.hpp"
#include "i2p/features.hpp"
#include "i2p/generator.hpp"
#include "i2p/optim.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace i2p {

enum class BaselineMode { greedy_rollout, ema };

std::string to_string(BaselineMode mode);
BaselineMode parse_baseline_mode(const std::string& name);

/// Every knob of the pipeline. Serialized as a flat JSON object whose keys are
/// the field names; unknown keys are rejected.
struct TrainConfig {
    // reward and ablations
    double lambda = 0.8;
    bool use_dm = true;
    bool use_dp = true;

    // learning rates
    double lr_generator = 0.002;
    double lr_pretrain = 0.01;
    double lr_dm = 0.002;
    double lr_dp = 0.002;
    double lr_embedding = 0.05;

    // schedule
    int g_steps = 1;
    int d_steps = 1;
    int batch_size = 16;
    int pretrain_epochs = 20;
    int disc_pretrain_steps = 20;
    int rounds = 50;
    BaselineMode baseline = BaselineMode::greedy_rollout;
    double ema_decay = 0.9;
    double clip_norm = 5.0;
    int eval_samples = 32;
    std::uint64_t seed = 1;
    int threads = 1;

    // model sizes
    int gen_embed = 64;
    int gen_hidden = 128;
    int t_max = 60;
    int disc_embed = 32;
    int disc_hidden = 128;
    int disc_fusion = 64;
    int embed_dim = 64;    // K
    int encoder_dim = 64;  // M

    // embedding and expansion
    double margin = 0.2;
    int negatives = 127;
    int embedding_epochs = 30;
    int embedding_batch = 16;
    int expand_k = 3;
    int min_freq = 1;

    /// Throws on out-of-range values.
    void validate() const;

    RewardConfig reward() const { return {lambda, use_dm, use_dp}; }
    RankingConfig ranking() const;

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
    static TrainConfig load(const std::filesystem::path& path);
};

/// Reward-centering scalar. In ema mode `value()` is the running average of
/// the rewards passed to `update()`; greedy_rollout mode computes b per
/// example (see compute_baseline) and only keeps the history.
class Baseline {
  public:
    explicit Baseline(BaselineMode mode = BaselineMode::greedy_rollout, double decay = 0.9, double initial = 0.0);

    BaselineMode mode() const { return mode_; }
    double value() const { return value_; }
    double decay() const { return decay_; }
    const std::vector<double>& history() const { return history_; }

    /// b <- decay * b + (1 - decay) * reward in ema mode; always records the reward.
    void update(double reward);

  private:
    BaselineMode mode_;
    double decay_;
    double value_;
    std::vector<double> history_;
};

/// b for image `x`: the reward of the greedy decode under the current
/// discriminators in greedy_rollout mode, the running average in ema mode.
double compute_baseline(const Vector& x, const GruDecoder& generator, const MultiModalDiscriminator* dm,
                        const PoemStyleDiscriminator* dp, const RewardConfig& reward, const Baseline& baseline,
                        int t_max);

/// Token-level view of everything the adversarial phase consumes. Images are
/// already mapped into the (frozen) embedding space.
struct AdversarialData {
    struct Pair {
        int image = 0;
        std::vector<TokenId> poem;
    };

    std::vector<std::string> image_ids;
    std::vector<Vector> images;                  // embedded x, aligned with image_ids
    std::vector<Pair> paired;                    // expanded pairs
    std::vector<std::vector<TokenId>> poetic;    // real poems for the poetic class
    std::vector<std::vector<TokenId>> paragraphs;
    SentencePool pool;                           // source of disordered poems
    Vocabulary vocab;
};

/// Truncates to at most t_max tokens, keeping a final EOS.
std::vector<TokenId> clip_sequence(std::vector<TokenId> ids, int t_max);

/// `pairs` may reference poems from `poems` only; `poems` with source unim or
/// multim form the poetic class and the disordered pool.
AdversarialData make_adversarial_data(const std::vector<PairedExample>& pairs, const std::vector<Poem>& poems,
                                      const std::vector<Poem>& paragraphs, const std::vector<ImageFeatures>& images,
                                      const VisualPoeticEmbedding& embedding, const Vocabulary& vocab, int t_max);

struct PretrainResult {
    std::vector<double> epoch_nll;  // mean NLL before each epoch, plus the final value
};

/// Teacher-forced maximum likelihood on the paired data, minibatched and
/// shuffled per epoch.
PretrainResult pretrain_generator(const AdversarialData& data, GruDecoder& generator, const TrainConfig& config);

/// Mean teacher-forced NLL over the first `limit` pairs (all when limit <= 0).
double mean_nll(const AdversarialData& data, const GruDecoder& generator, int limit = 0);

struct RoundMetrics {
    int round = 0;
    double mean_reward = 0.0;
    double mean_cm_paired = 0.0;  // NaN when D_m is disabled
    double mean_cp_poetic = 0.0;  // NaN when D_p is disabled
    double dm_acc = 0.0;          // NaN when disabled or not yet trained
    double dp_acc = 0.0;
    double gen_nll = 0.0;

    nlohmann::json to_json() const;
};

/// Raised by the divergence guard.
class DivergenceError : public Error {
  public:
    using Error::Error;
};

/// Owns the generator, both discriminators and their optimizers for the
/// adversarial phase. All randomness is drawn from streams derived from
/// config.seed, the round number and the example index, so results do not
/// depend on config.threads.
class AdversarialTrainer {
  public:
    AdversarialTrainer(TrainConfig config, AdversarialData data, GruDecoder generator, MultiModalDiscriminator dm,
                       PoemStyleDiscriminator dp);

    /// Discriminator updates against samples of the current generator.
    void pretrain_discriminators(int steps);

    /// config.g_steps policy-gradient steps followed by config.d_steps updates
    /// of each enabled discriminator. Throws when no discriminator is enabled.
    RoundMetrics adversarial_round();

    /// Metrics of the current models on the evaluation images, without updating anything.
    RoundMetrics evaluate() const;

    int round() const { return round_; }
    const TrainConfig& config() const { return config_; }
    const AdversarialData& data() const { return data_; }
    const GruDecoder& generator() const { return generator_; }
    const MultiModalDiscriminator& dm() const { return dm_; }
    const PoemStyleDiscriminator& dp() const { return dp_; }
    const Baseline& baseline() const { return baseline_; }

    std::vector<DmExample> dm_batch(std::uint64_t seed) const;
    std::vector<DpExample> dp_batch(std::uint64_t seed) const;

  private:
    void generator_step(int step);
    std::pair<double, double> dm_step(std::uint64_t seed);
    std::pair<double, double> dp_step(std::uint64_t seed);
    void check_finite(const char* what);

    TrainConfig config_;
    AdversarialData data_;
    GruDecoder generator_;
    MultiModalDiscriminator dm_;
    PoemStyleDiscriminator dp_;
    Optimizer gen_opt_;
    Optimizer dm_opt_;
    Optimizer dp_opt_;
    Baseline baseline_;
    std::vector<std::set<std::vector<TokenId>>> poems_of_image_;
    int round_ = 0;
    int disc_updates_ = 0;
    double last_dm_acc_;
    double last_dp_acc_;
};

/// File names inside a model directory.
struct ModelDir {
    std::filesystem::path root;

    std::filesystem::path vocab() const { return root / "vocab.json"; }
    std::filesystem::path encoder() const { return root / "encoder.ckpt"; }
    std::filesystem::path embedding() const { return root / "embedding.ckpt"; }
    std::filesystem::path generator() const { return root / "generator.ckpt"; }
    std::filesystem::path dm() const { return root / "dm.ckpt"; }
    std::filesystem::path dp() const { return root / "dp.ckpt"; }
};

struct TrainingPaths {
    std::filesystem::path features;
    std::filesystem::path poems;       // multim + unim poems
    std::filesystem::path pairs;       // human pairs
    std::filesystem::path paragraphs;
    std::filesystem::path out_dir;     // checkpoints, expanded pairs and metrics
};

struct TrainingResult {
    std::vector<double> embedding_loss;
    std::vector<double> pretrain_nll;
    std::vector<RoundMetrics> metrics;
    std::vector<std::filesystem::path> written;
};

/// Embedding, expansion, generator pretraining and the adversarial rounds in
/// one go. A failing stage is reported with its name.
TrainingResult run_training(const TrainConfig& config, const TrainingPaths& paths);

/// Writes one JSON object per line.
void write_metrics(std::ostream& out, const std::vector<RoundMetrics>& metrics);

} // namespace i2p
