#include "i2p/trainer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <thread>
#include <type_traits>

namespace i2p {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t stream(std::uint64_t master, std::uint64_t stage, std::uint64_t a, std::uint64_t b = 0) {
    return derive_seed(derive_seed(derive_seed(master, stage), a), b);
}

// Runs fn(0..n-1) on up to `threads` workers. Callers write results into
// per-index slots, so the outcome does not depend on scheduling.
template <class F>
void parallel_for(std::size_t n, int threads, F&& fn) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = next++; i < n; i = next++) {
                    fn(i);
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

template <class Config, class Visitor>
void visit_fields(Config& c, Visitor&& v) {
    v("lambda", c.lambda);
    v("use_dm", c.use_dm);
    v("use_dp", c.use_dp);
    v("lr_generator", c.lr_generator);
    v("lr_pretrain", c.lr_pretrain);
    v("lr_dm", c.lr_dm);
    v("lr_dp", c.lr_dp);
    v("lr_embedding", c.lr_embedding);
    v("g_steps", c.g_steps);
    v("d_steps", c.d_steps);
    v("batch_size", c.batch_size);
    v("pretrain_epochs", c.pretrain_epochs);
    v("disc_pretrain_steps", c.disc_pretrain_steps);
    v("rounds", c.rounds);
    v("baseline", c.baseline);
    v("ema_decay", c.ema_decay);
    v("clip_norm", c.clip_norm);
    v("eval_samples", c.eval_samples);
    v("seed", c.seed);
    v("threads", c.threads);
    v("gen_embed", c.gen_embed);
    v("gen_hidden", c.gen_hidden);
    v("t_max", c.t_max);
    v("disc_embed", c.disc_embed);
    v("disc_hidden", c.disc_hidden);
    v("disc_fusion", c.disc_fusion);
    v("embed_dim", c.embed_dim);
    v("encoder_dim", c.encoder_dim);
    v("margin", c.margin);
    v("negatives", c.negatives);
    v("embedding_epochs", c.embedding_epochs);
    v("embedding_batch", c.embedding_batch);
    v("expand_k", c.expand_k);
    v("min_freq", c.min_freq);
}

template <class T>
void read_value(const nlohmann::json& j, const std::string& key, T& out) {
    auto bad = [&](const char* want) { return Error("config key '" + key + "' must be " + want); };
    if constexpr (std::is_same_v<T, bool>) {
        if (!j.is_boolean()) {
            throw bad("a boolean");
        }
        out = j.get<bool>();
    } else if constexpr (std::is_same_v<T, BaselineMode>) {
        if (!j.is_string()) {
            throw bad("a string");
        }
        out = parse_baseline_mode(j.get<std::string>());
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        if (!j.is_number_unsigned()) {
            throw bad("a non-negative integer");
        }
        out = j.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
        if (!j.is_number_integer()) {
            throw bad("an integer");
        }
        out = j.get<T>();
    } else {
        if (!j.is_number()) {
            throw bad("a number");
        }
        out = j.get<T>();
    }
}

nlohmann::json number_or_null(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

template <class T>
T mean_of(const std::vector<T>& v) {
    return v.empty() ? T{} : std::accumulate(v.begin(), v.end(), T{}) / static_cast<T>(v.size());
}

} // namespace

std::string to_string(BaselineMode mode) {
    return mode == BaselineMode::ema ? "ema" : "greedy_rollout";
}

BaselineMode parse_baseline_mode(const std::string& name) {
    if (name == "greedy_rollout") {
        return BaselineMode::greedy_rollout;
    }
    if (name == "ema") {
        return BaselineMode::ema;
    }
    throw Error("unknown baseline mode '" + name + "' (expected greedy_rollout or ema)");
}

void TrainConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) {
            throw Error("invalid config: " + what);
        }
    };
    require(lambda >= 0.0 && lambda <= 1.0, "lambda must lie in [0, 1]");
    require(lr_generator > 0 && lr_pretrain > 0 && lr_dm > 0 && lr_dp > 0 && lr_embedding > 0,
            "learning rates must be > 0");
    require(rounds >= 1, "rounds must be >= 1");
    require(g_steps >= 0 && d_steps >= 0, "step counts must be >= 0");
    require(batch_size >= 1 && embedding_batch >= 1, "batch sizes must be >= 1");
    require(pretrain_epochs >= 0 && disc_pretrain_steps >= 0 && embedding_epochs >= 0, "epoch counts must be >= 0");
    require(ema_decay >= 0.0 && ema_decay <= 1.0, "ema_decay must lie in [0, 1]");
    require(clip_norm >= 0.0, "clip_norm must be >= 0");
    require(eval_samples >= 1, "eval_samples must be >= 1");
    require(threads >= 1, "threads must be >= 1");
    require(gen_embed >= 1 && gen_hidden >= 1 && disc_embed >= 1 && disc_hidden >= 1 && disc_fusion >= 1 &&
                embed_dim >= 1 && encoder_dim >= 1,
            "model sizes must be >= 1");
    require(t_max >= 2, "t_max must be >= 2");
    require(margin >= 0.0, "margin must be >= 0");
    require(negatives >= 1, "negatives must be >= 1");
    require(expand_k >= 0, "expand_k must be >= 0");
    require(min_freq >= 1, "min_freq must be >= 1");
}

RankingConfig TrainConfig::ranking() const {
    RankingConfig r;
    r.margin = margin;
    r.negatives = negatives;
    r.epochs = embedding_epochs;
    r.lr = lr_embedding;
    r.batch_size = embedding_batch;
    r.k = embed_dim;
    r.encoder_lr = lr_embedding;
    r.clip_norm = clip_norm;
    r.seed = derive_seed(seed, stage::kEmbedding);
    return r;
}

nlohmann::json TrainConfig::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    TrainConfig copy = *this;
    visit_fields(copy, [&](const char* key, auto& value) {
        using T = std::decay_t<decltype(value)>;
        if constexpr (std::is_same_v<T, BaselineMode>) {
            j[key] = to_string(value);
        } else {
            j[key] = value;
        }
    });
    return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw Error("config must be a JSON object");
    }
    TrainConfig c;
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        visit_fields(c, [&](const char* name, auto& field) {
            if (key == name) {
                read_value(value, key, field);
                known = true;
            }
        });
        if (!known) {
            throw Error("unknown config key '" + key + "'");
        }
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open config " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("config " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

Baseline::Baseline(BaselineMode mode, double decay, double initial) : mode_(mode), decay_(decay), value_(initial) {
    if (!(decay >= 0.0 && decay <= 1.0)) {
        throw Error("baseline decay must lie in [0, 1]");
    }
    if (!std::isfinite(initial)) {
        throw Error("baseline initial value must be finite");
    }
}

void Baseline::update(double reward) {
    history_.push_back(reward);
    if (mode_ == BaselineMode::ema) {
        value_ = decay_ * value_ + (1.0 - decay_) * reward;
    }
}

double compute_baseline(const Vector& x, const GruDecoder& generator, const MultiModalDiscriminator* dm,
                        const PoemStyleDiscriminator* dp, const RewardConfig& reward_config, const Baseline& baseline,
                        int t_max) {
    if (baseline.mode() == BaselineMode::ema) {
        return baseline.value();
    }
    DecodeConfig dc;
    dc.t_max = t_max;
    dc.mode = DecodeMode::greedy;
    const Rollout greedy = greedy_decode(x, generator, dc);
    return reward(x, greedy.with_bos(generator.bos), dm, dp, reward_config);
}

std::vector<TokenId> clip_sequence(std::vector<TokenId> ids, int t_max) {
    if (static_cast<int>(ids.size()) > t_max) {
        ids.resize(static_cast<std::size_t>(t_max - 1));
        ids.push_back(token::kEos);
    }
    return ids;
}

AdversarialData make_adversarial_data(const std::vector<PairedExample>& pairs, const std::vector<Poem>& poems,
                                      const std::vector<Poem>& paragraphs, const std::vector<ImageFeatures>& images,
                                      const VisualPoeticEmbedding& embedding, const Vocabulary& vocab, int t_max) {
    AdversarialData data;
    data.vocab = vocab;
    std::unordered_map<std::string, int> image_slot;
    for (const auto& f : images) {
        image_slot.emplace(f.image_id, static_cast<int>(data.images.size()));
        data.image_ids.push_back(f.image_id);
        data.images.push_back(embed_image(assemble(f), embedding));
    }
    const PoemIndex index(poems);
    for (const auto& p : pairs) {
        auto it = image_slot.find(p.image_id);
        if (it == image_slot.end()) {
            throw Error("pair references unknown image '" + p.image_id + "'");
        }
        data.paired.push_back({it->second, clip_sequence(tokenize(index.at(p.poem_id), vocab), t_max)});
    }
    std::vector<Poem> unim;
    for (const auto& p : poems) {
        if (p.source == PoemSource::unim || p.source == PoemSource::multim) {
            data.poetic.push_back(clip_sequence(tokenize(p, vocab), t_max));
        }
        if (p.source == PoemSource::unim) {
            unim.push_back(p);
        }
    }
    data.pool = build_sentence_pool(unim.empty() ? poems : unim);
    for (const auto& p : paragraphs) {
        data.paragraphs.push_back(clip_sequence(tokenize(p, vocab), t_max));
    }
    return data;
}

double mean_nll(const AdversarialData& data, const GruDecoder& generator, int limit) {
    const std::size_t n = limit <= 0 ? data.paired.size() : std::min(data.paired.size(), static_cast<std::size_t>(limit));
    if (n == 0) {
        return 0.0;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p = data.paired[i];
        total += mle_loss(data.images[static_cast<std::size_t>(p.image)], p.poem, generator);
    }
    return total / static_cast<double>(n);
}

PretrainResult pretrain_generator(const AdversarialData& data, GruDecoder& generator, const TrainConfig& config) {
    if (data.paired.empty()) {
        throw Error("pretrain_generator: empty paired dataset");
    }
    Optimizer opt(OptimizerKind::adam, config.lr_pretrain, config.clip_norm);
    Rng rng(derive_seed(config.seed, stage::kPretrain));
    std::vector<std::size_t> order(data.paired.size());
    std::iota(order.begin(), order.end(), 0);

    PretrainResult result;
    result.epoch_nll.push_back(mean_nll(data, generator));
    const std::size_t batch = static_cast<std::size_t>(config.batch_size);
    for (int epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            GruDecoder grad = generator.zeros_like();
            for (std::size_t i = start; i < end; ++i) {
                const auto& p = data.paired[order[i]];
                mle_loss_and_gradient(data.images[static_cast<std::size_t>(p.image)], p.poem, generator, grad,
                                      1.0 / static_cast<double>(end - start));
            }
            auto params = generator.blocks();
            opt.step(params, grad.blocks());
            if (!all_finite(params)) {
                throw DivergenceError("pretrain_generator: non-finite generator parameter in epoch " +
                                      std::to_string(epoch));
            }
        }
        result.epoch_nll.push_back(mean_nll(data, generator));
    }
    return result;
}

nlohmann::json RoundMetrics::to_json() const {
    return {{"round", round},
            {"mean_R", number_or_null(mean_reward)},
            {"mean_Cm_paired", number_or_null(mean_cm_paired)},
            {"mean_Cp_poetic", number_or_null(mean_cp_poetic)},
            {"dm_acc", number_or_null(dm_acc)},
            {"dp_acc", number_or_null(dp_acc)},
            {"gen_nll", number_or_null(gen_nll)}};
}

void write_metrics(std::ostream& out, const std::vector<RoundMetrics>& metrics) {
    for (const auto& m : metrics) {
        out << m.to_json().dump() << '\n';
    }
}

AdversarialTrainer::AdversarialTrainer(TrainConfig config, AdversarialData data, GruDecoder generator,
                                       MultiModalDiscriminator dm, PoemStyleDiscriminator dp)
    : config_(std::move(config)),
      data_(std::move(data)),
      generator_(std::move(generator)),
      dm_(std::move(dm)),
      dp_(std::move(dp)),
      gen_opt_(OptimizerKind::adam, config_.lr_generator, config_.clip_norm),
      dm_opt_(OptimizerKind::adam, config_.lr_dm, config_.clip_norm),
      dp_opt_(OptimizerKind::adam, config_.lr_dp, config_.clip_norm),
      baseline_(config_.baseline, config_.ema_decay),
      last_dm_acc_(kNaN),
      last_dp_acc_(kNaN) {
    config_.validate();
    if (data_.paired.empty()) {
        throw Error("adversarial training needs at least one paired example");
    }
    if (generator_.shape.image != static_cast<int>(data_.images.front().size())) {
        throw Error("generator image size does not match the embedding dimension");
    }
    poems_of_image_.resize(data_.images.size());
    for (const auto& p : data_.paired) {
        poems_of_image_[static_cast<std::size_t>(p.image)].insert(p.poem);
    }
}

void AdversarialTrainer::check_finite(const char* what) {
    auto check = [&](std::vector<ParamBlock> blocks, const char* model) {
        if (!all_finite(blocks)) {
            throw DivergenceError(std::string("divergence guard: non-finite ") + model + " parameter after " + what +
                                  " in round " + std::to_string(round_));
        }
    };
    check(generator_.blocks(), "generator");
    check(dm_.blocks(), "D_m");
    check(dp_.blocks(), "D_p");
}

void AdversarialTrainer::generator_step(int step) {
    const std::size_t batch = static_cast<std::size_t>(config_.batch_size);
    Rng rng(stream(config_.seed, stage::kGenerator, static_cast<std::uint64_t>(round_), static_cast<std::uint64_t>(step)));
    std::uniform_int_distribution<std::size_t> pick(0, data_.paired.size() - 1);
    std::vector<int> images(batch);
    for (auto& im : images) {
        im = data_.paired[pick(rng)].image;
    }

    const RewardConfig rc = config_.reward();
    const MultiModalDiscriminator* dm = config_.use_dm ? &dm_ : nullptr;
    const PoemStyleDiscriminator* dp = config_.use_dp ? &dp_ : nullptr;
    std::vector<Rollout> rollouts(batch);
    std::vector<double> rewards(batch);
    std::vector<double> baselines(batch);
    parallel_for(batch, config_.threads, [&](std::size_t i) {
        const Vector& x = data_.images[static_cast<std::size_t>(images[i])];
        DecodeConfig dc;
        dc.t_max = config_.t_max;
        dc.seed = stream(config_.seed, stage::kRollouts, static_cast<std::uint64_t>(round_),
                         static_cast<std::uint64_t>(step) * batch + i);
        rollouts[i] = sample_sequence(x, generator_, dc);
        rewards[i] = reward(x, rollouts[i].with_bos(generator_.bos), dm, dp, rc);
        baselines[i] = compute_baseline(x, generator_, dm, dp, rc, baseline_, config_.t_max);
    });

    GruDecoder grad = generator_.zeros_like();
    for (std::size_t i = 0; i < batch; ++i) {
        accumulate_pg_gradient(rollouts[i], rewards[i], baselines[i], generator_, grad,
                               1.0 / static_cast<double>(batch));
    }
    auto params = generator_.blocks();
    gen_opt_.step(params, grad.blocks(), +1.0);
    for (double r : rewards) {
        baseline_.update(r);
    }
    check_finite("a generator step");
}

std::vector<DmExample> AdversarialTrainer::dm_batch(std::uint64_t seed) const {
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, data_.paired.size() - 1);
    std::vector<DmExample> batch;
    for (int k = 0; k < config_.batch_size; ++k) {
        const auto& p = data_.paired[pick(rng)];
        const Vector& x = data_.images[static_cast<std::size_t>(p.image)];
        batch.push_back({x, p.poem, MmClass::paired});

        for (int attempt = 0; attempt < 100; ++attempt) {
            const auto& q = data_.paired[pick(rng)];
            if (q.image != p.image && !poems_of_image_[static_cast<std::size_t>(p.image)].count(q.poem)) {
                batch.push_back({x, q.poem, MmClass::unpaired});
                break;
            }
        }

        const auto& g = data_.paired[pick(rng)];
        const Vector& gx = data_.images[static_cast<std::size_t>(g.image)];
        DecodeConfig dc;
        dc.t_max = config_.t_max;
        dc.seed = rng();
        batch.push_back({gx, sample_sequence(gx, generator_, dc).with_bos(generator_.bos), MmClass::generated});
    }
    return batch;
}

std::vector<DpExample> AdversarialTrainer::dp_batch(std::uint64_t seed) const {
    Rng rng(seed);
    std::vector<DpExample> batch;
    auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
    for (int k = 0; k < config_.batch_size; ++k) {
        if (!data_.poetic.empty()) {
            batch.push_back({data_.poetic[pick(data_.poetic.size())], StyleClass::poetic});
        }
        if (!data_.pool.empty()) {
            const Poem fake = make_disordered(data_.pool, rng);
            batch.push_back({clip_sequence(tokenize(fake, data_.vocab), config_.t_max), StyleClass::disordered});
        }
        if (!data_.paragraphs.empty()) {
            batch.push_back({data_.paragraphs[pick(data_.paragraphs.size())], StyleClass::paragraphic});
        }
        const auto& g = data_.paired[pick(data_.paired.size())];
        DecodeConfig dc;
        dc.t_max = config_.t_max;
        dc.seed = rng();
        batch.push_back({sample_sequence(data_.images[static_cast<std::size_t>(g.image)], generator_, dc)
                             .with_bos(generator_.bos),
                         StyleClass::generated});
    }
    return batch;
}

std::pair<double, double> AdversarialTrainer::dm_step(std::uint64_t seed) {
    const auto batch = dm_batch(seed);
    return dm_train_step(batch, dm_, dm_opt_);
}

std::pair<double, double> AdversarialTrainer::dp_step(std::uint64_t seed) {
    const auto batch = dp_batch(seed);
    return dp_train_step(batch, dp_, dp_opt_);
}

void AdversarialTrainer::pretrain_discriminators(int steps) {
    for (int s = 0; s < steps; ++s) {
        if (config_.use_dm) {
            last_dm_acc_ = dm_step(stream(config_.seed, stage::kDm, 0, static_cast<std::uint64_t>(s))).second;
        }
        if (config_.use_dp) {
            last_dp_acc_ = dp_step(stream(config_.seed, stage::kDp, 0, static_cast<std::uint64_t>(s))).second;
        }
        check_finite("discriminator pretraining");
    }
}

RoundMetrics AdversarialTrainer::adversarial_round() {
    if (!config_.use_dm && !config_.use_dp) {
        throw Error("no reward defined: both discriminators are disabled (use_dm = use_dp = false)");
    }
    ++round_;
    for (int s = 0; s < config_.g_steps; ++s) {
        generator_step(s);
    }
    for (int s = 0; s < config_.d_steps; ++s) {
        const auto r = static_cast<std::uint64_t>(round_);
        const auto st = static_cast<std::uint64_t>(s);
        // D_m and D_p touch disjoint state and draw from their own streams.
        std::exception_ptr dp_error;
        std::thread dp_worker;
        auto run_dp = [&] {
            try {
                last_dp_acc_ = dp_step(stream(config_.seed, stage::kDp, r, st)).second;
            } catch (...) {
                dp_error = std::current_exception();
            }
        };
        const bool concurrent = config_.threads > 1 && config_.use_dm && config_.use_dp;
        if (config_.use_dp && concurrent) {
            dp_worker = std::thread(run_dp);
        }
        if (config_.use_dm) {
            try {
                last_dm_acc_ = dm_step(stream(config_.seed, stage::kDm, r, st)).second;
            } catch (...) {
                if (dp_worker.joinable()) {
                    dp_worker.join();
                }
                throw;
            }
        }
        if (dp_worker.joinable()) {
            dp_worker.join();
        } else if (config_.use_dp) {
            run_dp();
        }
        if (dp_error) {
            std::rethrow_exception(dp_error);
        }
        check_finite("a discriminator step");
    }
    return evaluate();
}

RoundMetrics AdversarialTrainer::evaluate() const {
    // The evaluation images are the first distinct paired images, and sample i
    // uses the same stream every round so rounds are directly comparable.
    std::vector<int> images;
    std::set<int> seen;
    for (const auto& p : data_.paired) {
        if (static_cast<int>(images.size()) >= config_.eval_samples) {
            break;
        }
        if (seen.insert(p.image).second) {
            images.push_back(p.image);
        }
    }
    const RewardConfig rc = config_.reward();
    const MultiModalDiscriminator* dm = config_.use_dm ? &dm_ : nullptr;
    const PoemStyleDiscriminator* dp = config_.use_dp ? &dp_ : nullptr;
    std::vector<RewardParts> parts(images.size());
    const bool any_reward = config_.use_dm || config_.use_dp;
    parallel_for(images.size(), config_.threads, [&](std::size_t i) {
        const Vector& x = data_.images[static_cast<std::size_t>(images[i])];
        DecodeConfig dc;
        dc.t_max = config_.t_max;
        dc.seed = stream(config_.seed, stage::kEval, 0, i);
        const Rollout r = sample_sequence(x, generator_, dc);
        if (any_reward) {
            parts[i] = reward_parts(x, r.with_bos(generator_.bos), dm, dp, rc);
        } else {
            parts[i] = {kNaN, kNaN, kNaN};
        }
    });
    RoundMetrics m;
    m.round = round_;
    std::vector<double> rs, cms, cps;
    for (const auto& p : parts) {
        rs.push_back(p.reward);
        cms.push_back(p.cm_paired);
        cps.push_back(p.cp_poetic);
    }
    m.mean_reward = mean_of(rs);
    m.mean_cm_paired = config_.use_dm ? mean_of(cms) : kNaN;
    m.mean_cp_poetic = config_.use_dp ? mean_of(cps) : kNaN;
    m.dm_acc = config_.use_dm ? last_dm_acc_ : kNaN;
    m.dp_acc = config_.use_dp ? last_dp_acc_ : kNaN;
    m.gen_nll = mean_nll(data_, generator_, 64);
    return m;
}

namespace {

template <class F>
auto run_stage(const char* name, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const std::exception& e) {
        throw Error(std::string("stage ") + name + ": " + e.what());
    }
}

} // namespace

TrainingResult run_training(const TrainConfig& config, const TrainingPaths& paths) {
    config.validate();
    if (!config.use_dm && !config.use_dp) {
        throw Error("no reward defined: both discriminators are disabled (use_dm = use_dp = false)");
    }
    TrainingResult result;
    const ModelDir dir{paths.out_dir};

    auto images = run_stage("load", [&] { return load_features(paths.features); });
    auto poems = run_stage("load", [&] { return load_poems(paths.poems); });
    auto pairs = run_stage("load", [&] { return load_pairs(paths.pairs); });
    auto paragraphs = run_stage("load", [&] {
        return paths.paragraphs.empty() ? std::vector<Poem>{} : load_poems(paths.paragraphs);
    });

    auto vocab = run_stage("build-vocab", [&] {
        std::vector<Poem> all = poems;
        all.insert(all.end(), paragraphs.begin(), paragraphs.end());
        return build_vocabulary(all, config.min_freq);
    });
    MeanWordEncoder encoder(vocab, config.encoder_dim, derive_seed(config.seed, stage::kEncoder));
    auto embedding = run_stage("train-embedding",
                               [&] { return train_embedding(pairs, poems, images, config.ranking(), encoder); });
    result.embedding_loss = embedding.epoch_loss;

    auto expanded = run_stage("expand", [&] {
        return expand_dataset(pairs, PoemIndex(poems), poems, images, embedding.model, encoder, config.expand_k);
    });
    auto data = run_stage("pretrain", [&] {
        return make_adversarial_data(expanded, poems, paragraphs, images, embedding.model, vocab, config.t_max);
    });

    GeneratorShape gshape{vocab.size(), config.gen_embed, config.gen_hidden, config.embed_dim, config.t_max};
    GruDecoder generator = GruDecoder::random(gshape, derive_seed(config.seed, stage::kGenerator));
    result.pretrain_nll = run_stage("pretrain", [&] { return pretrain_generator(data, generator, config); }).epoch_nll;

    DiscShape dshape{vocab.size(), config.disc_embed, config.disc_hidden, config.disc_fusion, config.embed_dim};
    AdversarialTrainer trainer(config, std::move(data), std::move(generator),
                               MultiModalDiscriminator::random(dshape, derive_seed(config.seed, stage::kDm)),
                               PoemStyleDiscriminator::random(dshape, derive_seed(config.seed, stage::kDp)));
    run_stage("train-gan", [&] {
        trainer.pretrain_discriminators(config.disc_pretrain_steps);
        for (int r = 0; r < config.rounds; ++r) {
            result.metrics.push_back(trainer.adversarial_round());
        }
        return 0;
    });

    run_stage("save", [&] {
        std::filesystem::create_directories(dir.root);
        vocab.save(dir.vocab());
        encoder.save(dir.encoder());
        embedding.model.save(dir.embedding());
        trainer.generator().save(dir.generator());
        trainer.dm().save(dir.dm());
        trainer.dp().save(dir.dp());
        save_pairs(dir.root / "expanded_pairs.jsonl", expanded);
        std::ofstream out(dir.root / "metrics.jsonl", std::ios::binary);
        write_metrics(out, result.metrics);
        if (!out) {
            throw Error("cannot write metrics log");
        }
        result.written = {dir.vocab(), dir.encoder(),  dir.embedding(), dir.generator(), dir.dm(),
                          dir.dp(),    dir.root / "expanded_pairs.jsonl", dir.root / "metrics.jsonl"};
        return 0;
    });
    return result;
}

} // namespace i2p
