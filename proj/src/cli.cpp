#include "i2p/cli.hpp"

#include "i2p/evalsuite.hpp"
#include "i2p/synthetic.hpp"
#include "i2p/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace i2p {
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::uint64_t seed = 1;
    bool seed_given = false;
    int threads = 1;
    bool threads_given = false;
};

void report_written(std::ostream& out, const std::vector<fs::path>& written) {
    out << "wrote:";
    if (written.empty()) {
        out << " (none)";
    }
    for (std::size_t i = 0; i < written.size(); ++i) {
        out << (i ? ", " : " ") << written[i].string();
    }
    out << '\n';
}

TrainConfig load_config(const std::string& path, const Globals& g) {
    TrainConfig cfg = path.empty() ? TrainConfig{} : TrainConfig::load(path);
    if (g.seed_given) {
        cfg.seed = g.seed;
    }
    if (g.threads_given) {
        cfg.threads = g.threads;
    }
    cfg.validate();
    return cfg;
}

struct LoadedModels {
    Vocabulary vocab;
    MeanWordEncoder encoder;
    VisualPoeticEmbedding embedding;
};

LoadedModels load_embedding_models(const ModelDir& dir) {
    Vocabulary vocab = Vocabulary::load(dir.vocab());
    MeanWordEncoder encoder = MeanWordEncoder::load(dir.encoder(), vocab);
    return {vocab, std::move(encoder), VisualPoeticEmbedding::load(dir.embedding())};
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Plain-text poems separated by blank lines.
std::vector<Poem> read_raw_poems(const fs::path& path, PoemSource source, const std::string& prefix) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    std::vector<Poem> poems;
    Poem current;
    auto flush = [&] {
        if (!current.lines.empty()) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%05zu", poems.size());
            current.id = prefix + "-" + buf;
            current.source = source;
            poems.push_back(std::move(current));
            current = Poem{};
        }
    };
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty()) {
            flush();
        } else {
            current.lines.push_back(t);
        }
    }
    flush();
    return poems;
}

std::unordered_map<std::string, Poem> ground_truth_map(const fs::path& pairs_path, const fs::path& poems_path) {
    const auto pairs = load_pairs(pairs_path);
    const auto poems = load_poems(poems_path);
    const PoemIndex index(poems);
    std::unordered_map<std::string, Poem> gt;
    for (const auto& p : pairs) {
        if (p.origin == PairOrigin::human) {
            gt.emplace(p.image_id, index.at(p.poem_id));
        }
    }
    return gt;
}

} // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"image-to-poem generation pipeline", "i2p"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    auto* seed_opt = app.add_option("--seed", g.seed, "master seed for every stochastic stage");
    auto* threads_opt = app.add_option("--threads", g.threads, "worker cap")->check(CLI::PositiveNumber);

    std::vector<fs::path> written;
    std::function<void()> action;

    // ingest
    auto* ingest = app.add_subcommand("ingest", "plain-text poems (blank-line separated) to poems JSONL");
    std::string in_path, out_path, source_name = "unim", prefix;
    ingest->add_option("--input", in_path)->required();
    ingest->add_option("--out", out_path)->required();
    ingest->add_option("--source", source_name, "unim, multim or paragraph");
    ingest->add_option("--id-prefix", prefix, "defaults to the source name");
    ingest->callback([&] {
        action = [&] {
            const PoemSource src = parse_source(source_name);
            const auto poems = read_raw_poems(in_path, src, prefix.empty() ? source_name : prefix);
            save_poems(out_path, poems);
            out << "ingested " << poems.size() << " poems\n";
            written.push_back(out_path);
        };
    });

    // filter
    auto* filter = app.add_subcommand("filter", "drop poems by line count, character set and duplication");
    int min_lines = 3, max_lines = 10;
    filter->add_option("--input", in_path)->required();
    filter->add_option("--out", out_path)->required();
    filter->add_option("--min-lines", min_lines);
    filter->add_option("--max-lines", max_lines);
    filter->callback([&] {
        action = [&] {
            if (min_lines > max_lines) {
                throw Error("--min-lines must not exceed --max-lines");
            }
            const auto poems = load_poems(in_path);
            const auto kept = filter_poems(poems, min_lines, max_lines);
            save_poems(out_path, kept);
            out << "kept " << kept.size() << " of " << poems.size() << " poems\n";
            written.push_back(out_path);
        };
    });

    // build-vocab
    auto* build_vocab = app.add_subcommand("build-vocab", "vocabulary from one or more poem files");
    std::vector<std::string> poem_files;
    int min_freq = 1;
    build_vocab->add_option("--poems", poem_files)->required();
    build_vocab->add_option("--min-freq", min_freq)->check(CLI::PositiveNumber);
    build_vocab->add_option("--out", out_path)->required();
    build_vocab->callback([&] {
        action = [&] {
            std::vector<Poem> all;
            for (const auto& f : poem_files) {
                auto p = load_poems(f);
                all.insert(all.end(), p.begin(), p.end());
            }
            const Vocabulary v = build_vocabulary(all, min_freq);
            v.save(out_path);
            out << "vocabulary: " << v.size() << " tokens\n";
            written.push_back(out_path);
        };
    });

    // shared pipeline flags
    std::string model_dir, features_path, poems_path, pairs_path, paragraphs_path, config_path, vocab_path;

    auto* train_emb = app.add_subcommand("train-embedding", "learn the visual-poetic embedding");
    train_emb->add_option("--model-dir", model_dir)->required();
    train_emb->add_option("--features", features_path)->required();
    train_emb->add_option("--poems", poems_path)->required();
    train_emb->add_option("--pairs", pairs_path)->required();
    train_emb->add_option("--vocab", vocab_path)->required();
    train_emb->add_option("--config", config_path);
    train_emb->callback([&] {
        action = [&] {
            const TrainConfig cfg = load_config(config_path, g);
            const Vocabulary vocab = Vocabulary::load(vocab_path);
            MeanWordEncoder encoder(vocab, cfg.encoder_dim, derive_seed(cfg.seed, stage::kEncoder));
            const auto result = train_embedding(load_pairs(pairs_path), load_poems(poems_path),
                                                load_features(features_path), cfg.ranking(), encoder);
            const ModelDir dir{model_dir};
            fs::create_directories(dir.root);
            vocab.save(dir.vocab());
            encoder.save(dir.encoder());
            result.model.save(dir.embedding());
            if (!result.epoch_loss.empty()) {
                out << "embedding loss: " << result.epoch_loss.front() << " -> " << result.epoch_loss.back() << '\n';
            }
            written = {dir.vocab(), dir.encoder(), dir.embedding()};
        };
    });

    auto* expand = app.add_subcommand("expand", "add retrieved poems to the human pairs");
    int expand_k = 3;
    expand->add_option("--model-dir", model_dir)->required();
    expand->add_option("--features", features_path)->required();
    expand->add_option("--poems", poems_path)->required();
    expand->add_option("--pairs", pairs_path)->required();
    expand->add_option("--out", out_path)->required();
    expand->add_option("--k", expand_k)->check(CLI::NonNegativeNumber);
    expand->callback([&] {
        action = [&] {
            const auto models = load_embedding_models(ModelDir{model_dir});
            const auto poems = load_poems(poems_path);
            const auto pairs = load_pairs(pairs_path);
            const auto expanded = expand_dataset(pairs, PoemIndex(poems), poems, load_features(features_path),
                                                 models.embedding, models.encoder, expand_k);
            save_pairs(out_path, expanded);
            out << "pairs: " << pairs.size() << " human, " << expanded.size() - pairs.size() << " retrieved\n";
            written.push_back(out_path);
        };
    });

    auto* pretrain = app.add_subcommand("pretrain", "maximum-likelihood pretraining of the generator");
    pretrain->add_option("--model-dir", model_dir)->required();
    pretrain->add_option("--features", features_path)->required();
    pretrain->add_option("--poems", poems_path)->required();
    pretrain->add_option("--pairs", pairs_path, "expanded pairs")->required();
    pretrain->add_option("--config", config_path);
    pretrain->callback([&] {
        action = [&] {
            const TrainConfig cfg = load_config(config_path, g);
            const ModelDir dir{model_dir};
            const auto models = load_embedding_models(dir);
            const auto data = make_adversarial_data(load_pairs(pairs_path), load_poems(poems_path), {},
                                                    load_features(features_path), models.embedding, models.vocab,
                                                    cfg.t_max);
            GeneratorShape shape{models.vocab.size(), cfg.gen_embed, cfg.gen_hidden, models.embedding.k(), cfg.t_max};
            GruDecoder generator = GruDecoder::random(shape, derive_seed(cfg.seed, stage::kGenerator));
            const auto result = pretrain_generator(data, generator, cfg);
            generator.save(dir.generator());
            out << "generator NLL: " << result.epoch_nll.front() << " -> " << result.epoch_nll.back() << '\n';
            written.push_back(dir.generator());
        };
    });

    auto* train_gan = app.add_subcommand("train-gan", "multi-adversarial training of the pretrained generator");
    std::string metrics_path;
    train_gan->add_option("--model-dir", model_dir)->required();
    train_gan->add_option("--features", features_path)->required();
    train_gan->add_option("--poems", poems_path)->required();
    train_gan->add_option("--pairs", pairs_path, "expanded pairs")->required();
    train_gan->add_option("--paragraphs", paragraphs_path);
    train_gan->add_option("--config", config_path);
    train_gan->add_option("--metrics", metrics_path)->required();
    train_gan->callback([&] {
        action = [&] {
            const TrainConfig cfg = load_config(config_path, g);
            if (!cfg.use_dm && !cfg.use_dp) {
                throw Error("no reward defined: both discriminators are disabled (use_dm = use_dp = false)");
            }
            const ModelDir dir{model_dir};
            const auto models = load_embedding_models(dir);
            GruDecoder generator = GruDecoder::load(dir.generator());
            const auto paragraphs = paragraphs_path.empty() ? std::vector<Poem>{} : load_poems(paragraphs_path);
            auto data = make_adversarial_data(load_pairs(pairs_path), load_poems(poems_path), paragraphs,
                                              load_features(features_path), models.embedding, models.vocab, cfg.t_max);
            DiscShape dshape{models.vocab.size(), cfg.disc_embed, cfg.disc_hidden, cfg.disc_fusion,
                             models.embedding.k()};
            AdversarialTrainer trainer(cfg, std::move(data), std::move(generator),
                                       MultiModalDiscriminator::random(dshape, derive_seed(cfg.seed, stage::kDm)),
                                       PoemStyleDiscriminator::random(dshape, derive_seed(cfg.seed, stage::kDp)));
            trainer.pretrain_discriminators(cfg.disc_pretrain_steps);
            const RoundMetrics start = trainer.evaluate();
            std::vector<RoundMetrics> metrics;
            for (int r = 0; r < cfg.rounds; ++r) {
                metrics.push_back(trainer.adversarial_round());
            }
            trainer.generator().save(dir.generator());
            trainer.dm().save(dir.dm());
            trainer.dp().save(dir.dp());
            std::ofstream m(metrics_path, std::ios::binary);
            write_metrics(m, metrics);
            if (!m) {
                throw Error("cannot write " + metrics_path);
            }
            out << "mean R: " << start.mean_reward << " -> " << metrics.back().mean_reward << '\n';
            written = {dir.generator(), dir.dm(), dir.dp(), metrics_path};
        };
    });

    auto* generate = app.add_subcommand("generate", "write one poem per image");
    bool greedy = false;
    double temperature = 1.0;
    int max_len = 0;
    generate->add_option("--model-dir", model_dir)->required();
    generate->add_option("--features", features_path)->required();
    generate->add_option("--out", out_path)->required();
    generate->add_flag("--greedy", greedy, "argmax decoding instead of sampling");
    generate->add_option("--temperature", temperature)->check(CLI::PositiveNumber);
    generate->add_option("--max-len", max_len, "token budget including BOS; defaults to the generator's T_max");
    generate->callback([&] {
        action = [&] {
            const ModelDir dir{model_dir};
            const auto models = load_embedding_models(dir);
            const GruDecoder generator = GruDecoder::load(dir.generator());
            const auto images = load_features(features_path);
            std::vector<Poem> poems;
            for (std::size_t i = 0; i < images.size(); ++i) {
                const Vector x = embed_image(assemble(images[i]), models.embedding);
                DecodeConfig dc;
                dc.t_max = max_len > 0 ? max_len : generator.shape.t_max;
                dc.mode = greedy ? DecodeMode::greedy : DecodeMode::sample;
                dc.temperature = temperature;
                dc.seed = derive_seed(derive_seed(g.seed, stage::kGenerate), i);
                const Rollout r = greedy ? greedy_decode(x, generator, dc) : sample_sequence(x, generator, dc);
                Poem p{images[i].image_id, {}, PoemSource::generated};
                try {
                    p = detokenize(r.tokens, models.vocab, images[i].image_id, PoemSource::generated);
                } catch (const Error&) {
                    p.lines = {models.vocab.token(token::kUnk)};  // nothing but specials was produced
                }
                poems.push_back(std::move(p));
            }
            save_poems(out_path, poems);
            out << "generated " << poems.size() << " poems\n";
            written.push_back(out_path);
        };
    });

    auto* evaluate = app.add_subcommand("evaluate", "BLEU, novelty, relevance and the overall score");
    std::vector<std::string> generated;
    std::string training_path, ground_truth_path;
    int frequent = 2000;
    bool range_norm = false, inclusive = false;
    evaluate->add_option("--model-dir", model_dir)->required();
    evaluate->add_option("--features", features_path)->required();
    evaluate->add_option("--generated", generated, "poem file, optionally NAME=PATH; repeatable")->required();
    evaluate->add_option("--training-poems", training_path, "corpus for the novelty n-gram statistics")->required();
    evaluate->add_option("--ground-truth", ground_truth_path, "pairs file with the human pairs");
    evaluate->add_option("--poems", poems_path, "poems resolving the ground-truth pairs");
    evaluate->add_option("--out", out_path)->required();
    evaluate->add_option("--frequent", frequent, "size of the frequent n-gram set")->check(CLI::NonNegativeNumber);
    evaluate->add_flag("--range-normalization", range_norm, "(a - min) / (max - min) instead of (a - min) / min");
    evaluate->add_flag("--inclusive-novelty", inclusive, "also count n-grams unseen in training as novel");
    evaluate->callback([&] {
        action = [&] {
            if (!ground_truth_path.empty() && poems_path.empty()) {
                throw Error("--ground-truth needs --poems to resolve poem ids");
            }
            const auto models = load_embedding_models(ModelDir{model_dir});
            const auto images = load_features(features_path);
            const NgramStats stats(load_poems(training_path), frequent);
            const auto gt = ground_truth_path.empty() ? std::unordered_map<std::string, Poem>{}
                                                      : ground_truth_map(ground_truth_path, poems_path);
            std::vector<EvalReport> reports;
            for (const auto& spec : generated) {
                const auto eq = spec.find('=');
                const std::string name = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
                const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
                EvalReport report = evaluate_run(load_poems(path), gt, images, models.embedding, models.encoder, stats,
                                                 EvalOptions{inclusive});
                report.system = name;
                reports.push_back(std::move(report));
            }
            const Normalization mode = range_norm ? Normalization::range : Normalization::min_relative;
            try {
                attach_overall(reports, mode);
            } catch (const MinZeroError& e) {
                err << "warning: overall score omitted: " << e.what() << '\n';
            }
            std::ofstream f(out_path, std::ios::binary);
            for (const auto& r : reports) {
                write_report_jsonl(f, r);
            }
            if (!f) {
                throw Error("cannot write " + out_path);
            }
            write_report_table(out, reports);
            written.push_back(out_path);
        };
    });

    auto* synth = app.add_subcommand("make-synthetic", "planted-correspondence toy dataset");
    SyntheticConfig sc;
    synth->add_option("--out-dir", out_path)->required();
    synth->add_option("--n-images", sc.n_images)->check(CLI::PositiveNumber);
    synth->add_option("--corpus-size", sc.corpus_size)->check(CLI::NonNegativeNumber);
    synth->add_option("--dim", sc.dim, "feature length per aspect")->check(CLI::PositiveNumber);
    synth->add_option("--m", sc.m, "sentence-encoder width recorded in the manifest")->check(CLI::PositiveNumber);
    synth->add_option("--paragraphs", sc.paragraphs);
    synth->callback([&] {
        action = [&] {
            sc.seed = g.seed;
            const auto data = make_synthetic(sc);
            written = write_synthetic(data, sc, out_path);
            out << "synthetic: " << data.features.size() << " images, " << data.poems.size() << " poems, "
                << data.pairs.size() << " pairs\n";
        };
    });

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
        g.seed_given = seed_opt->count() > 0;
        g.threads_given = threads_opt->count() > 0;
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_code::kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_code::kOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n' << app.help();
        return exit_code::kUsage;
    }

    try {
        action();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_code::kFailure;
    }
    report_written(out, written);
    return exit_code::kOk;
}

int dispatch(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dispatch(args, std::cout, std::cerr);
}

} // namespace i2p
