#include "i2p/evalsuite.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace i2p {
namespace {

std::string key_of(const std::vector<std::string>& toks, std::size_t begin, std::size_t n) {
    std::string key;
    for (std::size_t i = begin; i < begin + n; ++i) {
        if (i > begin) {
            key.push_back('\x1f');
        }
        key += toks[i];
    }
    return key;
}

std::vector<std::string> ngram_keys(const std::vector<std::string>& toks, std::size_t n) {
    std::vector<std::string> keys;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
        keys.push_back(key_of(toks, i, n));
    }
    return keys;
}

std::string key_of(const std::vector<std::string>& gram) {
    return key_of(gram, 0, gram.size());
}

const std::vector<std::string> kBleuCols = {"bleu1", "bleu2", "bleu3"};
const std::vector<std::string> kNoveltyCols = {"novelty2", "novelty3"};

} // namespace

NgramStats::NgramStats(const std::vector<Poem>& training, int frequent_size) : frequent_size_(frequent_size) {
    if (frequent_size < 0) {
        throw Error("frequent n-gram set size must be >= 0");
    }
    for (std::size_t n : {2u, 3u}) {
        std::unordered_map<std::string, long> per_n;
        for (const auto& p : training) {
            for (auto& k : ngram_keys(flatten_tokens(p), n)) {
                ++per_n[k];
            }
        }
        std::vector<std::pair<std::string, long>> ranked(per_n.begin(), per_n.end());
        std::sort(ranked.begin(), ranked.end(),
                  [](const auto& a, const auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; });
        const std::size_t keep = std::min(ranked.size(), static_cast<std::size_t>(frequent_size));
        for (std::size_t i = 0; i < keep; ++i) {
            frequent_.insert(ranked[i].first);
        }
        frequent_per_n_[static_cast<int>(n)] = keep;
        counts_.insert(per_n.begin(), per_n.end());
    }
}

bool NgramStats::in_training(const std::vector<std::string>& gram) const {
    return counts_.count(key_of(gram)) > 0;
}

bool NgramStats::is_frequent(const std::vector<std::string>& gram) const {
    return frequent_.count(key_of(gram)) > 0;
}

long NgramStats::count(const std::vector<std::string>& gram) const {
    auto it = counts_.find(key_of(gram));
    return it == counts_.end() ? 0 : it->second;
}

std::size_t NgramStats::frequent_count(int n) const {
    auto it = frequent_per_n_.find(n);
    return it == frequent_per_n_.end() ? 0 : it->second;
}

double bleu_n(const Poem& candidate, const Poem& reference, int n, bool* empty_candidate) {
    if (n < 1 || n > 3) {
        throw Error("bleu_n: n must be 1, 2 or 3");
    }
    const auto cand = flatten_tokens(candidate);
    const auto ref = flatten_tokens(reference);
    if (empty_candidate != nullptr) {
        *empty_candidate = cand.empty();
    }
    if (cand.empty() || ref.empty()) {
        return 0.0;
    }
    double log_sum = 0.0;
    for (int k = 1; k <= n; ++k) {
        const auto cand_grams = ngram_keys(cand, static_cast<std::size_t>(k));
        if (cand_grams.empty()) {
            return 0.0;
        }
        std::unordered_map<std::string, long> ref_counts;
        for (auto& g : ngram_keys(ref, static_cast<std::size_t>(k))) {
            ++ref_counts[g];
        }
        std::unordered_map<std::string, long> cand_counts;
        for (const auto& g : cand_grams) {
            ++cand_counts[g];
        }
        long matched = 0;
        for (const auto& [g, c] : cand_counts) {
            auto it = ref_counts.find(g);
            if (it != ref_counts.end()) {
                matched += std::min(c, it->second);
            }
        }
        if (matched == 0) {
            return 0.0;
        }
        log_sum += std::log(static_cast<double>(matched) / static_cast<double>(cand_grams.size()));
    }
    const double c = static_cast<double>(cand.size());
    const double r = static_cast<double>(ref.size());
    const double bp = std::min(1.0, std::exp(1.0 - r / c));
    return bp * std::exp(log_sum / n);
}

double novelty_n(const Poem& poem, const NgramStats& stats, int n, bool inclusive) {
    if (n != 2 && n != 3) {
        throw Error("novelty_n: n must be 2 or 3");
    }
    const auto toks = flatten_tokens(poem);
    if (toks.size() < static_cast<std::size_t>(n)) {
        return 0.0;
    }
    long total = 0;
    long novel = 0;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i) {
        const std::vector<std::string> gram(toks.begin() + static_cast<long>(i), toks.begin() + static_cast<long>(i) + n);
        ++total;
        if (stats.is_frequent(gram)) {
            continue;
        }
        if (inclusive || stats.in_training(gram)) {
            ++novel;
        }
    }
    return static_cast<double>(novel) / static_cast<double>(total);
}

double relevance_metric(const ImageFeatures& image, const Poem& poem, const VisualPoeticEmbedding& model,
                        const SentenceEncoder& encoder) {
    return relevance(embed_image(assemble(image), model), embed_poem(encode_poem(poem, encoder), model));
}

std::vector<double> normalize_column(const std::vector<double>& column, Normalization mode) {
    if (column.size() < 2) {
        throw Error("normalization needs values for at least two systems");
    }
    const auto [lo_it, hi_it] = std::minmax_element(column.begin(), column.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    std::vector<double> out;
    if (mode == Normalization::min_relative) {
        if (!(lo > 0.0)) {
            throw MinZeroError("(a - min) / min is undefined: column minimum is " + std::to_string(lo));
        }
        for (double a : column) {
            out.push_back((a - lo) / lo);
        }
    } else {
        for (double a : column) {
            out.push_back(hi > lo ? (a - lo) / (hi - lo) : 0.0);
        }
    }
    return out;
}

std::vector<double> overall(const std::map<std::string, std::vector<double>>& columns, Normalization mode) {
    std::size_t systems = 0;
    for (const auto& [name, col] : columns) {
        const bool known = name == "relevance" || std::count(kBleuCols.begin(), kBleuCols.end(), name) ||
                           std::count(kNoveltyCols.begin(), kNoveltyCols.end(), name);
        if (!known) {
            throw Error("overall: unknown metric column '" + name + "'");
        }
        if (systems == 0) {
            systems = col.size();
        } else if (col.size() != systems) {
            throw Error("overall: columns disagree on the number of systems");
        }
    }
    if (systems < 2) {
        throw Error("overall: need at least two systems");
    }
    std::vector<std::vector<double>> groups;
    for (const auto* names : {&kBleuCols, &kNoveltyCols}) {
        std::vector<double> sum(systems, 0.0);
        int present = 0;
        for (const auto& name : *names) {
            auto it = columns.find(name);
            if (it == columns.end()) {
                continue;
            }
            const auto norm = normalize_column(it->second, mode);
            for (std::size_t s = 0; s < systems; ++s) {
                sum[s] += norm[s];
            }
            ++present;
        }
        if (present > 0) {
            for (double& v : sum) {
                v /= present;
            }
            groups.push_back(std::move(sum));
        }
    }
    if (auto it = columns.find("relevance"); it != columns.end()) {
        groups.push_back(normalize_column(it->second, mode));
    }
    std::vector<double> out(systems, 0.0);
    for (const auto& g : groups) {
        for (std::size_t s = 0; s < systems; ++s) {
            out[s] += g[s] / static_cast<double>(groups.size());
        }
    }
    return out;
}

EvalReport evaluate_run(const std::vector<Poem>& generated, const std::unordered_map<std::string, Poem>& ground_truth,
                        const std::vector<ImageFeatures>& images, const VisualPoeticEmbedding& model,
                        const SentenceEncoder& encoder, const NgramStats& stats, const EvalOptions& options) {
    const ImageIndex index(images);
    EvalReport report;
    auto& agg = report.aggregate;
    double b1 = 0.0, b2 = 0.0, b3 = 0.0;
    for (const auto& poem : generated) {
        EvalRow row;
        row.image_id = poem.id;
        if (auto it = ground_truth.find(poem.id); it != ground_truth.end()) {
            row.bleu1 = bleu_n(poem, it->second, 1);
            row.bleu2 = bleu_n(poem, it->second, 2);
            row.bleu3 = bleu_n(poem, it->second, 3);
            b1 += *row.bleu1;
            b2 += *row.bleu2;
            b3 += *row.bleu3;
            ++agg.rows_with_reference;
        }
        row.novelty2 = novelty_n(poem, stats, 2, options.inclusive_novelty);
        row.novelty3 = novelty_n(poem, stats, 3, options.inclusive_novelty);
        row.relevance = relevance_metric(index.at(poem.id), poem, model, encoder);
        agg.novelty2 += row.novelty2;
        agg.novelty3 += row.novelty3;
        agg.relevance += row.relevance;
        report.rows.push_back(std::move(row));
    }
    agg.rows = report.rows.size();
    if (agg.rows > 0) {
        const double n = static_cast<double>(agg.rows);
        agg.novelty2 /= n;
        agg.novelty3 /= n;
        agg.relevance /= n;
    }
    if (agg.rows_with_reference > 0) {
        const double n = static_cast<double>(agg.rows_with_reference);
        agg.bleu1 = b1 / n;
        agg.bleu2 = b2 / n;
        agg.bleu3 = b3 / n;
    }
    return report;
}

void attach_overall(std::vector<EvalReport>& reports, Normalization mode) {
    if (reports.size() < 2) {
        return;
    }
    std::map<std::string, std::vector<double>> cols;
    const bool all_bleu = std::all_of(reports.begin(), reports.end(), [](const EvalReport& r) { return r.aggregate.bleu1.has_value(); });
    for (const auto& r : reports) {
        const auto& a = r.aggregate;
        if (all_bleu) {
            cols["bleu1"].push_back(*a.bleu1);
            cols["bleu2"].push_back(*a.bleu2);
            cols["bleu3"].push_back(*a.bleu3);
        }
        cols["novelty2"].push_back(a.novelty2);
        cols["novelty3"].push_back(a.novelty3);
        cols["relevance"].push_back(a.relevance);
    }
    const auto scores = overall(cols, mode);
    for (std::size_t i = 0; i < reports.size(); ++i) {
        reports[i].aggregate.overall = scores[i];
    }
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string fmt_pct(const std::optional<double>& v) {
    if (!v) {
        return "-";
    }
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << *v * 100.0;
    return s.str();
}

} // namespace

void write_report_jsonl(std::ostream& out, const EvalReport& report) {
    for (const auto& r : report.rows) {
        nlohmann::json j{{"system", report.system},   {"image_id", r.image_id}, {"bleu1", opt_json(r.bleu1)},
                         {"bleu2", opt_json(r.bleu2)}, {"bleu3", opt_json(r.bleu3)}, {"novelty2", r.novelty2},
                         {"novelty3", r.novelty3},     {"relevance", r.relevance}};
        out << j.dump() << '\n';
    }
    const auto& a = report.aggregate;
    nlohmann::json j{{"system", report.system},
                     {"aggregate", true},
                     {"rows", a.rows},
                     {"rows_with_reference", a.rows_with_reference},
                     {"bleu1", opt_json(a.bleu1)},
                     {"bleu2", opt_json(a.bleu2)},
                     {"bleu3", opt_json(a.bleu3)},
                     {"novelty2", a.novelty2},
                     {"novelty3", a.novelty3},
                     {"relevance", a.relevance},
                     {"overall", opt_json(a.overall)}};
    out << j.dump() << '\n';
}

void write_report_table(std::ostream& out, const std::vector<EvalReport>& reports) {
    out << std::left << std::setw(24) << "system" << std::right << std::setw(9) << "BLEU-1" << std::setw(9)
        << "BLEU-2" << std::setw(9) << "BLEU-3" << std::setw(10) << "Nov-2" << std::setw(10) << "Nov-3"
        << std::setw(11) << "Relevance" << std::setw(9) << "Overall" << '\n';
    for (const auto& r : reports) {
        const auto& a = r.aggregate;
        std::ostringstream overall_text;
        if (a.overall) {
            overall_text << std::fixed << std::setprecision(3) << *a.overall;
        } else {
            overall_text << "-";
        }
        out << std::left << std::setw(24) << r.system << std::right << std::setw(9) << fmt_pct(a.bleu1)
            << std::setw(9) << fmt_pct(a.bleu2) << std::setw(9) << fmt_pct(a.bleu3) << std::setw(10)
            << fmt_pct(a.novelty2) << std::setw(10) << fmt_pct(a.novelty3) << std::setw(11) << fmt_pct(a.relevance)
            << std::setw(9) << overall_text.str() << '\n';
    }
}

} // namespace i2p
