#pragma once

#include "i2p/corpus.hpp"
#include "i2p/embedding.hpp"
#include "i2p/features.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace i2p {

/// N-gram counts over a training corpus plus the top-K "frequent" sets.
/// Poems are flattened to one token stream (line breaks dropped).
class NgramStats {
  public:
    NgramStats(const std::vector<Poem>& training, int frequent_size = 2000);

    bool in_training(const std::vector<std::string>& gram) const;
    bool is_frequent(const std::vector<std::string>& gram) const;
    long count(const std::vector<std::string>& gram) const;
    std::size_t frequent_count(int n) const;
    int frequent_size() const { return frequent_size_; }

  private:
    int frequent_size_;
    std::unordered_map<std::string, long> counts_;  // keys for n = 2 and 3
    std::unordered_set<std::string> frequent_;
    std::map<int, std::size_t> frequent_per_n_;
};

/// Per-poem BLEU-n with one reference: geometric mean of clipped k-gram
/// precisions (k = 1..n) times min(1, exp(1 - r/c)). Any zero precision
/// yields 0. `empty_candidate` is set when the candidate has no tokens.
double bleu_n(const Poem& candidate, const Poem& reference, int n, bool* empty_candidate = nullptr);

/// Share of the poem's n-gram occurrences that occur in training but are not
/// frequent. With `inclusive`, n-grams never seen in training count too.
/// Poems shorter than n tokens score 0.
double novelty_n(const Poem& poem, const NgramStats& stats, int n, bool inclusive = false);

double relevance_metric(const ImageFeatures& image, const Poem& poem, const VisualPoeticEmbedding& model,
                        const SentenceEncoder& encoder);

enum class Normalization { min_relative, range };

/// Raised when a column minimum makes (a - min) / min undefined.
class MinZeroError : public Error {
  public:
    using Error::Error;
};

/// Normalizes one metric column across systems.
std::vector<double> normalize_column(const std::vector<double>& column, Normalization mode = Normalization::min_relative);

/// Overall score per system. Columns are keyed bleu1/bleu2/bleu3,
/// novelty2/novelty3 and relevance; each is normalized, BLEU and novelty
/// sub-scores are averaged within their group, and the result is the mean
/// of the group scores that are present.
std::vector<double> overall(const std::map<std::string, std::vector<double>>& columns,
                            Normalization mode = Normalization::min_relative);

struct EvalRow {
    std::string image_id;
    std::optional<double> bleu1, bleu2, bleu3;
    double novelty2 = 0.0;
    double novelty3 = 0.0;
    double relevance = 0.0;
};

struct EvalAggregate {
    std::size_t rows = 0;
    std::size_t rows_with_reference = 0;
    std::optional<double> bleu1, bleu2, bleu3;
    double novelty2 = 0.0;
    double novelty3 = 0.0;
    double relevance = 0.0;
    std::optional<double> overall;
};

struct EvalReport {
    std::string system;
    std::vector<EvalRow> rows;
    EvalAggregate aggregate;
};

struct EvalOptions {
    bool inclusive_novelty = false;
};

/// Scores generated poems; each poem's id names the image it was written for.
/// `ground_truth` maps image id to the human poem; images without one get
/// null BLEU fields and are left out of the BLEU aggregates.
EvalReport evaluate_run(const std::vector<Poem>& generated, const std::unordered_map<std::string, Poem>& ground_truth,
                        const std::vector<ImageFeatures>& images, const VisualPoeticEmbedding& model,
                        const SentenceEncoder& encoder, const NgramStats& stats, const EvalOptions& options = {});

/// Fills each report's aggregate.overall from the cross-system columns. Needs
/// at least two systems; leaves the field empty otherwise.
void attach_overall(std::vector<EvalReport>& reports, Normalization mode = Normalization::min_relative);

void write_report_jsonl(std::ostream& out, const EvalReport& report);
void write_report_table(std::ostream& out, const std::vector<EvalReport>& reports);

} // namespace i2p
