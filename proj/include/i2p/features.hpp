#pragma once

#include "i2p/common.hpp"
#include "i2p/corpus.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace i2p {

/// Per-aspect image features, stand-ins for the three CNN penultimate layers.
struct ImageFeatures {
    std::string image_id;
    Vector object;
    Vector scene;
    Vector sentiment;

    Eigen::Index dim() const { return object.size(); }
    const Vector& of(Aspect a) const;
};

/// Concatenation (object, scene, sentiment); the three must share a length.
Vector assemble(const Vector& object, const Vector& scene, const Vector& sentiment);
Vector assemble(const ImageFeatures& f);

/// Features JSONL: a {"D": int} header line, then one record per image.
std::vector<ImageFeatures> load_features(const std::filesystem::path& path);
void save_features(const std::filesystem::path& path, const std::vector<ImageFeatures>& features);

inline constexpr double kProbClip = 1e-7;

/// Mean over labels of the binary cross-entropy of sigmoid(logits) against
/// `targets`, with probabilities clipped to [1e-7, 1 - 1e-7].
double sigmoid_ce_loss(const Vector& logits, std::span<const int> targets);

/// d(sigmoid_ce_loss)/d(logits). Zero where the probability is clipped.
Vector sigmoid_ce_gradient(const Vector& logits, std::span<const int> targets);

struct MultiLabelHead {
    Aspect aspect = Aspect::object;
    Matrix weights;  // labels x D
    Vector bias;     // labels

    MultiLabelHead() = default;
    MultiLabelHead(Aspect aspect, int labels, int dim);

    Vector logits(const Vector& features) const;
    std::vector<ParamBlock> blocks();
};

struct HeadTrainConfig {
    double lr = 0.5;
    int epochs = 200;
    std::uint64_t seed = 1;
};

/// Mean loss over the dataset and its gradient w.r.t. the head parameters.
double multilabel_loss_and_gradient(const MultiLabelHead& head, const std::vector<Vector>& inputs,
                                    const std::vector<LabelVector>& labels, MultiLabelHead* grad);

struct HeadTrainResult {
    MultiLabelHead head;
    std::vector<double> epoch_loss;  // entry e is the loss before epoch e's update; last is final
};

/// Full-batch gradient descent on one aspect's head.
HeadTrainResult train_multilabel_head(Aspect aspect, const std::vector<Vector>& inputs,
                                      const std::vector<LabelVector>& labels, const HeadTrainConfig& config);

/// Trains all three aspect heads on paired (features, poem labels) data.
std::array<HeadTrainResult, 3> train_multilabel_heads(const std::vector<ImageFeatures>& features,
                                                      const std::vector<std::array<LabelVector, 3>>& labels,
                                                      const HeadTrainConfig& config);

/// Sentence-level encoder producing a fixed-length vector per line.
class SentenceEncoder {
  public:
    virtual ~SentenceEncoder() = default;
    virtual int dim() const = 0;
    /// Throws when the line has no tokens.
    virtual Vector encode(std::string_view line) const = 0;
};

/// Mean of word-embedding rows; out-of-vocabulary words use the UNK row.
class MeanWordEncoder final : public SentenceEncoder {
  public:
    MeanWordEncoder(Vocabulary vocab, int dim, std::uint64_t seed);
    MeanWordEncoder(Vocabulary vocab, Matrix table, std::uint64_t seed = 0);

    int dim() const override { return static_cast<int>(table_.cols()); }
    Vector encode(std::string_view line) const override;

    std::vector<TokenId> token_ids(std::string_view line) const;

    /// Adds d(encode_poem)/d(table)^T * upstream into `grad` (same shape as table).
    void accumulate_poem_gradient(const Poem& poem, const Vector& upstream, Matrix& grad) const;

    const Vocabulary& vocab() const { return vocab_; }
    const Matrix& table() const { return table_; }
    Matrix& table() { return table_; }
    std::uint64_t seed() const { return seed_; }

    void save(const std::filesystem::path& path) const;
    static MeanWordEncoder load(const std::filesystem::path& path, Vocabulary vocab);

  private:
    Vocabulary vocab_;
    Matrix table_;  // V x M
    std::uint64_t seed_ = 0;
};

Vector encode_sentence(std::string_view line, const SentenceEncoder& encoder);

/// Elementwise mean of the line encodings.
Vector encode_poem(const Poem& poem, const SentenceEncoder& encoder);

} // namespace i2p
