#pragma once

#include "i2p/common.hpp"
#include "i2p/corpus.hpp"
#include "i2p/features.hpp"
#include "i2p/optim.hpp"

#include <filesystem>
#include <vector>

namespace i2p {

/// Affine maps of image features (N) and poem vectors (M) into a shared
/// K-dimensional space.
struct VisualPoeticEmbedding {
    Matrix image_weights;  // K x N
    Vector image_bias;     // K
    Matrix poem_weights;   // K x M
    Vector poem_bias;      // K
    std::uint64_t seed = 0;

    VisualPoeticEmbedding() = default;
    /// Zero-initialized.
    VisualPoeticEmbedding(int k, int n, int m);
    /// Uniform(-0.08, 0.08) weights, zero biases.
    static VisualPoeticEmbedding random(int k, int n, int m, std::uint64_t seed);

    int k() const { return static_cast<int>(image_weights.rows()); }
    int n() const { return static_cast<int>(image_weights.cols()); }
    int m() const { return static_cast<int>(poem_weights.cols()); }

    std::vector<ParamBlock> blocks();

    void save(const std::filesystem::path& path) const;
    static VisualPoeticEmbedding load(const std::filesystem::path& path);
};

Vector embed_image(const Vector& features, const VisualPoeticEmbedding& model);
Vector embed_poem(const Vector& poem_vector, const VisualPoeticEmbedding& model);

/// One anchor pair in embedding space with its contrastive partners.
struct RankingTerm {
    Vector image;                       // x
    Vector poem;                        // m
    std::vector<Vector> negative_poems;   // m_k for x
    std::vector<Vector> negative_images;  // x_k for m
};

/// Sum over anchors of the bidirectional hinge loss with dot-product scores.
double ranking_loss(const std::vector<RankingTerm>& terms, double margin);

/// A training example expressed as indices into image/poem feature tables.
struct RankingExample {
    int image = 0;
    int poem = 0;
    std::vector<int> negative_poems;
    std::vector<int> negative_images;
};

/// Ranking loss over `batch` (same value as ranking_loss on the embedded
/// vectors) and, optionally, its gradient w.r.t. the four parameter blocks and
/// w.r.t. each poem vector (accumulated into poem_grads[poem index]).
double ranking_objective(const VisualPoeticEmbedding& model, const std::vector<Vector>& images,
                         const std::vector<Vector>& poems, const std::vector<RankingExample>& batch, double margin,
                         VisualPoeticEmbedding* grad, std::vector<Vector>* poem_grads = nullptr);

struct RankingConfig {
    double margin = 0.2;
    int negatives = 127;
    int epochs = 30;
    double lr = 0.05;
    int batch_size = 16;
    int k = 64;
    OptimizerKind optimizer = OptimizerKind::sgd;
    bool train_encoder = true;
    double encoder_lr = 0.05;
    double clip_norm = 5.0;  // 0 disables gradient-norm clipping
    std::uint64_t seed = 1;
};

struct EmbeddingTrainResult {
    VisualPoeticEmbedding model;
    std::vector<double> epoch_loss;  // mean per-pair loss over each epoch
};

/// SGD on the ranking loss. Negatives are redrawn every epoch, uniformly from
/// the poem corpus (resp. paired images) minus anything paired to the anchor.
/// With `encoder` set and config.train_encoder, its word table is trained jointly.
EmbeddingTrainResult train_embedding(const std::vector<PairedExample>& pairs, const std::vector<Poem>& corpus,
                                     const std::vector<ImageFeatures>& images, const RankingConfig& config,
                                     MeanWordEncoder& encoder);

/// Cosine of the angle between the two vectors; throws on a zero vector.
double relevance(const Vector& x, const Vector& m);

struct Retrieved {
    std::size_t index = 0;  // into the corpus
    std::string poem_id;
    double score = 0.0;
};

/// The k corpus entries with highest cosine to `query`, ties by poem id.
std::vector<Retrieved> retrieve_topk(const Vector& query, const std::vector<Vector>& poem_embeddings,
                                     const std::vector<std::string>& poem_ids, int k);

std::vector<Retrieved> retrieve_topk(const ImageFeatures& image, const std::vector<Poem>& corpus,
                                     const VisualPoeticEmbedding& model, const SentenceEncoder& encoder, int k = 3);

/// Human pairs plus, per image, up to k nearest corpus poems (origin
/// retrieved), skipping poems already paired to the image by id or by
/// normalized text. `poems` resolves the ids in `human_pairs`.
std::vector<PairedExample> expand_dataset(const std::vector<PairedExample>& human_pairs, const PoemIndex& poems,
                                          const std::vector<Poem>& corpus, const std::vector<ImageFeatures>& images,
                                          const VisualPoeticEmbedding& model, const SentenceEncoder& encoder,
                                          int k = 3);

/// Image lookup by id.
class ImageIndex {
  public:
    explicit ImageIndex(const std::vector<ImageFeatures>& images);
    const ImageFeatures& at(const std::string& id) const;
    bool contains(const std::string& id) const { return by_id_.count(id) > 0; }

  private:
    std::unordered_map<std::string, const ImageFeatures*> by_id_;
};

} // namespace i2p
