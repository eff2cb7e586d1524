#pragma once

#include "i2p/common.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace i2p {

enum class PoemSource { unim, multim, paragraph, generated, disordered };

std::string to_string(PoemSource s);
PoemSource parse_source(std::string_view s);

struct Poem {
    std::string id;
    std::vector<std::string> lines;
    PoemSource source = PoemSource::unim;
};

using TokenId = int;

/// Reserved token ids, fixed for every vocabulary.
namespace token {
inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kBr = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kPad = 4;
inline constexpr int kReservedCount = 5;
} // namespace token

class Vocabulary {
  public:
    /// A vocabulary holding only the reserved tokens.
    Vocabulary();

    /// Builds from an explicit token list; `tokens` must start with the reserved five.
    Vocabulary(std::vector<std::string> tokens, int min_freq);

    TokenId id(const std::string& token) const;  // UNK when absent
    bool contains(const std::string& token) const;
    const std::string& token(TokenId id) const;
    int size() const { return static_cast<int>(id_to_token_.size()); }
    int min_freq() const { return min_freq_; }
    const std::vector<std::string>& tokens() const { return id_to_token_; }

    static bool is_reserved(TokenId id) { return id >= 0 && id < token::kReservedCount; }

    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

  private:
    std::unordered_map<std::string, TokenId> token_to_id_;
    std::vector<std::string> id_to_token_;
    int min_freq_ = 1;
};

/// Lowercases, splits on whitespace and peels leading/trailing punctuation
/// into separate tokens ("moon," -> "moon" ","). Interior punctuation stays.
std::vector<std::string> tokenize_line(std::string_view line);

/// Tokens of the line re-joined by single spaces.
std::string normalize_line(std::string_view line);

/// Lowercased, whitespace-collapsed full text; key for duplicate detection.
std::string normalized_text(const Poem& poem);

/// All tokens of the poem, lines concatenated, no separators.
std::vector<std::string> flatten_tokens(const Poem& poem);

std::vector<Poem> load_poems(const std::filesystem::path& path);
void save_poems(const std::filesystem::path& path, const std::vector<Poem>& poems);

/// Share of characters (code points) that are ASCII letters, digits,
/// punctuation or whitespace.
double ascii_fraction(const Poem& poem);

inline constexpr double kMinAsciiFraction = 0.95;

/// Keeps poems with line count in [min_lines, max_lines], an ASCII fraction of
/// at least 0.95, and whose normalized text has not been seen earlier.
std::vector<Poem> filter_poems(const std::vector<Poem>& poems, int min_lines = 3, int max_lines = 10);

std::vector<TokenId> tokenize(const Poem& poem, const Vocabulary& vocab);

/// Inverse of tokenize: BOS/PAD are stripped, lines split at BR, everything
/// from the first EOS on is dropped. Throws when no line has a token.
Poem detokenize(std::span<const TokenId> ids, const Vocabulary& vocab, std::string id = "",
                PoemSource source = PoemSource::generated);

/// Reserved tokens plus every token with count >= min_freq, ordered by
/// descending count and then lexicographically.
Vocabulary build_vocabulary(const std::vector<Poem>& poems, int min_freq);

struct PoolEntry {
    std::string text;
    std::string origin;
};

using SentencePool = std::vector<PoolEntry>;

SentencePool build_sentence_pool(const std::vector<Poem>& poems);

inline constexpr int kDisorderedMinLines = 3;
inline constexpr int kDisorderedMaxLines = 10;

/// A fake poem of Uniform{3..10} random pool lines, drawn without
/// replacement whenever the pool is large enough.
Poem make_disordered(const SentencePool& pool, Rng& rng, std::string id = "disordered");

enum class Aspect { object = 0, scene = 1, sentiment = 2 };
inline constexpr std::array<Aspect, 3> kAspects = {Aspect::object, Aspect::scene, Aspect::sentiment};
std::string to_string(Aspect a);

struct LexiconSet {
    std::array<std::vector<std::string>, 3> words;

    const std::vector<std::string>& of(Aspect a) const { return words[static_cast<int>(a)]; }

    /// Reads object.txt, scene.txt and sentiment.txt from `dir`.
    static LexiconSet load(const std::filesystem::path& dir);
    void save(const std::filesystem::path& dir) const;

    /// Throws on duplicates, non-lowercase words, or words shared between aspects.
    void validate() const;
};

using LabelVector = std::vector<int>;

/// Per-aspect binary vectors: bit i set iff lexicon word i is a token of the poem.
std::array<LabelVector, 3> extract_labels(const Poem& poem, const LexiconSet& lexicons);

enum class PairOrigin { human, retrieved };

struct PairedExample {
    std::string image_id;
    std::string poem_id;
    PairOrigin origin = PairOrigin::human;
};

std::vector<PairedExample> load_pairs(const std::filesystem::path& path);
void save_pairs(const std::filesystem::path& path, const std::vector<PairedExample>& pairs);

/// Poem lookup by id.
class PoemIndex {
  public:
    explicit PoemIndex(const std::vector<Poem>& poems);
    const Poem& at(const std::string& id) const;
    const Poem* find(const std::string& id) const;

  private:
    std::unordered_map<std::string, const Poem*> by_id_;
};

} // namespace i2p
