#include "i2p/corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace i2p {
namespace {

const std::array<std::string, token::kReservedCount> kReservedTokens = {"<bos>", "<eos>", "<br>", "<unk>", "<pad>"};

bool is_punct(unsigned char c) {
    return c < 0x80 && std::ispunct(c);
}

std::string lowercase(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

std::string collapse_whitespace(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(c);
    }
    return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        lines.push_back(line);
    }
    return lines;
}

bool blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

} // namespace

std::string to_string(PoemSource s) {
    switch (s) {
    case PoemSource::unim: return "unim";
    case PoemSource::multim: return "multim";
    case PoemSource::paragraph: return "paragraph";
    case PoemSource::generated: return "generated";
    case PoemSource::disordered: return "disordered";
    }
    return "unim";
}

PoemSource parse_source(std::string_view s) {
    for (auto src : {PoemSource::unim, PoemSource::multim, PoemSource::paragraph, PoemSource::generated,
                     PoemSource::disordered}) {
        if (to_string(src) == s) {
            return src;
        }
    }
    throw Error("unknown poem source '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>(kReservedTokens.begin(), kReservedTokens.end()), 1) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens, int min_freq) : id_to_token_(std::move(tokens)), min_freq_(min_freq) {
    if (id_to_token_.size() < kReservedTokens.size() ||
        !std::equal(kReservedTokens.begin(), kReservedTokens.end(), id_to_token_.begin())) {
        throw Error("vocabulary must start with the reserved tokens <bos> <eos> <br> <unk> <pad>");
    }
    for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
        if (!token_to_id_.emplace(id_to_token_[i], static_cast<TokenId>(i)).second) {
            throw Error("duplicate vocabulary token '" + id_to_token_[i] + "'");
        }
    }
}

TokenId Vocabulary::id(const std::string& tok) const {
    auto it = token_to_id_.find(tok);
    return it == token_to_id_.end() ? token::kUnk : it->second;
}

bool Vocabulary::contains(const std::string& tok) const {
    return token_to_id_.count(tok) > 0;
}

const std::string& Vocabulary::token(TokenId id) const {
    if (id < 0 || id >= size()) {
        throw Error("token id " + std::to_string(id) + " out of range");
    }
    return id_to_token_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << nlohmann::json{{"min_freq", min_freq_}, {"tokens", id_to_token_}}.dump() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    try {
        const auto j = nlohmann::json::parse(in);
        return Vocabulary(j.at("tokens").get<std::vector<std::string>>(), j.at("min_freq").get<int>());
    } catch (const nlohmann::json::exception& e) {
        throw Error("bad vocabulary file " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Tokenization

std::vector<std::string> tokenize_line(std::string_view line) {
    std::vector<std::string> out;
    std::istringstream words{lowercase(line)};
    std::string word;
    while (words >> word) {
        std::size_t begin = 0;
        std::size_t end = word.size();
        while (begin < end && is_punct(static_cast<unsigned char>(word[begin]))) {
            out.emplace_back(1, word[begin]);
            ++begin;
        }
        std::vector<std::string> trailing;
        while (end > begin && is_punct(static_cast<unsigned char>(word[end - 1]))) {
            trailing.emplace_back(1, word[end - 1]);
            --end;
        }
        if (end > begin) {
            out.push_back(word.substr(begin, end - begin));
        }
        out.insert(out.end(), trailing.rbegin(), trailing.rend());
    }
    return out;
}

std::string normalize_line(std::string_view line) {
    const auto toks = tokenize_line(line);
    std::string out;
    for (const auto& t : toks) {
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += t;
    }
    return out;
}

std::string normalized_text(const Poem& poem) {
    std::string joined;
    for (const auto& l : poem.lines) {
        joined += l;
        joined.push_back('\n');
    }
    return collapse_whitespace(lowercase(joined));
}

std::vector<std::string> flatten_tokens(const Poem& poem) {
    std::vector<std::string> out;
    for (const auto& l : poem.lines) {
        auto toks = tokenize_line(l);
        out.insert(out.end(), toks.begin(), toks.end());
    }
    return out;
}

std::vector<TokenId> tokenize(const Poem& poem, const Vocabulary& vocab) {
    std::vector<TokenId> ids{token::kBos};
    bool any = false;
    for (std::size_t i = 0; i < poem.lines.size(); ++i) {
        if (i > 0) {
            ids.push_back(token::kBr);
        }
        for (const auto& t : tokenize_line(poem.lines[i])) {
            ids.push_back(vocab.id(t));
            any = true;
        }
    }
    if (!any) {
        throw Error("cannot tokenize empty poem '" + poem.id + "'");
    }
    ids.push_back(token::kEos);
    return ids;
}

Poem detokenize(std::span<const TokenId> ids, const Vocabulary& vocab, std::string id, PoemSource source) {
    Poem poem{std::move(id), {}, source};
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            poem.lines.push_back(std::move(current));
            current.clear();
        }
    };
    for (TokenId t : ids) {
        if (t == token::kEos) {
            break;
        }
        if (t == token::kBos || t == token::kPad) {
            continue;
        }
        if (t == token::kBr) {
            flush();
            continue;
        }
        if (!current.empty()) {
            current.push_back(' ');
        }
        current += vocab.token(t);
    }
    flush();
    if (poem.lines.empty()) {
        throw Error("token sequence decodes to an empty poem");
    }
    return poem;
}

Vocabulary build_vocabulary(const std::vector<Poem>& poems, int min_freq) {
    if (poems.empty()) {
        throw Error("build_vocabulary: no poems");
    }
    std::map<std::string, long> counts;
    for (const auto& p : poems) {
        for (const auto& t : flatten_tokens(p)) {
            ++counts[t];
        }
    }
    std::vector<std::pair<std::string, long>> kept;
    for (const auto& [tok, n] : counts) {
        if (n >= min_freq) {
            kept.emplace_back(tok, n);
        }
    }
    if (kept.empty()) {
        throw Error("build_vocabulary: no token reaches min_freq=" + std::to_string(min_freq));
    }
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> tokens(kReservedTokens.begin(), kReservedTokens.end());
    for (auto& [tok, n] : kept) {
        tokens.push_back(std::move(tok));
    }
    return Vocabulary(std::move(tokens), min_freq);
}

// ---------------------------------------------------------------------------
// Poem files

std::vector<Poem> load_poems(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    std::vector<Poem> poems;
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (blank(lines[i])) {
            continue;
        }
        const std::size_t lineno = i + 1;
        Poem p;
        try {
            const auto j = nlohmann::json::parse(lines[i]);
            p.id = j.at("id").get<std::string>();
            p.lines = j.at("lines").get<std::vector<std::string>>();
            p.source = parse_source(j.at("source").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string(), lineno, e.what());
        } catch (const Error& e) {
            throw ParseError(path.string(), lineno, e.what());
        }
        if (p.id.empty()) {
            throw ParseError(path.string(), lineno, "empty poem id");
        }
        if (p.lines.empty()) {
            throw ParseError(path.string(), lineno, "poem '" + p.id + "' has no lines");
        }
        for (const auto& l : p.lines) {
            if (collapse_whitespace(l).empty()) {
                throw ParseError(path.string(), lineno, "poem '" + p.id + "' has a blank line");
            }
        }
        if (!seen.insert(p.id).second) {
            throw ParseError(path.string(), lineno, "duplicate poem id '" + p.id + "'");
        }
        poems.push_back(std::move(p));
    }
    return poems;
}

void save_poems(const std::filesystem::path& path, const std::vector<Poem>& poems) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    for (const auto& p : poems) {
        out << nlohmann::json{{"id", p.id}, {"lines", p.lines}, {"source", to_string(p.source)}}.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// Filtering

double ascii_fraction(const Poem& poem) {
    long total = 0;
    long good = 0;
    for (const auto& line : poem.lines) {
        for (unsigned char c : line) {
            if ((c & 0xC0) == 0x80) {
                continue;  // UTF-8 continuation byte, already counted with its lead byte
            }
            ++total;
            if (c < 0x80 && (std::isalnum(c) || std::ispunct(c) || std::isspace(c))) {
                ++good;
            }
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(good) / static_cast<double>(total);
}

std::vector<Poem> filter_poems(const std::vector<Poem>& poems, int min_lines, int max_lines) {
    if (min_lines > max_lines) {
        throw Error("filter_poems: min_lines > max_lines");
    }
    std::vector<Poem> kept;
    std::unordered_set<std::string> seen;
    for (const auto& p : poems) {
        const int n = static_cast<int>(p.lines.size());
        if (n < min_lines || n > max_lines) {
            continue;
        }
        if (ascii_fraction(p) < kMinAsciiFraction) {
            continue;
        }
        if (!seen.insert(normalized_text(p)).second) {
            continue;
        }
        kept.push_back(p);
    }
    return kept;
}

// ---------------------------------------------------------------------------
// Negative examples

SentencePool build_sentence_pool(const std::vector<Poem>& poems) {
    SentencePool pool;
    for (const auto& p : poems) {
        for (const auto& l : p.lines) {
            pool.push_back({l, p.id});
        }
    }
    return pool;
}

Poem make_disordered(const SentencePool& pool, Rng& rng, std::string id) {
    if (pool.empty()) {
        throw Error("make_disordered: empty sentence pool");
    }
    std::uniform_int_distribution<int> count_dist(kDisorderedMinLines, kDisorderedMaxLines);
    const auto count = static_cast<std::size_t>(count_dist(rng));
    Poem poem{std::move(id), {}, PoemSource::disordered};
    if (pool.size() >= count) {
        // Partial Fisher-Yates over a lazily materialized permutation.
        std::unordered_map<std::size_t, std::size_t> swapped;
        auto at = [&](std::size_t i) {
            auto it = swapped.find(i);
            return it == swapped.end() ? i : it->second;
        };
        for (std::size_t i = 0; i < count; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
            const std::size_t j = pick(rng);
            const std::size_t vi = at(i);
            const std::size_t vj = at(j);
            swapped[i] = vj;
            swapped[j] = vi;
            poem.lines.push_back(pool[vj].text);
        }
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        for (std::size_t i = 0; i < count; ++i) {
            poem.lines.push_back(pool[pick(rng)].text);
        }
    }
    return poem;
}

// ---------------------------------------------------------------------------
// Lexicons and labels

std::string to_string(Aspect a) {
    switch (a) {
    case Aspect::object: return "object";
    case Aspect::scene: return "scene";
    case Aspect::sentiment: return "sentiment";
    }
    return "object";
}

LexiconSet LexiconSet::load(const std::filesystem::path& dir) {
    LexiconSet set;
    for (Aspect a : kAspects) {
        for (const auto& line : read_lines(dir / (to_string(a) + ".txt"))) {
            auto w = collapse_whitespace(line);
            if (!w.empty()) {
                set.words[static_cast<int>(a)].push_back(std::move(w));
            }
        }
    }
    set.validate();
    return set;
}

void LexiconSet::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    for (Aspect a : kAspects) {
        std::ofstream out(dir / (to_string(a) + ".txt"), std::ios::trunc);
        if (!out) {
            throw Error("cannot write lexicon in " + dir.string());
        }
        for (const auto& w : of(a)) {
            out << w << '\n';
        }
    }
}

void LexiconSet::validate() const {
    std::unordered_map<std::string, Aspect> owner;
    for (Aspect a : kAspects) {
        for (const auto& w : of(a)) {
            if (w != lowercase(w) || w.find(' ') != std::string::npos) {
                throw Error("lexicon word '" + w + "' must be a single lowercase word");
            }
            auto [it, inserted] = owner.emplace(w, a);
            if (!inserted) {
                throw Error("lexicon word '" + w + "' appears in both " + to_string(it->second) + " and " +
                            to_string(a));
            }
        }
    }
}

std::array<LabelVector, 3> extract_labels(const Poem& poem, const LexiconSet& lexicons) {
    const auto toks = flatten_tokens(poem);
    const std::unordered_set<std::string> present(toks.begin(), toks.end());
    std::array<LabelVector, 3> out;
    for (Aspect a : kAspects) {
        const auto& words = lexicons.of(a);
        auto& bits = out[static_cast<int>(a)];
        bits.resize(words.size());
        for (std::size_t i = 0; i < words.size(); ++i) {
            bits[i] = present.count(words[i]) ? 1 : 0;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pairs

std::vector<PairedExample> load_pairs(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    std::vector<PairedExample> pairs;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (blank(lines[i])) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(lines[i]);
            PairedExample p;
            p.image_id = j.at("image_id").get<std::string>();
            p.poem_id = j.at("poem_id").get<std::string>();
            const auto origin = j.at("origin").get<std::string>();
            if (origin == "human") {
                p.origin = PairOrigin::human;
            } else if (origin == "retrieved") {
                p.origin = PairOrigin::retrieved;
            } else {
                throw Error("unknown pair origin '" + origin + "'");
            }
            pairs.push_back(std::move(p));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string(), i + 1, e.what());
        } catch (const Error& e) {
            throw ParseError(path.string(), i + 1, e.what());
        }
    }
    return pairs;
}

void save_pairs(const std::filesystem::path& path, const std::vector<PairedExample>& pairs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    for (const auto& p : pairs) {
        out << nlohmann::json{{"image_id", p.image_id},
                              {"poem_id", p.poem_id},
                              {"origin", p.origin == PairOrigin::human ? "human" : "retrieved"}}
                   .dump()
            << '\n';
    }
}

PoemIndex::PoemIndex(const std::vector<Poem>& poems) {
    for (const auto& p : poems) {
        by_id_.emplace(p.id, &p);
    }
}

const Poem* PoemIndex::find(const std::string& id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : it->second;
}

const Poem& PoemIndex::at(const std::string& id) const {
    const Poem* p = find(id);
    if (p == nullptr) {
        throw Error("unknown poem id '" + id + "'");
    }
    return *p;
}

} // namespace i2p
