#pragma once

#include "i2p/common.hpp"
#include "i2p/corpus.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace i2p::testing {

/// A fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
  public:
    explicit ScratchDir(const std::string& tag = "test");
    ~ScratchDir();
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

/// All block values concatenated in block order.
std::vector<double> flatten(const std::vector<ParamBlock>& blocks);

/// ||a - b|| / (||a|| + ||b||), 0 when both are zero.
double relative_error(const std::vector<double>& a, const std::vector<double>& b);
double relative_error(const Vector& a, const Vector& b);

/// |a - b| / max(|a|, |b|), 0 when both are zero.
double relative_error(double a, double b);

/// Central differences of `f` with respect to every scalar in `params`,
/// restoring each value afterwards.
std::vector<double> numeric_gradient(std::vector<ParamBlock> params, const std::function<double()>& f,
                                     double h = 1e-6);

Vector random_vector(Eigen::Index n, Rng& rng, double scale = 1.0);
Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0);

/// Fills every block with Uniform(-scale, scale).
void randomize_blocks(std::vector<ParamBlock> blocks, Rng& rng, double scale);

/// Random lowercase word of 2..6 letters drawn from a small alphabet.
std::string random_word(Rng& rng, int alphabet = 6);

/// Random poem with `lines` lines of 1..words_max words.
Poem random_poem(Rng& rng, int lines, int words_max, std::string id = "p", int alphabet = 6);

/// Whitespace-split words of every line, concatenated.
std::vector<std::string> split_words(const Poem& poem);

/// BLEU-n by exhaustive scanning: for each distinct candidate k-gram, count
/// its occurrences in both sequences position by position.
double brute_force_bleu(const std::vector<std::string>& candidate, const std::vector<std::string>& reference, int n);

} // namespace i2p::testing
