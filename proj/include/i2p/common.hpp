#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace i2p {

// Row-major so that a block's data() is already in checkpoint order.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

using Rng = std::mt19937_64;

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Raised by readers of line-oriented formats; carries the 1-based line.
class ParseError : public Error {
  public:
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const { return line_; }

  private:
    std::size_t line_;
};

/// Derives an independent seed for a named stage from a master seed.
///
/// seed(stage) = splitmix64(master + (stage + 1) * 0x9E3779B97F4A7C15).
/// Stage indices are fixed constants (see Stage) so that adding a stage never
/// perturbs the streams of existing ones.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stage);

namespace stage {
inline constexpr std::uint64_t kEmbedding = 1;
inline constexpr std::uint64_t kExpand = 2;
inline constexpr std::uint64_t kPretrain = 3;
inline constexpr std::uint64_t kGenerator = 4;
inline constexpr std::uint64_t kDm = 5;
inline constexpr std::uint64_t kDp = 6;
inline constexpr std::uint64_t kRollouts = 7;
inline constexpr std::uint64_t kGenerate = 8;
inline constexpr std::uint64_t kHeads = 9;
inline constexpr std::uint64_t kSynthetic = 10;
inline constexpr std::uint64_t kEncoder = 11;
inline constexpr std::uint64_t kEval = 12;
} // namespace stage

double sigmoid(double x);

/// Numerically stable softmax.
Vector softmax(const Vector& logits);

/// log(softmax(logits)) without forming the probabilities.
Vector log_softmax(const Vector& logits);

/// Index of the largest entry, lowest index on ties.
int argmax(const Vector& v);

void fill_uniform(std::span<double> values, double lo, double hi, Rng& rng);
void fill_gaussian(std::span<double> values, double stddev, Rng& rng);

/// A named, shaped view into one parameter array of a model.
struct ParamBlock {
    std::string name;
    Eigen::Index rows;
    Eigen::Index cols;
    std::span<double> values;
};

template <class Derived>
ParamBlock make_block(std::string name, Eigen::PlainObjectBase<Derived>& m) {
    return {std::move(name), m.rows(), m.cols(), std::span<double>(m.data(), static_cast<std::size_t>(m.size()))};
}

/// Total number of scalars across blocks.
std::size_t parameter_count(const std::vector<ParamBlock>& blocks);

bool all_finite(const std::vector<ParamBlock>& blocks);

/// FNV-1a over the raw bytes of every block, used to detect parameter changes.
std::uint64_t parameter_hash(const std::vector<ParamBlock>& blocks);

/// params += scale * grads, block by block. Shapes must agree.
void axpy(std::vector<ParamBlock>& params, const std::vector<ParamBlock>& grads, double scale);

void set_zero(std::vector<ParamBlock>& blocks);

} // namespace i2p
