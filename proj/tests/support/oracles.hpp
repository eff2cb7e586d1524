#pragma once

#include "i2p/adversary.hpp"
#include "i2p/embedding.hpp"

#include <vector>

// Direct scalar evaluations of the model formulas, written with plain loops
// and independent of the library's Eigen code paths.
namespace i2p::testing {

double sigmoid_oracle(double v);

/// Mean multi-label sigmoid cross-entropy with probabilities clipped to
/// [1e-7, 1 - 1e-7].
double ce_oracle(const std::vector<double>& logits, const std::vector<int>& targets);

/// W v + b.
std::vector<double> affine_oracle(const Matrix& w, const Vector& b, const Vector& v);

/// Bidirectional hinge loss, one loop per negative.
double hinge_oracle(const std::vector<RankingTerm>& terms, double alpha);

double cosine_oracle(const Vector& a, const Vector& b);

std::vector<double> softmax_oracle(const std::vector<double>& z);

/// Final hidden state of the LSTM over `tokens`, gate by gate.
std::vector<double> lstm_oracle(const std::vector<TokenId>& tokens, const LstmEncoder& enc);

/// Class distribution of the multi-modal discriminator for an already
/// filtered token list.
std::vector<double> dm_oracle(const Vector& image, const std::vector<TokenId>& tokens,
                              const MultiModalDiscriminator& d);

/// Class distribution of the poem-style discriminator for an already
/// filtered token list.
std::vector<double> dp_oracle(const std::vector<TokenId>& tokens, const PoemStyleDiscriminator& d);

/// Every length-t sequence over v tokens, BOS prepended.
std::vector<std::vector<TokenId>> enumerate_sequences(int v, int t);

} // namespace i2p::testing
