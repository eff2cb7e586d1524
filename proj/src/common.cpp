#include "i2p/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace i2p {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stage) {
    std::uint64_t z = master + (stage + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double sigmoid(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Vector softmax(const Vector& logits) {
    Vector p = (logits.array() - logits.maxCoeff()).exp();
    return p / p.sum();
}

Vector log_softmax(const Vector& logits) {
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    return logits.array() - lse;
}

int argmax(const Vector& v) {
    int best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) {
            best = static_cast<int>(i);
        }
    }
    return best;
}

void fill_uniform(std::span<double> values, double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : values) {
        v = dist(rng);
    }
}

void fill_gaussian(std::span<double> values, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : values) {
        v = dist(rng);
    }
}

std::size_t parameter_count(const std::vector<ParamBlock>& blocks) {
    std::size_t n = 0;
    for (const auto& b : blocks) {
        n += b.values.size();
    }
    return n;
}

bool all_finite(const std::vector<ParamBlock>& blocks) {
    for (const auto& b : blocks) {
        if (!std::all_of(b.values.begin(), b.values.end(), [](double v) { return std::isfinite(v); })) {
            return false;
        }
    }
    return true;
}

std::uint64_t parameter_hash(const std::vector<ParamBlock>& blocks) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& b : blocks) {
        for (double v : b.values) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof(double));
            for (unsigned char c : bytes) {
                h ^= c;
                h *= 0x100000001b3ULL;
            }
        }
    }
    return h;
}

void axpy(std::vector<ParamBlock>& params, const std::vector<ParamBlock>& grads, double scale) {
    if (params.size() != grads.size()) {
        throw Error("axpy: block count mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].values;
        const auto& g = grads[i].values;
        if (p.size() != g.size()) {
            throw Error("axpy: size mismatch in block " + params[i].name);
        }
        for (std::size_t j = 0; j < p.size(); ++j) {
            p[j] += scale * g[j];
        }
    }
}

void set_zero(std::vector<ParamBlock>& blocks) {
    for (auto& b : blocks) {
        std::fill(b.values.begin(), b.values.end(), 0.0);
    }
}

} // namespace i2p
