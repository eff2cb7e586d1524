#include "i2p/optim.hpp"

#include <cmath>

namespace i2p {

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "sgd") {
        return OptimizerKind::sgd;
    }
    if (name == "adam") {
        return OptimizerKind::adam;
    }
    throw Error("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string to_string(OptimizerKind kind) {
    return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

Optimizer::Optimizer(OptimizerKind kind, double lr, double clip_norm) : kind_(kind), lr_(lr), clip_norm_(clip_norm) {
    if (!(lr >= 0.0) || !std::isfinite(lr)) {
        throw Error("learning rate must be finite and >= 0");
    }
}

void Optimizer::step(std::vector<ParamBlock>& params, const std::vector<ParamBlock>& grads, double direction) {
    if (params.size() != grads.size()) {
        throw Error("optimizer: block count mismatch");
    }
    double scale = 1.0;
    if (clip_norm_ > 0.0) {
        double sq = 0.0;
        for (const auto& g : grads) {
            for (double v : g.values) {
                sq += v * v;
            }
        }
        const double norm = std::sqrt(sq);
        if (norm > clip_norm_) {
            scale = clip_norm_ / norm;
        }
    }
    if (kind_ == OptimizerKind::sgd) {
        axpy(params, grads, direction * lr_ * scale);
        return;
    }
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.values.size(), 0.0);
            v_.emplace_back(p.values.size(), 0.0);
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t b = 0; b < params.size(); ++b) {
        auto& p = params[b].values;
        const auto& g = grads[b].values;
        auto& m = m_[b];
        auto& v = v_[b];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i] * scale;
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            p[i] += direction * lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

} // namespace i2p
