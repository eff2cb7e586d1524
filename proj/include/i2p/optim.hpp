#pragma once

#include "i2p/common.hpp"

#include <string>
#include <vector>

namespace i2p {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

/// Gradient-descent step over parameter blocks. `direction` is +1 for ascent
/// (policy gradient) and -1 for descent (losses).
class Optimizer {
  public:
    Optimizer(OptimizerKind kind, double lr, double clip_norm = 0.0);

    void step(std::vector<ParamBlock>& params, const std::vector<ParamBlock>& grads, double direction = -1.0);

    double lr() const { return lr_; }

  private:
    OptimizerKind kind_;
    double lr_;
    double clip_norm_;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    long t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

} // namespace i2p
