#include "cilbench/optimizer.hpp"

#include <cmath>

namespace cilbench {

SgdOptimizer::SgdOptimizer(ModelGraph& model, SgdOptions opts) : model_(&model), opts_(opts) {
    if (!(opts_.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (opts_.momentum < 0.0 || opts_.momentum >= 1.0)
        throw ConfigError("momentum must lie in [0, 1)");
    for (const auto& p : model.parameters()) velocity_.emplace_back(p.value->shape);
}

double SgdOptimizer::lr_at(int epoch) const {
    const int e = std::max(0, std::min(epoch, opts_.total_epochs - 1));
    switch (opts_.schedule) {
        case LrSchedule::Constant:
            return opts_.lr;
        case LrSchedule::Cosine: {
            const int span = std::max(1, opts_.total_epochs - 1);
            const double cos01 = 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(e) / span));
            const double floor = opts_.cosine_floor * opts_.lr;
            return floor + (opts_.lr - floor) * cos01;
        }
        case LrSchedule::Step:
            return opts_.lr * std::pow(opts_.step_gamma, e / std::max(1, opts_.step_size));
    }
    return opts_.lr;
}

void SgdOptimizer::step(int epoch) {
    auto params = model_->parameters();
    if (params.size() != velocity_.size())
        throw TrainingError("optimizer is stale: parameter list changed since construction");
    const double lr = lr_at(epoch);
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& v = velocity_[i];
        Tensor& p = *params[i].value;
        const Tensor& g = *params[i].grad;
        if (v.shape != p.shape)
            throw TrainingError("optimizer is stale: parameter shape changed");
        for (size_t j = 0; j < p.numel(); ++j) {
            v[j] = opts_.momentum * v[j] + g[j];
            p[j] -= lr * v[j];
        }
    }
}

}  // namespace cilbench
