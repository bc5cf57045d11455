#pragma once

#include "cilbench/experiment_config.hpp"
#include "cilbench/model_graph.hpp"

namespace cilbench {

struct SgdOptions {
    double lr = 0.002;
    double momentum = 0.9;
    LrSchedule schedule = LrSchedule::Cosine;
    double cosine_floor = 0.05;  // final lr as a fraction of the initial lr
    int step_size = 10;
    double step_gamma = 0.1;
    int total_epochs = 1;

    static SgdOptions from(const ExperimentConfig& c, int epochs) {
        SgdOptions o;
        o.lr = c.lr;
        o.momentum = c.momentum;
        o.schedule = c.schedule;
        o.cosine_floor = c.cosine_floor;
        o.step_size = c.step_size;
        o.step_gamma = c.step_gamma;
        o.total_epochs = epochs;
        return o;
    }
};

// SGD with heavy-ball momentum: v <- momentum*v + g; p <- p - lr_e*v.
// Velocity buffers are bound to the model's current parameter list, so a
// fresh optimizer must be constructed after any head extension or surgery.
class SgdOptimizer {
public:
    SgdOptimizer(ModelGraph& model, SgdOptions opts);

    double lr_at(int epoch) const;  // 0-based; clamped into [0, total_epochs)
    void step(int epoch);

private:
    ModelGraph* model_;
    SgdOptions opts_;
    std::vector<Tensor> velocity_;
};

}  // namespace cilbench
