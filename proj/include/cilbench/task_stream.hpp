#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cilbench/dataset.hpp"
#include "cilbench/metrics.hpp"

namespace cilbench {

// Called on every example fetch when installed: (phase, task 1-based,
// train split?, source index). Used by the protocol-isolation tests.
using AccessObserver = std::function<void(const std::string& phase, int task, bool train_split, long source_index)>;

// Ordered class-disjoint task sequence over a dataset. Examples are fetched
// through accessors so data access can be traced.
class TaskStream {
public:
    struct Task {
        TaskDescriptor desc;
        std::vector<size_t> train_indices;  // into dataset().train
        std::vector<size_t> test_indices;   // into dataset().test
    };

    TaskStream(std::shared_ptr<const LabeledDataset> dataset, std::vector<Task> tasks,
               std::vector<int> class_order);

    int num_tasks() const { return static_cast<int>(tasks_.size()); }
    const Task& task(int t) const;                   // 1-based
    const TaskDescriptor& descriptor(int t) const { return task(t).desc; }
    const LabeledDataset& dataset() const { return *dataset_; }
    const std::vector<int>& class_order() const { return class_order_; }

    size_t train_size(int t) const { return task(t).train_indices.size(); }
    size_t test_size(int t) const { return task(t).test_indices.size(); }
    const LabeledExample& train_example(int t, size_t i) const;
    const LabeledExample& test_example(int t, size_t i) const;

    // All classes across tasks 1..t in task order.
    ClassSet classes_through(int t) const;

    void set_access_observer(AccessObserver obs) { observer_ = std::move(obs); }
    void set_phase(std::string phase) { phase_ = std::move(phase); }
    const std::string& phase() const { return phase_; }

    // JSON summary: class_order, per-task class lists and counts.
    std::string summary_json() const;

private:
    std::shared_ptr<const LabeledDataset> dataset_;
    std::vector<Task> tasks_;
    std::vector<int> class_order_;
    AccessObserver observer_;
    std::string phase_ = "idle";
};

// Shuffles the dataset's classes with `seed` and partitions them into
// `num_tasks` contiguous groups: the first num_tasks-1 take ceil(C/T)
// classes, the last takes the remainder.
TaskStream split_classes(std::shared_ptr<const LabeledDataset> dataset, int num_tasks, uint64_t seed);

struct PretrainSplit {
    LabeledDataset pretrain;       // examples of held-out classes
    std::vector<int> cil_classes;  // disjoint universe for the CIL stream
    std::vector<int> pretrain_classes;
};

// Holds out floor(fraction * C) classes (seeded shuffle) as a proxy
// pretraining dataset; the rest form the CIL class universe.
PretrainSplit make_pretrain_split(const LabeledDataset& dataset, double heldout_fraction, uint64_t seed);

}  // namespace cilbench
