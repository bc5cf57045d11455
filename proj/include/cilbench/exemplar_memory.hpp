#pragma once

#include <map>
#include <vector>

#include "cilbench/dataset.hpp"
#include "cilbench/metrics.hpp"

namespace cilbench {

// Replay buffer size scaled proportionally to the training-set size:
// round(base_size * train_count / base_train_count).
long scale_buffer(long base_size, long base_train_count, long train_count);

// Indices of the `budget_per_class` features closest (L2) to the arithmetic
// mean of all provided features, ascending by distance, ties by ascending
// input index. When the budget exceeds the population, all indices are
// returned (distance-sorted) and *truncated is set false.
std::vector<int> select_exemplars(const std::vector<std::vector<double>>& features,
                                  int budget_per_class, bool* truncated = nullptr);

// Fixed-capacity exemplar store with per-class lists kept in selection-rank
// order (closest to the class mean first).
class ExemplarMemory {
public:
    explicit ExemplarMemory(long budget) : budget_(budget) {}

    long budget() const { return budget_; }
    long total_stored() const;
    int num_classes() const { return static_cast<int>(per_class_.size()); }
    bool has_class(int cls) const { return per_class_.count(cls) != 0; }
    const std::vector<LabeledExample>& exemplars(int cls) const;
    std::vector<int> stored_classes() const;

    // Candidates for one new class: examples with matching features, both in
    // source-index order.
    struct ClassCandidates {
        std::vector<LabeledExample> examples;
        std::vector<std::vector<double>> features;
    };

    // Rebalances to quota = floor(budget / total_seen_classes): truncates
    // existing classes to the quota (keeping lowest-rank exemplars) and
    // fills each new class via select_exemplars. Throws ConfigError when the
    // quota would be zero.
    void update(const std::map<int, ClassCandidates>& new_classes, int total_seen_classes);

    // Flat view over every stored exemplar (class-ordered, rank-ordered).
    std::vector<const LabeledExample*> all() const;

private:
    long budget_;
    std::map<int, std::vector<LabeledExample>> per_class_;
};

}  // namespace cilbench
