#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace cilbench {

// Ordered set of global class ids. Ordering is the insertion order and is
// preserved through serialization.
class ClassSet {
public:
    ClassSet() = default;
    explicit ClassSet(std::vector<int> ids);

    const std::vector<int>& ids() const { return ids_; }
    size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }
    bool contains(int id) const;
    bool disjoint_with(const ClassSet& other) const;

    // Appends the other set's ids; throws ConfigError on overlap.
    void extend(const ClassSet& other);

private:
    std::vector<int> ids_;
};

struct TaskDescriptor {
    int index = 0;        // 1-based task number
    ClassSet classes;
    long sample_count = 0;  // training sample count
};

// Per-cell accuracy is stored as an exact (correct, total) pair and reduced
// to a fraction only when a metric is computed.
struct AccuracyCell {
    long correct = 0;
    long total = 0;
    double fraction() const { return static_cast<double>(correct) / static_cast<double>(total); }
};

// Lower-triangular record a_{i,t}: accuracy on task t after training through
// task i. Cells are write-once.
class AccuracyMatrix {
public:
    void record(int after_task, int on_task, long correct, long total);

    bool has(int after_task, int on_task) const;
    AccuracyCell cell(int after_task, int on_task) const;
    double value(int after_task, int on_task) const;

    // Largest task index that appears as after_task; 0 when empty.
    int max_task() const { return max_task_; }

    // (1/T) * sum_t a_{T,t}; requires the full final row.
    double compute_acc() const;

    // (1/(T-1)) * sum_{t<T} (a_{T,t} - a_{t,t}); requires T >= 2, the
    // diagonal, and the final row. Positive values mean beneficial transfer.
    double compute_bwt() const;

    // a_{T,t} - a_{t,t} for a single task t < T.
    double taskwise_forgetting(int t) const;

    // Mean accuracy over tasks 1..i at row i: (1/i) * sum_{t<=i} a_{i,t}.
    double row_mean(int i) const;

    // CSV: header `after_task,on_task,correct,total`, rows ordered by
    // (after_task, on_task).
    std::string to_csv() const;
    static AccuracyMatrix from_csv(const std::string& text);

    const std::map<std::pair<int, int>, AccuracyCell>& entries() const { return entries_; }

private:
    std::map<std::pair<int, int>, AccuracyCell> entries_;  // key: (after_task, on_task)
    int max_task_ = 0;
};

}  // namespace cilbench
