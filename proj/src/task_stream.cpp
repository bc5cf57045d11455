#include "cilbench/task_stream.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "cilbench/common.hpp"

namespace cilbench {

TaskStream::TaskStream(std::shared_ptr<const LabeledDataset> dataset, std::vector<Task> tasks,
                       std::vector<int> class_order)
    : dataset_(std::move(dataset)), tasks_(std::move(tasks)), class_order_(std::move(class_order)) {}

const TaskStream::Task& TaskStream::task(int t) const {
    if (t < 1 || t > num_tasks()) throw IndexError("TaskStream: task " + std::to_string(t));
    return tasks_[static_cast<size_t>(t - 1)];
}

const LabeledExample& TaskStream::train_example(int t, size_t i) const {
    const Task& tk = task(t);
    const LabeledExample& ex = dataset_->train[tk.train_indices.at(i)];
    if (observer_) observer_(phase_, t, true, ex.source_index);
    return ex;
}

const LabeledExample& TaskStream::test_example(int t, size_t i) const {
    const Task& tk = task(t);
    const LabeledExample& ex = dataset_->test[tk.test_indices.at(i)];
    if (observer_) observer_(phase_, t, false, ex.source_index);
    return ex;
}

ClassSet TaskStream::classes_through(int t) const {
    ClassSet all;
    for (int i = 1; i <= t; ++i) all.extend(task(i).desc.classes);
    return all;
}

std::string TaskStream::summary_json() const {
    std::ostringstream out;
    out << "{\n  \"class_order\": [";
    for (size_t i = 0; i < class_order_.size(); ++i) out << (i ? "," : "") << class_order_[i];
    out << "],\n  \"tasks\": [\n";
    for (size_t i = 0; i < tasks_.size(); ++i) {
        const Task& t = tasks_[i];
        out << "    {\"index\": " << t.desc.index << ", \"classes\": [";
        const auto& ids = t.desc.classes.ids();
        for (size_t j = 0; j < ids.size(); ++j) out << (j ? "," : "") << ids[j];
        out << "], \"train_count\": " << t.train_indices.size()
            << ", \"test_count\": " << t.test_indices.size() << "}";
        out << (i + 1 < tasks_.size() ? ",\n" : "\n");
    }
    out << "  ]\n}\n";
    return out.str();
}

TaskStream split_classes(std::shared_ptr<const LabeledDataset> dataset, int num_tasks, uint64_t seed) {
    if (num_tasks < 1) throw ConfigError("split_classes: num_tasks must be >= 1");
    std::vector<int> classes = dataset->class_ids();
    int c = static_cast<int>(classes.size());
    if (c < num_tasks) {
        throw ConfigError("split_classes: " + std::to_string(c) + " classes cannot fill " +
                          std::to_string(num_tasks) + " tasks");
    }
    Rng rng(splitmix64(seed ^ 0x7a5c0de1ull));
    rng.shuffle(classes);

    int per_task = (c + num_tasks - 1) / num_tasks;  // ceil
    int last = c - per_task * (num_tasks - 1);
    if (last < 1) {
        throw ConfigError("split_classes: class count " + std::to_string(c) +
                          " leaves an empty final task for num_tasks=" + std::to_string(num_tasks));
    }

    std::vector<TaskStream::Task> tasks(static_cast<size_t>(num_tasks));
    std::map<int, int> class_to_task;
    int cursor = 0;
    for (int t = 0; t < num_tasks; ++t) {
        int take = (t + 1 < num_tasks) ? per_task : last;
        std::vector<int> ids(classes.begin() + cursor, classes.begin() + cursor + take);
        cursor += take;
        for (int id : ids) class_to_task[id] = t;
        tasks[static_cast<size_t>(t)].desc.index = t + 1;
        tasks[static_cast<size_t>(t)].desc.classes = ClassSet(ids);
    }
    for (size_t i = 0; i < dataset->train.size(); ++i) {
        auto it = class_to_task.find(dataset->train[i].label);
        if (it != class_to_task.end()) tasks[static_cast<size_t>(it->second)].train_indices.push_back(i);
    }
    for (size_t i = 0; i < dataset->test.size(); ++i) {
        auto it = class_to_task.find(dataset->test[i].label);
        if (it != class_to_task.end()) tasks[static_cast<size_t>(it->second)].test_indices.push_back(i);
    }
    for (auto& t : tasks) {
        t.desc.sample_count = static_cast<long>(t.train_indices.size());
        if (t.desc.sample_count == 0) {
            throw DataError("split_classes: task " + std::to_string(t.desc.index) + " has no training data");
        }
    }
    return TaskStream(std::move(dataset), std::move(tasks), std::move(classes));
}

PretrainSplit make_pretrain_split(const LabeledDataset& dataset, double heldout_fraction, uint64_t seed) {
    if (heldout_fraction < 0.0 || heldout_fraction >= 1.0) {
        throw ConfigError("make_pretrain_split: holdout fraction must lie in [0,1)");
    }
    std::vector<int> classes = dataset.class_ids();
    int hold = static_cast<int>(heldout_fraction * static_cast<double>(classes.size()));
    Rng rng(splitmix64(seed ^ 0x9e7ba11ull));
    rng.shuffle(classes);

    PretrainSplit out;
    out.pretrain_classes.assign(classes.begin(), classes.begin() + hold);
    out.cil_classes.assign(classes.begin() + hold, classes.end());
    out.pretrain = dataset.restrict_to(out.pretrain_classes);
    for (int id : out.pretrain_classes) {
        if (std::find(out.cil_classes.begin(), out.cil_classes.end(), id) != out.cil_classes.end()) {
            throw DataError("make_pretrain_split: internal overlap between pretrain and CIL classes");
        }
    }
    return out;
}

}  // namespace cilbench
