#include "cilbench/exemplar_memory.hpp"

#include <algorithm>
#include <cmath>

#include "cilbench/common.hpp"

namespace cilbench {

long scale_buffer(long base_size, long base_train_count, long train_count) {
    if (base_size < 1 || base_train_count < 1 || train_count < 1) {
        throw ConfigError("scale_buffer: all inputs must be positive");
    }
    double scaled = static_cast<double>(base_size) * static_cast<double>(train_count) /
                    static_cast<double>(base_train_count);
    return std::max(1L, std::lround(scaled));
}

std::vector<int> select_exemplars(const std::vector<std::vector<double>>& features,
                                  int budget_per_class, bool* truncated) {
    if (features.empty()) throw DataError("select_exemplars: no candidate features");
    if (budget_per_class < 1) throw ConfigError("select_exemplars: budget must be >= 1");

    size_t dim = features[0].size();
    std::vector<double> mean(dim, 0.0);
    for (const auto& f : features) {
        if (f.size() != dim) throw ShapeError("select_exemplars: ragged feature vectors");
        for (size_t d = 0; d < dim; ++d) mean[d] += f[d];
    }
    for (double& m : mean) m /= static_cast<double>(features.size());

    std::vector<std::pair<double, int>> order;
    order.reserve(features.size());
    for (size_t i = 0; i < features.size(); ++i) {
        double dist2 = 0.0;
        for (size_t d = 0; d < dim; ++d) {
            double diff = features[i][d] - mean[d];
            dist2 += diff * diff;
        }
        order.emplace_back(dist2, static_cast<int>(i));
    }
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return a.second < b.second;
    });

    int take = std::min<int>(budget_per_class, static_cast<int>(order.size()));
    if (truncated) *truncated = take == budget_per_class && budget_per_class <= static_cast<int>(order.size());
    std::vector<int> out;
    out.reserve(static_cast<size_t>(take));
    for (int i = 0; i < take; ++i) out.push_back(order[static_cast<size_t>(i)].second);
    return out;
}

long ExemplarMemory::total_stored() const {
    long n = 0;
    for (const auto& [cls, list] : per_class_) n += static_cast<long>(list.size());
    return n;
}

const std::vector<LabeledExample>& ExemplarMemory::exemplars(int cls) const {
    auto it = per_class_.find(cls);
    if (it == per_class_.end()) throw MissingDataError("ExemplarMemory: no exemplars for class " + std::to_string(cls));
    return it->second;
}

std::vector<int> ExemplarMemory::stored_classes() const {
    std::vector<int> out;
    out.reserve(per_class_.size());
    for (const auto& [cls, list] : per_class_) out.push_back(cls);
    return out;
}

void ExemplarMemory::update(const std::map<int, ClassCandidates>& new_classes, int total_seen_classes) {
    if (total_seen_classes < 1) throw ConfigError("ExemplarMemory: no seen classes");
    long quota = budget_ / total_seen_classes;
    if (quota < 1) {
        throw ConfigError("ExemplarMemory: budget " + std::to_string(budget_) + " cannot cover " +
                          std::to_string(total_seen_classes) + " classes (quota 0)");
    }

    // Existing classes keep their lowest-rank exemplars.
    for (auto& [cls, list] : per_class_) {
        if (static_cast<long>(list.size()) > quota) list.resize(static_cast<size_t>(quota));
    }

    for (const auto& [cls, cand] : new_classes) {
        if (per_class_.count(cls)) throw ConfigError("ExemplarMemory: class " + std::to_string(cls) + " already stored");
        if (cand.examples.size() != cand.features.size()) {
            throw ShapeError("ExemplarMemory: candidate examples/features size mismatch");
        }
        for (const auto& ex : cand.examples) {
            if (ex.label != cls) throw DataError("ExemplarMemory: candidate label mismatch for class " + std::to_string(cls));
        }
        std::vector<int> chosen = select_exemplars(cand.features, static_cast<int>(quota));
        std::vector<LabeledExample> list;
        list.reserve(chosen.size());
        for (int idx : chosen) list.push_back(cand.examples[static_cast<size_t>(idx)]);
        per_class_[cls] = std::move(list);
    }

    if (total_stored() > budget_) throw DataError("ExemplarMemory: budget exceeded after update");
}

std::vector<const LabeledExample*> ExemplarMemory::all() const {
    std::vector<const LabeledExample*> out;
    for (const auto& [cls, list] : per_class_) {
        for (const auto& ex : list) out.push_back(&ex);
    }
    return out;
}

}  // namespace cilbench
