#include "cilbench/metrics.hpp"

#include <algorithm>
#include <sstream>

#include "cilbench/common.hpp"

namespace cilbench {

ClassSet::ClassSet(std::vector<int> ids) : ids_(std::move(ids)) {
    std::vector<int> sorted = ids_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ConfigError("ClassSet: duplicate class id");
    }
}

bool ClassSet::contains(int id) const {
    return std::find(ids_.begin(), ids_.end(), id) != ids_.end();
}

bool ClassSet::disjoint_with(const ClassSet& other) const {
    for (int id : other.ids_) {
        if (contains(id)) return false;
    }
    return true;
}

void ClassSet::extend(const ClassSet& other) {
    if (!disjoint_with(other)) throw ConfigError("ClassSet: extension overlaps existing ids");
    ids_.insert(ids_.end(), other.ids_.begin(), other.ids_.end());
}

void AccuracyMatrix::record(int after_task, int on_task, long correct, long total) {
    if (on_task < 1 || after_task < on_task) {
        throw IndexError("AccuracyMatrix: need 1 <= on_task <= after_task, got (" +
                         std::to_string(after_task) + "," + std::to_string(on_task) + ")");
    }
    if (total <= 0 || correct < 0 || correct > total) {
        throw IndexError("AccuracyMatrix: counts must satisfy 0 <= correct <= total, total > 0");
    }
    auto key = std::make_pair(after_task, on_task);
    if (entries_.count(key)) {
        throw ImmutabilityError("AccuracyMatrix: entry (" + std::to_string(after_task) + "," +
                                std::to_string(on_task) + ") already recorded");
    }
    entries_[key] = AccuracyCell{correct, total};
    max_task_ = std::max(max_task_, after_task);
}

bool AccuracyMatrix::has(int after_task, int on_task) const {
    return entries_.count(std::make_pair(after_task, on_task)) != 0;
}

AccuracyCell AccuracyMatrix::cell(int after_task, int on_task) const {
    auto it = entries_.find(std::make_pair(after_task, on_task));
    if (it == entries_.end()) {
        throw MissingDataError("AccuracyMatrix: entry (" + std::to_string(after_task) + "," +
                               std::to_string(on_task) + ") missing");
    }
    return it->second;
}

double AccuracyMatrix::value(int after_task, int on_task) const {
    return cell(after_task, on_task).fraction();
}

double AccuracyMatrix::compute_acc() const {
    int t_final = max_task_;
    if (t_final < 1) throw MissingDataError("AccuracyMatrix: empty matrix");
    double sum = 0.0;
    for (int t = 1; t <= t_final; ++t) sum += value(t_final, t);
    return sum / static_cast<double>(t_final);
}

double AccuracyMatrix::compute_bwt() const {
    int t_final = max_task_;
    if (t_final < 2) throw MissingDataError("AccuracyMatrix: BWT undefined for T < 2");
    double sum = 0.0;
    for (int t = 1; t < t_final; ++t) sum += value(t_final, t) - value(t, t);
    return sum / static_cast<double>(t_final - 1);
}

double AccuracyMatrix::taskwise_forgetting(int t) const {
    int t_final = max_task_;
    if (t >= t_final || t < 1) {
        throw IndexError("AccuracyMatrix: forgetting undefined for t=" + std::to_string(t) +
                         " with T=" + std::to_string(t_final));
    }
    return value(t_final, t) - value(t, t);
}

double AccuracyMatrix::row_mean(int i) const {
    if (i < 1 || i > max_task_) throw IndexError("AccuracyMatrix: row " + std::to_string(i));
    double sum = 0.0;
    for (int t = 1; t <= i; ++t) sum += value(i, t);
    return sum / static_cast<double>(i);
}

std::string AccuracyMatrix::to_csv() const {
    std::ostringstream out;
    out << "after_task,on_task,correct,total\n";
    for (const auto& [key, cellv] : entries_) {
        out << key.first << "," << key.second << "," << cellv.correct << "," << cellv.total << "\n";
    }
    return out.str();
}

AccuracyMatrix AccuracyMatrix::from_csv(const std::string& text) {
    AccuracyMatrix m;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw DataError("AccuracyMatrix CSV: empty input");
    if (line != "after_task,on_task,correct,total") {
        throw DataError("AccuracyMatrix CSV: bad header '" + line + "'");
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        long vals[4];
        for (int i = 0; i < 4; ++i) {
            if (!std::getline(ls, field, ',')) throw DataError("AccuracyMatrix CSV: short row '" + line + "'");
            try {
                size_t used = 0;
                vals[i] = std::stol(field, &used);
                if (used != field.size()) throw std::invalid_argument(field);
            } catch (const std::exception&) {
                throw DataError("AccuracyMatrix CSV: bad number '" + field + "' in row '" + line + "'");
            }
        }
        m.record(static_cast<int>(vals[0]), static_cast<int>(vals[1]), vals[2], vals[3]);
    }
    return m;
}

}  // namespace cilbench
