#include "cilbench/ncm.hpp"

#include <cmath>

namespace cilbench {

bool l2_normalize(std::vector<double>& v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    const double n = std::sqrt(sq);
    if (n < 1e-12) return false;
    for (double& x : v) x /= n;
    return true;
}

ClassMeans compute_class_means(const ModelGraph& model, const ExemplarMemory& memory) {
    ClassMeans out;
    for (int cls : memory.stored_classes()) {
        const auto& exs = memory.exemplars(cls);
        std::vector<const LabeledExample*> ptrs;
        ptrs.reserve(exs.size());
        for (const auto& e : exs) ptrs.push_back(&e);

        ForwardResult r = model.forward_eval(stack_batch(ptrs));
        const int N = r.features.shape[0];
        const int F = r.features.shape[1];
        std::vector<double> mean(static_cast<size_t>(F), 0.0);
        for (int i = 0; i < N; ++i) {
            std::vector<double> f(r.features.data.begin() + static_cast<long>(i) * F,
                                  r.features.data.begin() + static_cast<long>(i + 1) * F);
            l2_normalize(f);  // dead feature rows stay zero and add nothing
            for (int j = 0; j < F; ++j) mean[static_cast<size_t>(j)] += f[static_cast<size_t>(j)];
        }
        for (double& m : mean) m /= N;
        if (!l2_normalize(mean))
            throw DataError("class " + std::to_string(cls) +
                            " mean feature has (near-)zero norm; prototype undefined");
        out.by_class[cls] = std::move(mean);
    }
    return out;
}

int ncm_predict(const std::vector<double>& feature, const ClassMeans& means) {
    if (means.by_class.empty()) throw MissingDataError("no class prototypes available");
    std::vector<double> f = feature;
    double sq = 0.0;
    for (double x : f) sq += x * x;
    if (sq > 0.0) {
        const double n = std::sqrt(sq);
        for (double& x : f) x /= n;
    }
    int best = -1;
    double best_d = 0.0;
    for (const auto& [cls, mean] : means.by_class) {
        double d = 0.0;
        for (size_t j = 0; j < f.size(); ++j) {
            const double diff = f[j] - mean[j];
            d += diff * diff;
        }
        if (best < 0 || d < best_d) {  // ties keep the lowest class id
            best = cls;
            best_d = d;
        }
    }
    return best;
}

}  // namespace cilbench
