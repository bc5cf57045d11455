#pragma once

#include <map>
#include <vector>

#include "cilbench/exemplar_memory.hpp"
#include "cilbench/model_graph.hpp"

namespace cilbench {

// Unit-norm class prototypes: normalize(mean(normalize(features))).
struct ClassMeans {
    std::map<int, std::vector<double>> by_class;
};

// Divides by the L2 norm in place. A (near-)zero vector is left untouched
// and reported via the return value: false means "stayed at the origin".
bool l2_normalize(std::vector<double>& v);

// Forwards every stored exemplar through the model in inference mode and
// builds one prototype per class. Individual dead (all-zero) feature rows
// add nothing to the mean; a class whose mean itself has zero norm raises
// DataError, since the prototype is undefined and the features collapsed.
ClassMeans compute_class_means(const ModelGraph& model, const ExemplarMemory& memory);

// Nearest prototype by Euclidean distance on the normalized feature; exact
// ties resolve to the lowest class id.
int ncm_predict(const std::vector<double>& feature, const ClassMeans& means);

}  // namespace cilbench
