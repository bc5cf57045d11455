#pragma once

#include <string>

#include "cilbench/model_graph.hpp"

namespace cilbench {

// Binary weights container. Layout: "CILW" magic, then a payload of
// (version, meta JSON, per-layer records with float32 parameter blocks),
// then a CRC-32 of the payload. The container stores the full graph
// structure, so pruned models reload with their surgically altered shapes.
void save_weights(const ModelGraph& model, const std::string& path);
ModelGraph load_weights(const std::string& path);

// Copies backbone parameters (and batchnorm running statistics) from a saved
// container into `model`, matching layers by name. The classifier head is
// skipped. Throws naming the first layer whose shapes disagree or which is
// missing from the container.
void load_pretrained(ModelGraph& model, const std::string& path);

}  // namespace cilbench
