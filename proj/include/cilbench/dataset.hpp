#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cilbench/tensor.hpp"

namespace cilbench {

struct LabeledExample {
    Tensor input;           // C x H x W, standardized
    int label = -1;         // global class id
    long source_index = -1; // stable index into the origin dataset
};

// In-memory labeled image dataset with train/test splits. Examples are
// already standardized with the constants stored alongside.
class LabeledDataset {
public:
    std::string name;
    int channels = 3;
    int image_size = 0;
    double norm_mean = 0.5;
    double norm_std = 0.5;
    std::vector<LabeledExample> train;
    std::vector<LabeledExample> test;

    std::vector<int> class_ids() const;  // sorted distinct labels over both splits
    long train_count() const { return static_cast<long>(train.size()); }

    // New dataset containing only examples whose label is in `classes`.
    LabeledDataset restrict_to(const std::vector<int>& classes) const;
};

// Procedural image dataset. Every example is a deterministic function of
// (family_seed, class, instance), so splits are reproducible regardless of
// generation order. Classes share primitive structure (blobs, gratings) but
// differ in placement, color, and orientation.
LabeledDataset make_synthetic_dataset(int num_classes, int image_size, int train_per_class,
                                      int test_per_class, uint64_t family_seed,
                                      double norm_mean, double norm_std);

// Stacks per-example C x H x W inputs into one N x C x H x W batch.
Tensor stack_batch(const std::vector<const LabeledExample*>& items);

// Array-backed dataset directory: `manifest.csv` with records
// `path_or_index,label,split`, raw float32 examples in `data.bin`
// (record-major C x H x W, pixel values in [0,1]), and `meta.txt` with
// `channels`, `image_size` lines.
LabeledDataset load_array_dataset(const std::string& dir, double norm_mean, double norm_std);
void write_array_dataset(const std::string& dir, const LabeledDataset& ds);

}  // namespace cilbench
