#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cilbench {

// Error categories used across the library. Each maps to one failure
// contract (bad config vs. bad data vs. numerical failure), so callers
// can catch selectively.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IndexError : std::runtime_error {
    explicit IndexError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ImmutabilityError : std::runtime_error {
    explicit ImmutabilityError(const std::string& msg) : std::runtime_error(msg) {}
};
struct MissingDataError : std::runtime_error {
    explicit MissingDataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

uint64_t splitmix64(uint64_t x);

// Deterministic RNG (xorshift* core). Distributions are hand-rolled so
// that sampled sequences do not depend on the standard library's
// distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(splitmix64(seed)), carry_valid_(false), carry_(0.0) {}

    // Derive an independent stream for a named purpose.
    Rng fork(uint64_t tag) const { return Rng(state_ ^ splitmix64(tag ^ 0x9e3779b97f4a7c15ull)); }

    uint64_t next_u64();
    double uniform();                      // [0, 1)
    double uniform(double lo, double hi);  // [lo, hi)
    double normal();                       // standard normal, Box-Muller
    int uniform_int(int lo, int hi);       // inclusive on both ends

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(0, i);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

private:
    uint64_t state_;
    bool carry_valid_;
    double carry_;
};

// FNV-1a over raw bytes; used for parameter checksums in the event log.
uint64_t fnv1a(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull);

// CRC-32 (IEEE, reflected) for the weights container integrity check.
uint32_t crc32(const void* data, size_t len, uint32_t crc = 0);

std::string format_double(double v);  // shortest round-trip-ish decimal, stable
std::string to_hex(uint64_t v);       // fixed-width 16-digit lowercase hex

}  // namespace cilbench
