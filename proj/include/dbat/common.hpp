#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dbat {

// Error taxonomy. Every failure mode named by the library throws one of
// these; the CLI maps them to distinct exit codes.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ArgumentError : std::runtime_error {
    explicit ArgumentError(const std::string& msg) : std::runtime_error(msg) {}
};
struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};
struct EvaluationError : std::runtime_error {
    explicit EvaluationError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
// Degenerate inputs: all-ignored batches, constant activation layers.
struct DegenerateError : std::runtime_error {
    explicit DegenerateError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class DType { f32, f64 };

inline const char* dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }

// Values of f32 tensors live on the float grid even though buffers hold
// doubles; this keeps one kernel code path while making f32 checkpoints
// lossless round-trips.
inline double round_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    // splitmix64 finalizer over the combined word
    uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Kernel parallelism cap; reads DBAT_THREADS once on first use.
int max_threads();

}  // namespace dbat
