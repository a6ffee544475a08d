#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace wavecrn {

// Error classes map onto CLI exit codes: validation -> 1, I/O -> 2, numeric -> 3.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/argument/config problems.
struct dim_error : error {
    using error::error;
};
struct config_error : error {
    using error::error;
};
// Missing forward cache and similar misuse.
struct state_error : error {
    using error::error;
};
// Filesystem and file-format problems.
struct io_error : error {
    using error::error;
};
struct format_error : io_error {
    using io_error::io_error;
};
// Non-finite values where finite ones are required.
struct numeric_error : error {
    using error::error;
};

// Global cap on intra-op parallelism. Defaults to 1: kernels are deterministic
// at any thread count (parallelism is over independent outputs, each reduced
// in a fixed order), but single-threaded is the documented reproducibility mode.
inline std::atomic<int>& thread_cap() {
    static std::atomic<int> cap{1};
    return cap;
}

inline int max_threads() { return thread_cap().load(std::memory_order_relaxed); }

inline void set_max_threads(int n) {
    if (n < 1) throw config_error("thread count must be >= 1, got " + std::to_string(n));
    thread_cap().store(n, std::memory_order_relaxed);
}

// Counts gemm invocations. The recurrent scan phase must never touch it.
inline std::atomic<std::uint64_t>& matmul_calls() {
    static std::atomic<std::uint64_t> n{0};
    return n;
}

// Seeded generator with hand-rolled value mappings so streams are byte-stable
// across standard library implementations (std distributions are not).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

    std::uint32_t next_u32() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(gen_()) * (1.0 / 4294967296.0); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [lo, hi] inclusive
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(uniform() * static_cast<double>(hi - lo + 1));
    }

    // Box-Muller; second value cached
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-12) u1 = 1e-12;
        double mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(6.283185307179586 * u2);
        have_spare_ = true;
        return mag * std::cos(6.283185307179586 * u2);
    }

  private:
    std::mt19937 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace wavecrn
