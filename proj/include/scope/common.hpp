#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace scope {

inline constexpr const char* kVersion = "0.1.0";

// ============================================================================
// Error taxonomy
// ============================================================================

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct RenderError : Error { using Error::Error; };
struct DegenerateInputError : Error { using Error::Error; };
struct RobustFailureError : Error { using Error::Error; };

// ============================================================================
// Deterministic RNG
// ============================================================================

// splitmix64, used both as a seed deriver and as the core generator. Keeping
// the generator in-house makes sampled streams reproducible independent of
// the standard library's distribution implementations.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derive an independent stream seed from a base seed and stream indices.
inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t s = base;
    splitmix64(s);
    s ^= 0x2545f4914f6cdd1dULL * (a + 1);
    splitmix64(s);
    s ^= 0x9e3779b97f4a7c15ULL * (b + 1);
    splitmix64(s);
    s ^= 0xd6e8feb86659fd93ULL * (c + 1);
    return splitmix64(s);
}

class Rng {
public:
    explicit Rng(uint64_t seed = 0x5eed) : state_(seed ? seed : 0x5eed) {
        // warm up so that small seeds decorrelate quickly
        splitmix64(state_);
        splitmix64(state_);
    }

    uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

    // standard normal via Box-Muller (cached pair)
    double normal() {
        if (has_cache_) {
            has_cache_ = false;
            return cache_;
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cache_ = r * std::sin(a);
        has_cache_ = true;
        return r * std::cos(a);
    }

private:
    uint64_t state_;
    double cache_ = 0.0;
    bool has_cache_ = false;
};

// ============================================================================
// CRC32 (PNG and dataset checksums)
// ============================================================================

inline uint32_t crc32(const void* bytes, size_t n, uint32_t crc = 0) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    const auto* p = static_cast<const unsigned char*>(bytes);
    crc ^= 0xffffffffu;
    for (size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xffu] ^ (crc >> 8);
    return crc ^ 0xffffffffu;
}

// ============================================================================
// Timing
// ============================================================================

class Timer {
public:
    Timer() : start_(clock::now()) {}
    void reset() { start_ = clock::now(); }
    double seconds() const {
        return std::chrono::duration<double>(clock::now() - start_).count();
    }

private:
    using clock = std::chrono::steady_clock;
    clock::time_point start_;
};

// ============================================================================
// Worker parallelism (capped by SCOPE_THREADS)
// ============================================================================

inline int max_threads() {
    static const int n = [] {
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw < 1) hw = 1;
        if (const char* env = std::getenv("SCOPE_THREADS")) {
            int cap = std::atoi(env);
            if (cap >= 1) hw = std::min(hw, cap);
        }
        return hw;
    }();
    return n;
}

// Static-partition parallel for. Each index is processed by exactly one
// worker with a contiguous range, so results are deterministic for any
// thread count as long as the body writes disjoint outputs.
inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
    const int threads = static_cast<int>(std::min<int64_t>(max_threads(), n));
    if (threads <= 1 || n < 2) {
        if (n > 0) body(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads - 1);
    const int64_t chunk = (n + threads - 1) / threads;
    for (int t = 1; t < threads; ++t) {
        int64_t lo = t * chunk, hi = std::min<int64_t>(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    body(0, std::min<int64_t>(n, chunk));
    for (auto& th : pool) th.join();
}

// ============================================================================
// Incident log (rejected updates, aborted steps)
// ============================================================================

class IncidentLog {
public:
    void record(const std::string& what) {
        std::lock_guard<std::mutex> lock(mu_);
        entries_.push_back(what);
    }
    std::vector<std::string> entries() const {
        std::lock_guard<std::mutex> lock(mu_);
        return entries_;
    }
    size_t size() const {
        std::lock_guard<std::mutex> lock(mu_);
        return entries_.size();
    }

private:
    mutable std::mutex mu_;
    std::vector<std::string> entries_;
};

inline bool all_finite(const float* p, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

inline bool all_finite(const double* p, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

}  // namespace scope
