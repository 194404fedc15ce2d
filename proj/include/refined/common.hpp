#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace refined {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Failure categories. The CLI maps them onto exit codes 2, 3 and 4.
enum class ErrorKind { config, data, numerical };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& code, const std::string& what)
        : std::runtime_error(code + ": " + what), kind_(kind), code_(code) {}

    ErrorKind kind() const noexcept { return kind_; }
    /// Short machine-readable tag, e.g. "DuplicateFeature".
    const std::string& code() const noexcept { return code_; }

private:
    ErrorKind kind_;
    std::string code_;
};

inline Error config_error(const std::string& code, const std::string& what) {
    return Error(ErrorKind::config, code, what);
}
inline Error data_error(const std::string& code, const std::string& what) {
    return Error(ErrorKind::data, code, what);
}
inline Error numerical_error(const std::string& code, const std::string& what) {
    return Error(ErrorKind::numerical, code, what);
}

// ---------------------------------------------------------------------------
// Warnings
//
// Non-fatal conditions (constant features, clamped variances, padded MDS axes)
// go through a process-wide handler. The default prints to stderr; tests swap
// in a collector with ScopedWarningCapture.

using WarningHandler = std::function<void(const std::string&)>;

namespace detail {
inline WarningHandler& warning_handler() {
    static WarningHandler handler = [](const std::string& msg) {
        std::cerr << "warning: " << msg << '\n';
    };
    return handler;
}
inline int& warning_mute_depth() {
    thread_local int depth = 0;
    return depth;
}
}  // namespace detail

inline void warn(const std::string& msg) {
    if (detail::warning_mute_depth() > 0) return;
    if (detail::warning_handler()) detail::warning_handler()(msg);
}

/// Collects warnings for the lifetime of the object.
class ScopedWarningCapture {
public:
    ScopedWarningCapture() : saved_(detail::warning_handler()) {
        detail::warning_handler() = [this](const std::string& m) { messages_.push_back(m); };
    }
    ~ScopedWarningCapture() { detail::warning_handler() = saved_; }
    ScopedWarningCapture(const ScopedWarningCapture&) = delete;
    ScopedWarningCapture& operator=(const ScopedWarningCapture&) = delete;

    const std::vector<std::string>& messages() const { return messages_; }
    bool contains(const std::string& needle) const {
        for (const auto& m : messages_)
            if (m.find(needle) != std::string::npos) return true;
        return false;
    }

private:
    WarningHandler saved_;
    std::vector<std::string> messages_;
};

/// Silences warnings on the current thread (bootstrap replicates, inner loops).
class ScopedWarningMute {
public:
    ScopedWarningMute() { ++detail::warning_mute_depth(); }
    ~ScopedWarningMute() { --detail::warning_mute_depth(); }
    ScopedWarningMute(const ScopedWarningMute&) = delete;
    ScopedWarningMute& operator=(const ScopedWarningMute&) = delete;
};

// ---------------------------------------------------------------------------
// Random numbers
//
// All stochastic routines take explicit seeds. Per-item streams are derived
// with splitmix64 so results do not depend on scheduling order.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), rejection sampled.
    std::size_t index(std::size_t n) {
        if (n == 0) throw std::invalid_argument("Rng::index: empty range");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t r;
        do { r = engine_(); } while (r >= limit);
        return static_cast<std::size_t>(r % n);
    }

    /// Standard normal via Box-Muller (no cached second variate, so the stream
    /// position only depends on the number of calls).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    /// Gamma(shape, scale = 1), Marsaglia-Tsang.
    double gamma(double shape) {
        if (shape < 1.0) {
            const double u = uniform();
            return gamma(shape + 1.0) * std::pow(u > 0.0 ? u : 0x1.0p-53, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

/// 64-bit FNV-1a, used for config hashes and bootstrap index fingerprints.
inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace refined
