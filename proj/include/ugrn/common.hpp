#pragma once

// Errors, hashing, number formatting and seeded sampling helpers shared by
// every ugrn module.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <exception>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <thread>
#include <vector>

namespace ugrn {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Bad input from the caller: malformed files, invalid configuration,
/// unknown genes. Maps to CLI exit code 1.
class UserError : public Error {
  public:
    using Error::Error;
};

/// Tensor shapes that cannot be combined by a primitive.
class ShapeError : public UserError {
  public:
    using UserError::UserError;
};

/// The backend lacks a capability (attention on the linear backend, ...).
class UnsupportedError : public UserError {
  public:
    using UserError::UserError;
};

/// A broken internal guarantee. Maps to CLI exit code 2.
class InvariantError : public Error {
  public:
    using Error::Error;
};

inline void require(bool ok, const std::string& what) {
    if (!ok) throw UserError(what);
}

inline void ensure(bool ok, const std::string& what) {
    if (!ok) throw InvariantError(what);
}

// ---------------------------------------------------------------------------
// Hashing (FNV-1a 64). Used for vocabulary, panel, checkpoint and manifest
// fingerprints, so it must be stable across platforms and builds.

class Fnv1a {
  public:
    Fnv1a& bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t k = 0; k < n; ++k) {
            state_ ^= p[k];
            state_ *= 0x100000001b3ULL;
        }
        return *this;
    }
    Fnv1a& str(std::string_view s) {
        bytes(s.data(), s.size());
        const char sep = '\x1f';
        return bytes(&sep, 1);
    }
    Fnv1a& u64(std::uint64_t v) {
        unsigned char b[8];
        for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
        return bytes(b, 8);
    }
    Fnv1a& f64(double v) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, sizeof(v));
        return u64(bits);
    }
    std::uint64_t value() const { return state_; }
    std::string hex() const { return to_hex(state_); }

    static std::string to_hex(std::uint64_t v) {
        static constexpr char digits[] = "0123456789abcdef";
        std::string out(16, '0');
        for (int k = 15; k >= 0; --k) {
            out[static_cast<std::size_t>(k)] = digits[v & 0xf];
            v >>= 4;
        }
        return out;
    }

  private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string hash_text(std::string_view s) { return Fnv1a{}.str(s).hex(); }

inline std::string hash_symbols(std::span<const std::string> symbols) {
    Fnv1a h;
    h.u64(symbols.size());
    for (const auto& s : symbols) h.str(s);
    return h.hex();
}

// ---------------------------------------------------------------------------
// Shortest round-trip decimal formatting for doubles.

inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    ensure(res.ec == std::errc{}, "to_chars failed");
    return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view s, double& out) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

inline std::vector<std::string> split(std::string_view line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(line.substr(start));
            break;
        }
        out.emplace_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline std::string trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return std::string(s);
}

// ---------------------------------------------------------------------------
// Seeded sampling. The engine is std::mt19937_64, whose output sequence is
// fixed by the standard; the std distributions are not, so the few we need
// are spelled out here to keep artifacts identical across toolchains.

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        ensure(n > 0, "Rng::below(0)");
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return r % n;
    }

    /// Standard normal via Box-Muller (one draw per call, no caching).
    double normal() {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t k = v.size(); k > 1; --k) {
            const auto r = static_cast<std::size_t>(below(k));
            std::swap(v[k - 1], v[r]);
        }
    }

    /// Child seed derived from this stream, for independent sub-streams.
    std::uint64_t fork() { return engine_(); }

  private:
    std::mt19937_64 engine_;
};

/// Mixes a base seed with a salt so different stages draw unrelated streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view salt) {
    return Fnv1a{}.u64(seed).str(salt).value();
}

/// Runs fn(k) for k in [0, n) on up to `threads` workers, each taking a
/// contiguous block. The first exception thrown is rethrown.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t k = 0; k < n; ++k) fn(k);
        return;
    }
    threads = std::min(threads, n);
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t lo = n * t / threads, hi = n * (t + 1) / threads;
        pool.emplace_back([&, t, lo, hi] {
            try {
                for (std::size_t k = lo; k < hi; ++k) fn(k);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace ugrn
