// common.hpp : error type and deterministic RNG helpers shared by all modules.
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace cribdet {

enum class Errc {
    InvalidArgument,
    ShapeMismatch,
    EmptyRegion,
    WouldUpsample,
    LabelUnrepresented,
    CorruptContainer,
    ArchitectureMismatch,
    NumericalInstability,
    MissingCache,
    DegenerateInput,
    IoError,
};

inline const char* errc_name(Errc c) {
    switch (c) {
        case Errc::InvalidArgument: return "InvalidArgument";
        case Errc::ShapeMismatch: return "ShapeMismatch";
        case Errc::EmptyRegion: return "EmptyRegion";
        case Errc::WouldUpsample: return "WouldUpsample";
        case Errc::LabelUnrepresented: return "LabelUnrepresented";
        case Errc::CorruptContainer: return "CorruptContainer";
        case Errc::ArchitectureMismatch: return "ArchitectureMismatch";
        case Errc::NumericalInstability: return "NumericalInstability";
        case Errc::MissingCache: return "MissingCache";
        case Errc::DegenerateInput: return "DegenerateInput";
        case Errc::IoError: return "IoError";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
  public:
    Error(Errc code, const std::string& detail)
        : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}
    Errc code() const { return code_; }

  private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& detail) { throw Error(code, detail); }

inline void require(bool cond, Errc code, const std::string& detail) {
    if (!cond) fail(code, detail);
}

// Deterministic uniform sampling on top of std::mt19937. The engine itself is
// bit-stable per the standard; std::uniform_*_distribution is not, so sampling
// is hand-rolled here to keep seeded runs byte-identical.
namespace rng {

using Engine = std::mt19937;

inline std::uint32_t next_u32(Engine& eng) { return eng(); }

// Unbiased integer in [0, n) by rejection.
inline std::uint32_t below(Engine& eng, std::uint32_t n) {
    if (n == 0) fail(Errc::InvalidArgument, "rng::below(0)");
    const std::uint32_t limit = UINT32_MAX - UINT32_MAX % n;
    std::uint32_t v = eng();
    while (v >= limit) v = eng();
    return v % n;
}

// Double in [0, 1) with 32 bits of randomness.
inline double unit(Engine& eng) { return eng() * (1.0 / 4294967296.0); }

inline double range(Engine& eng, double lo, double hi) { return lo + (hi - lo) * unit(eng); }

inline bool coin(Engine& eng) { return (eng() & 1u) != 0; }

// Stream splitting: derive an independent seed from a master seed and a tag,
// so per-item engines are reproducible regardless of processing order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag) {
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline Engine make_engine(std::uint64_t seed) { return Engine(static_cast<std::uint32_t>(seed ^ (seed >> 32))); }

}  // namespace rng

// FNV-1a 64-bit, used for architecture hashes and manifest input hashes.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

}  // namespace cribdet
