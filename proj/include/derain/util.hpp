#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace derain {

// Thrown for bad user input (config values, malformed specs, shape
// mismatches at API boundaries). The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Thrown for filesystem / codec / format failures. CLI exit code 2.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(s.data(), s.size(), h);
}

// Combines a master seed with context tags into an independent stream seed.
inline uint64_t derive_seed(uint64_t master, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t h = splitmix64(master);
    h = splitmix64(h ^ (a * 0x9e3779b97f4a7c15ULL));
    h = splitmix64(h ^ (b * 0xc2b2ae3d27d4eb4fULL));
    h = splitmix64(h ^ (c * 0x165667b19e3779f9ULL));
    return h;
}

std::string format_double(double v, int precision = 9);

// Appends a line to a file under an exclusive flock. Creates the file
// (with the given header as first line) if it does not exist.
void append_line_locked(const std::string& path, const std::string& line,
                        const std::string& header_if_new = "");

} // namespace derain
