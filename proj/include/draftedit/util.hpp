#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace draftedit {

using Rng = std::mt19937_64;

inline double uniform_unit(Rng & rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

// Draw one token from a categorical row by CDF walk. The row is assumed
// normalized; any residual mass lands on the last index.
inline int sample_categorical(const std::vector<double> & row, Rng & rng) {
    double u   = uniform_unit(rng);
    double acc = 0.0;
    for (size_t v = 0; v < row.size(); v++) {
        acc += row[v];
        if (u < acc) {
            return static_cast<int>(v);
        }
    }
    return static_cast<int>(row.size()) - 1;
}

// Argmax with ties broken toward the lowest index.
inline int argmax_lowest(const std::vector<double> & row) {
    int    best   = 0;
    double best_p = row.empty() ? 0.0 : row[0];
    for (size_t v = 1; v < row.size(); v++) {
        if (row[v] > best_p) {
            best_p = row[v];
            best   = static_cast<int>(v);
        }
    }
    return best;
}

// Temperature sampling on a probability row: temperature 0 is argmax,
// otherwise sample proportional to p^(1/T). `banned` (if >= 0) is removed
// from the support and the row renormalized.
inline int sample_with_temperature(const std::vector<double> & row, double temperature, Rng & rng,
                                   int banned = -1) {
    std::vector<double> w(row);
    if (banned >= 0 && banned < static_cast<int>(w.size())) {
        w[banned] = 0.0;
    }
    double total = 0.0;
    for (double p : w) {
        total += p;
    }
    if (total <= 0.0) {
        // degenerate row: fall back to the first allowed index
        for (size_t v = 0; v < w.size(); v++) {
            if (static_cast<int>(v) != banned) {
                return static_cast<int>(v);
            }
        }
        return 0;
    }
    if (temperature <= 0.0) {
        for (double & p : w) {
            p /= total;
        }
        return argmax_lowest(w);
    }
    double norm = 0.0;
    for (double & p : w) {
        if (temperature != 1.0) {
            p = (p > 0.0) ? std::pow(p, 1.0 / temperature) : 0.0;
        }
        norm += p;
    }
    for (double & p : w) {
        p /= norm;
    }
    return sample_categorical(w, rng);
}

inline uint64_t fnv1a64(const std::string & data) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string fnv1a64_hex(const std::string & data) {
    static const char * digits = "0123456789abcdef";
    uint64_t            h      = fnv1a64(data);
    std::string         out(16, '0');
    for (int i = 15; i >= 0; i--) {
        out[i] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

}  // namespace draftedit
