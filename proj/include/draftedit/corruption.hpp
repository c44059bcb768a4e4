#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "draftedit/prob.hpp"
#include "draftedit/util.hpp"
#include "draftedit/vocab.hpp"

namespace draftedit {

// A clean sequence paired with its corrupted version and the two supervision
// position sets: m2t (masked) and t2t (noised).
struct CorruptedPair {
    std::vector<int> clean;
    std::vector<int> corrupted;
    std::vector<int> m2t_positions;
    std::vector<int> t2t_positions;
};

// Independent per-position assignment: mask with probability mask_rate, noise
// with probability noise_rate, untouched otherwise. Noise tokens are uniform
// over the non-sentinel vocabulary excluding the clean token. Draw order per
// position: one assignment draw, then (for noise) one index draw.
inline CorruptedPair corrupt(const std::vector<int> & clean, const Vocabulary & vocab,
                             double mask_rate, double noise_rate, uint64_t rng_seed) {
    if (clean.empty()) {
        throw std::runtime_error("empty sequence");
    }
    if (mask_rate < 0.0 || noise_rate < 0.0 || mask_rate + noise_rate > 1.0) {
        throw std::runtime_error("rate overflow");
    }
    for (int t : clean) {
        if (t == vocab.mask_id()) {
            throw std::runtime_error("clean sequence contains the mask token");
        }
    }
    const int non_sentinel = vocab.size() - 3;

    CorruptedPair pair;
    pair.clean     = clean;
    pair.corrupted = clean;

    Rng rng(rng_seed);
    for (size_t i = 0; i < clean.size(); i++) {
        double u = uniform_unit(rng);
        if (u < mask_rate) {
            pair.corrupted[i] = vocab.mask_id();
            pair.m2t_positions.push_back(static_cast<int>(i));
        } else if (u < mask_rate + noise_rate) {
            // candidates: non-sentinel ids minus the clean token
            int n_candidates = non_sentinel;
            if (clean[i] >= 0 && clean[i] < non_sentinel) {
                n_candidates--;
            }
            if (n_candidates <= 0) {
                continue;  // no legal noise token; position stays untouched
            }
            int k = static_cast<int>(std::uniform_int_distribution<int>(0, n_candidates - 1)(rng));
            if (clean[i] >= 0 && clean[i] < non_sentinel && k >= clean[i]) {
                k++;  // skip over the clean token
            }
            pair.corrupted[i] = k;
            pair.t2t_positions.push_back(static_cast<int>(i));
        }
    }
    return pair;
}

// Undo a corruption: restores clean exactly when the pair invariants hold.
inline std::vector<int> revert(const CorruptedPair & pair) {
    std::vector<int> out = pair.corrupted;
    for (int i : pair.m2t_positions) {
        out[i] = pair.clean[i];
    }
    for (int i : pair.t2t_positions) {
        out[i] = pair.clean[i];
    }
    return out;
}

// Multi-turn forward augmentation: for each round, sample the model's
// predictions at the originally masked positions (conditioning on the
// previous round's output) and write them into the corrupted sequence.
// Positions whose final token differs from clean become editing targets;
// positions the model got right leave both supervision sets.
inline CorruptedPair mtf_augment(const ModelOracle & model, const Vocabulary & vocab,
                                 const CorruptedPair & pair, int rounds, uint64_t rng_seed) {
    if (rounds < 1) {
        throw std::runtime_error("rounds must be positive");
    }
    if (model.vocab_size() != vocab.size()) {
        throw std::runtime_error("model vocabulary does not match pair vocabulary");
    }

    CorruptedPair out = pair;
    std::vector<int> eligible = pair.m2t_positions;  // fixed across rounds
    if (eligible.empty()) {
        return out;
    }

    Rng rng(rng_seed);
    for (int r = 0; r < rounds; r++) {
        ProbGrid grid = model.predict(out.corrupted, eligible);
        for (int pos : eligible) {
            const auto & row = grid.row_at(pos);
            int sampled = sample_with_temperature(row, 1.0, rng, vocab.mask_id());
            out.corrupted[pos] = sampled;
        }
    }

    out.m2t_positions.clear();
    std::vector<int> t2t = pair.t2t_positions;
    for (int pos : eligible) {
        if (out.corrupted[pos] != out.clean[pos]) {
            t2t.push_back(pos);
        } else {
            out.corrupted[pos] = out.clean[pos];
        }
    }
    std::sort(t2t.begin(), t2t.end());
    out.t2t_positions = std::move(t2t);
    return out;
}

}  // namespace draftedit
