#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "draftedit/corruption.hpp"
#include "draftedit/decode.hpp"
#include "draftedit/ebpo.hpp"
#include "draftedit/net.hpp"
#include "draftedit/reference.hpp"
#include "draftedit/train.hpp"
#include "draftedit/util.hpp"

namespace draftedit {

struct CheckResult {
    std::string name;
    bool        passed = false;
    std::string detail;
};

namespace detail {

inline Vocabulary tiny_vocab(int letters) {
    std::string corpus;
    for (int i = 0; i < letters; i++) {
        corpus += static_cast<char>('a' + i);
    }
    return Vocabulary::build(corpus);
}

inline std::vector<double> random_row(int vocab, Rng & rng, int mask_id) {
    std::vector<double> row(vocab, 0.0);
    double              sum = 0.0;
    for (int v = 0; v < vocab; v++) {
        if (v == mask_id) {
            continue;  // models never propose the mask token
        }
        row[v] = uniform_unit(rng) + 1e-3;
        sum += row[v];
    }
    for (double & p : row) {
        p /= sum;
    }
    return row;
}

inline std::shared_ptr<TableOracle> random_oracle(const Vocabulary & vocab,
                                                  const BlockLayout & layout, Rng & rng) {
    auto oracle = std::make_shared<TableOracle>(vocab.size());
    for (int pos = 0; pos < layout.total_len(); pos++) {
        oracle->set_default_row(pos, random_row(vocab.size(), rng, vocab.mask_id()));
    }
    return oracle;
}

inline CorruptedPair random_pair(const Vocabulary & vocab, const BlockLayout & layout, Rng & rng) {
    std::vector<int> clean(layout.total_len());
    for (int & t : clean) {
        t = static_cast<int>(std::uniform_int_distribution<int>(0, vocab.size() - 4)(rng));
    }
    for (int attempt = 0; attempt < 16; attempt++) {
        CorruptedPair pair = make_training_pair(clean, layout.prompt_len, vocab, 0.4, 0.3, rng());
        if (!pair.m2t_positions.empty() || !pair.t2t_positions.empty()) {
            return pair;
        }
    }
    throw std::runtime_error("no supervised positions");
}

}  // namespace detail

// Gamma and delta never overlap, over randomized states and grids.
inline CheckResult check_disjointness(uint64_t seed, int iterations = 200) {
    Rng        rng(seed);
    Vocabulary vocab = detail::tiny_vocab(5);
    for (int it = 0; it < iterations; it++) {
        BlockLayout layout{ 1, 4, 1 };
        DecodeState state = make_decode_state({ 0 }, layout, vocab.mask_id());
        for (int i = 1; i < layout.total_len(); i++) {
            if (uniform_unit(rng) < 0.5) {
                state.tokens[i] = std::uniform_int_distribution<int>(0, vocab.size() - 1)(rng);
                if (state.tokens[i] == vocab.mask_id()) {
                    state.tokens[i] = 0;
                }
                state.status[i] = PosStatus::Committed;
            }
        }
        std::vector<std::vector<double>> rows;
        std::vector<int>                 scope;
        for (int i = 1; i < layout.total_len(); i++) {
            scope.push_back(i);
            rows.push_back(detail::random_row(vocab.size(), rng, -1));
        }
        ProbGrid        probs(scope, rows);
        ThresholdConfig cfg;
        cfg.tau_mask = uniform_unit(rng);
        cfg.tau_edit = uniform_unit(rng);
        UpdateSets sets = compute_update_sets(state, probs, cfg, scope, vocab.mask_id());
        for (int g : sets.gamma) {
            for (int d : sets.delta) {
                if (g == d) {
                    return { "disjointness", false, "gamma and delta overlap" };
                }
            }
        }
    }
    return { "disjointness", true, std::to_string(iterations) + " randomized instances" };
}

// Masked-position count never increases inside a block decode.
inline CheckResult check_monotone_unmasking(uint64_t seed, int iterations = 50) {
    Rng        rng(seed);
    Vocabulary vocab = detail::tiny_vocab(5);
    for (int it = 0; it < iterations; it++) {
        BlockLayout layout{ 1, 1 + static_cast<int>(rng() % 5), 1 + static_cast<int>(rng() % 2) };
        auto        oracle = detail::random_oracle(vocab, layout, rng);
        ThresholdConfig cfg;
        cfg.block_size      = layout.block_size;
        cfg.tau_mask        = uniform_unit(rng) * 0.9;
        cfg.tau_edit        = 0.5 + uniform_unit(rng) * 0.5;
        cfg.fallback_commit = true;

        DecodeResult result = decode_sequence(*oracle, { 0 }, cfg, layout, vocab);
        int          prev   = layout.gen_len();
        int          block  = 0;
        for (const auto & trace : result.traces) {
            if (trace.block != block) {
                block = trace.block;
                prev  = layout.gen_len();
            }
            int masked = 0;
            for (int i = layout.prompt_len; i < layout.total_len(); i++) {
                masked += trace.tokens[i] == vocab.mask_id();
            }
            if (masked > prev) {
                return { "monotone unmasking", false, "masked count increased" };
            }
            prev = masked;
        }
    }
    return { "monotone unmasking", true, std::to_string(iterations) + " randomized decodes" };
}

// With tau_edit = 1 and MBE off the engine must match the edit-free decoder.
inline CheckResult check_baseline_equivalence(uint64_t seed, int iterations = 25) {
    Rng        rng(seed);
    Vocabulary vocab = detail::tiny_vocab(5);
    for (int it = 0; it < iterations; it++) {
        BlockLayout layout{ 1, 2 + static_cast<int>(rng() % 3), 1 + static_cast<int>(rng() % 3) };
        auto        oracle = detail::random_oracle(vocab, layout, rng);
        ThresholdConfig cfg;
        cfg.block_size      = layout.block_size;
        cfg.tau_mask        = uniform_unit(rng) * 0.9;
        cfg.tau_edit        = 1.0;
        cfg.mbe_enabled     = false;
        cfg.fallback_commit = true;

        DecodeResult    engine = decode_sequence(*oracle, { 0 }, cfg, layout, vocab);
        ReferenceDecode ref =
            reference_threshold_decode(*oracle, { 0 }, cfg.tau_mask, layout, vocab,
                                       cfg.max_steps_per_block, cfg.fallback_commit);
        if (engine.state.tokens != ref.tokens ||
            engine.metrics.forwards_used != ref.forwards ||
            engine.traces.size() != ref.step_tokens.size()) {
            return { "baseline equivalence", false, "trace mismatch at iteration " +
                                                        std::to_string(it) };
        }
        for (size_t k = 0; k < ref.step_tokens.size(); k++) {
            if (engine.traces[k].tokens != ref.step_tokens[k]) {
                return { "baseline equivalence", false, "step tokens diverge" };
            }
        }
    }
    return { "baseline equivalence", true, std::to_string(iterations) + " seeded runs" };
}

inline CheckResult check_gradients(uint64_t seed, int nets = 3) {
    Rng    rng(seed);
    double worst = 0.0;
    for (int it = 0; it < nets; it++) {
        Vocabulary  vocab = detail::tiny_vocab(4);
        BlockLayout layout{ 1, 3, 2 };
        NetConfig   cfg;
        cfg.vocab_size    = vocab.size();
        cfg.width         = 8;
        cfg.heads         = 2;
        cfg.layers        = 1 + static_cast<int>(rng() % 2);
        cfg.max_positions = layout.total_len();
        cfg.block_size    = layout.block_size;
        ToyNet        net(cfg, rng());
        CorruptedPair pair = detail::random_pair(vocab, layout, rng);
        worst = std::max(worst, grad_check(net, pair, layout.prompt_len, 0.5, 96, rng()));
    }
    return { "grad_check", worst < 1e-4, "max relative error " + std::to_string(worst) };
}

// estimate_log_ratio(theta, theta) must vanish identically.
inline CheckResult check_ratio_identity(uint64_t seed, int iterations = 5) {
    Rng rng(seed);
    for (int it = 0; it < iterations; it++) {
        Vocabulary  vocab = detail::tiny_vocab(4);
        BlockLayout layout{ 2, 3, 2 };
        NetConfig   cfg;
        cfg.vocab_size    = vocab.size();
        cfg.width         = 8;
        cfg.heads         = 2;
        cfg.layers        = 1;
        cfg.max_positions = layout.total_len();
        cfg.block_size    = layout.block_size;
        ToyNet net(cfg, rng());

        RolloutRecord record;
        record.prompt = { 0, 1 };
        record.completion.resize(layout.gen_len());
        for (int & t : record.completion) {
            t = static_cast<int>(rng() % (vocab.size() - 3));
        }
        record.grid = materialize_grid(record.completion, { 0.25, 0.5, 1.0 },
                                       { 1.0 / 3, 1.0 / 3, 1.0 / 3 }, vocab.mask_id(), rng());
        double ratio =
            estimate_log_ratio(net, net, record, record.grid, layout, vocab.mask_id());
        if (ratio != 0.0) {
            return { "ratio identity", false, "ratio " + std::to_string(ratio) };
        }
    }
    return { "ratio identity", true, "exactly 0 on " + std::to_string(iterations) + " instances" };
}

// Composite-input estimator vs per-(timestep, block) forwards.
inline CheckResult check_vectorized_naive(uint64_t seed, int iterations = 10) {
    Rng rng(seed);
    for (int it = 0; it < iterations; it++) {
        Vocabulary  vocab = detail::tiny_vocab(4);
        BlockLayout layout{ 2, 2 + static_cast<int>(rng() % 2), 2 };
        NetConfig   cfg;
        cfg.vocab_size    = vocab.size();
        cfg.width         = 8;
        cfg.heads         = 2;
        cfg.layers        = 1 + static_cast<int>(rng() % 2);
        cfg.max_positions = layout.prompt_len + 2 * layout.gen_len();
        cfg.block_size    = layout.block_size;
        ToyNet net(cfg, rng());

        std::vector<int> prompt = { 0, 1 };
        std::vector<int> completion(layout.gen_len());
        for (int & t : completion) {
            t = static_cast<int>(rng() % (vocab.size() - 3));
        }
        TimestepGrid grid = materialize_grid(completion, { 0.25, 0.5, 0.75, 1.0 },
                                             { 0.25, 0.25, 0.25, 0.25 }, vocab.mask_id(), rng());
        auto vec = block_likelihood_terms(net, prompt, completion, grid, layout, vocab.mask_id());
        auto naive =
            naive_likelihood_terms(net, prompt, completion, grid.corrupted, layout,
                                   vocab.mask_id());
        for (size_t n = 0; n < vec.size(); n++) {
            for (size_t b = 0; b < vec[n].size(); b++) {
                if (std::fabs(vec[n][b] - naive[n][b]) > 1e-8) {
                    return { "vectorized/naive equivalence", false,
                             "difference " + std::to_string(vec[n][b] - naive[n][b]) };
                }
            }
        }
    }
    return { "vectorized/naive equivalence", true,
             std::to_string(iterations) + " instances within 1e-8" };
}

inline std::vector<CheckResult> run_invariant_suite(uint64_t seed) {
    return {
        check_disjointness(seed + 1),  check_monotone_unmasking(seed + 2),
        check_baseline_equivalence(seed + 3), check_gradients(seed + 4),
        check_ratio_identity(seed + 5), check_vectorized_naive(seed + 6),
    };
}

}  // namespace draftedit
