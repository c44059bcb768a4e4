#pragma once

#include <chrono>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "draftedit/metrics.hpp"
#include "draftedit/prob.hpp"
#include "draftedit/util.hpp"
#include "draftedit/vocab.hpp"

namespace draftedit {

enum class DecodeMode { Speedy, Quality, Custom };

inline std::string to_string(DecodeMode m) {
    switch (m) {
        case DecodeMode::Speedy:
            return "speedy";
        case DecodeMode::Quality:
            return "quality";
        default:
            return "custom";
    }
}

inline DecodeMode decode_mode_from_string(const std::string & s) {
    if (s == "speedy") {
        return DecodeMode::Speedy;
    }
    if (s == "quality") {
        return DecodeMode::Quality;
    }
    if (s == "custom") {
        return DecodeMode::Custom;
    }
    throw std::runtime_error("unknown decode mode: " + s);
}

// Dual-threshold decoding configuration. tau_mask gates unmasking commits,
// tau_edit gates token rewrites; both use strict inequalities.
struct ThresholdConfig {
    double     tau_mask                 = 0.85;
    double     tau_edit                 = 0.90;
    DecodeMode mode                     = DecodeMode::Custom;
    int        block_size               = 4;
    int        max_steps_per_block      = 24;
    int        edit_budget_per_position = 3;
    bool       fallback_commit          = true;
    bool       mbe_enabled              = false;
    int        mbe_window               = 1;
    int        mbe_max_passes           = 2;

    // Preset tuned on the desk-scale tasks: permissive drafting, strict edits.
    static ThresholdConfig speedy(int block_size) {
        ThresholdConfig cfg;
        cfg.mode       = DecodeMode::Speedy;
        cfg.tau_mask   = 0.45;
        cfg.tau_edit   = 0.90;
        cfg.block_size = block_size;
        cfg.max_steps_per_block = 6 * block_size;
        return cfg;
    }

    static ThresholdConfig quality(int block_size) {
        ThresholdConfig cfg;
        cfg.mode       = DecodeMode::Quality;
        cfg.tau_mask   = 0.85;
        cfg.tau_edit   = 0.90;
        cfg.block_size = block_size;
        cfg.max_steps_per_block = 6 * block_size;
        return cfg;
    }

    void validate() const {
        if (tau_mask < 0.0 || tau_mask > 1.0 || tau_edit < 0.0 || tau_edit > 1.0) {
            throw std::runtime_error("thresholds must lie in [0, 1]");
        }
        if (mode == DecodeMode::Speedy && tau_mask > tau_edit) {
            throw std::runtime_error("speedy mode requires tau_mask <= tau_edit");
        }
        if (block_size < 1 || max_steps_per_block < 1) {
            throw std::runtime_error("block_size and max_steps_per_block must be positive");
        }
        if (edit_budget_per_position < 0 || mbe_window < 0 || mbe_max_passes < 0) {
            throw std::runtime_error("budgets must be non-negative");
        }
    }

    nlohmann::json to_json() const {
        return nlohmann::json{ { "tau_mask", tau_mask },
                               { "tau_edit", tau_edit },
                               { "mode", to_string(mode) },
                               { "block_size", block_size },
                               { "max_steps_per_block", max_steps_per_block },
                               { "edit_budget_per_position", edit_budget_per_position },
                               { "fallback_commit", fallback_commit },
                               { "mbe_enabled", mbe_enabled },
                               { "mbe_window", mbe_window },
                               { "mbe_max_passes", mbe_max_passes } };
    }

    static ThresholdConfig from_json(const nlohmann::json & j) {
        ThresholdConfig cfg;
        if (j.contains("mode")) {
            cfg.mode = decode_mode_from_string(j.at("mode").get<std::string>());
        }
        if (cfg.mode == DecodeMode::Speedy) {
            cfg = speedy(cfg.block_size);
        } else if (cfg.mode == DecodeMode::Quality) {
            cfg = quality(cfg.block_size);
        }
        if (j.contains("tau_mask")) {
            cfg.tau_mask = j.at("tau_mask").get<double>();
        }
        if (j.contains("tau_edit")) {
            cfg.tau_edit = j.at("tau_edit").get<double>();
        }
        if (j.contains("block_size")) {
            cfg.block_size = j.at("block_size").get<int>();
        }
        if (j.contains("max_steps_per_block")) {
            cfg.max_steps_per_block = j.at("max_steps_per_block").get<int>();
        }
        if (j.contains("edit_budget_per_position")) {
            cfg.edit_budget_per_position = j.at("edit_budget_per_position").get<int>();
        }
        if (j.contains("fallback_commit")) {
            cfg.fallback_commit = j.at("fallback_commit").get<bool>();
        }
        if (j.contains("mbe_enabled")) {
            cfg.mbe_enabled = j.at("mbe_enabled").get<bool>();
        }
        if (j.contains("mbe_window")) {
            cfg.mbe_window = j.at("mbe_window").get<int>();
        }
        if (j.contains("mbe_max_passes")) {
            cfg.mbe_max_passes = j.at("mbe_max_passes").get<int>();
        }
        cfg.validate();
        return cfg;
    }
};

enum class PosStatus : uint8_t { PromptFrozen, Masked, Committed, Finalized };

// The evolving sequence: prompt region plus block-partitioned generation
// region, with per-position status and edit counters.
struct DecodeState {
    std::vector<int>       tokens;
    BlockLayout            layout;
    int                    active_block = 0;
    std::vector<PosStatus> status;
    std::vector<int>       edit_count;
    long                   forwards_used    = 0;
    long                   tokens_generated = 0;
    long                   edits_applied    = 0;

    int masked_in_block(int b) const {
        int n = 0;
        for (int i = layout.block_begin(b); i < layout.block_end(b); i++) {
            n += status[i] == PosStatus::Masked;
        }
        return n;
    }
};

inline DecodeState make_decode_state(const std::vector<int> & prompt, const BlockLayout & layout,
                                     int mask_id) {
    layout.validate();
    if (static_cast<int>(prompt.size()) != layout.prompt_len) {
        throw std::runtime_error("layout mismatch: prompt length " +
                                 std::to_string(prompt.size()) + " != " +
                                 std::to_string(layout.prompt_len));
    }
    DecodeState st;
    st.layout = layout;
    st.tokens = prompt;
    st.tokens.resize(layout.total_len(), mask_id);
    st.status.assign(layout.total_len(), PosStatus::Masked);
    for (int i = 0; i < layout.prompt_len; i++) {
        st.status[i] = PosStatus::PromptFrozen;
    }
    st.edit_count.assign(layout.total_len(), 0);
    return st;
}

// One engine step: the sets it acted on and the sequence afterwards.
struct StepTrace {
    int              step  = 0;
    int              block = 0;
    std::vector<int> gamma;
    std::vector<int> delta;
    bool             fallback = false;
    std::vector<int> tokens;

    nlohmann::json to_json() const {
        return nlohmann::json{ { "step", step },     { "block", block },
                               { "gamma", gamma },   { "delta", delta },
                               { "fallback", fallback }, { "tokens", tokens } };
    }
};

inline std::string traces_to_jsonl(const std::vector<StepTrace> & traces) {
    std::ostringstream out;
    for (const auto & t : traces) {
        out << t.to_json().dump() << "\n";
    }
    return out.str();
}

struct UpdateSets {
    std::vector<int> gamma;  // masked positions to commit
    std::vector<int> delta;  // committed positions to rewrite
};

// The per-step update sets under the dual thresholds (strict inequalities):
//   gamma: masked positions whose top candidate clears tau_mask
//   delta: non-masked positions disagreeing with a top candidate that clears
//          tau_edit, with edit budget remaining
// The mask token is an input symbol only and never a candidate: argmaxes are
// taken over the non-mask vocabulary.
inline UpdateSets compute_update_sets(const DecodeState & state, const ProbGrid & probs,
                                      const ThresholdConfig & cfg, const std::vector<int> & scope,
                                      int mask_id) {
    UpdateSets sets;
    for (int pos : scope) {
        if (pos < 0 || pos >= static_cast<int>(state.tokens.size())) {
            throw std::runtime_error("scope position out of range");
        }
        if (state.status[pos] == PosStatus::PromptFrozen) {
            throw std::runtime_error("prompt positions immutable");
        }
        int top = probs.top_excluding(pos, mask_id);
        if (top < 0) {
            continue;
        }
        double p = probs.prob_at(pos, top);
        if (state.tokens[pos] == mask_id) {
            if (p > cfg.tau_mask) {
                sets.gamma.push_back(pos);
            }
        } else if (state.tokens[pos] != top && p > cfg.tau_edit &&
                   state.edit_count[pos] < cfg.edit_budget_per_position) {
            sets.delta.push_back(pos);
        }
    }
    return sets;
}

namespace detail {

// Token committed at a gamma/fallback position: argmax by default, sampled
// from the temperature-scaled row otherwise. The mask token is never emitted.
inline int commit_token(const ProbGrid & probs, int pos, int mask_id, double temperature,
                        Rng * rng) {
    if (temperature > 0.0 && rng != nullptr) {
        return sample_with_temperature(probs.row_at(pos), temperature, *rng, mask_id);
    }
    return probs.top_excluding(pos, mask_id);
}

}  // namespace detail

// Applies x[i] <- candidate for i in gamma ∪ delta, leaves everything else
// untouched, and updates statuses/counters. `committed` optionally overrides
// the written token per gamma position (stochastic committing).
inline DecodeState apply_transition(DecodeState state, const UpdateSets & sets,
                                    const ProbGrid & probs, int mask_id,
                                    const std::vector<int> * committed = nullptr) {
    for (int g : sets.gamma) {
        if (std::find(sets.delta.begin(), sets.delta.end(), g) != sets.delta.end()) {
            throw std::runtime_error("disjointness violated");
        }
    }
    for (size_t k = 0; k < sets.gamma.size(); k++) {
        int pos = sets.gamma[k];
        state.tokens[pos] =
            committed != nullptr ? (*committed)[k] : probs.top_excluding(pos, mask_id);
        state.status[pos] = PosStatus::Committed;
        state.tokens_generated++;
    }
    for (int pos : sets.delta) {
        state.tokens[pos] = probs.top_excluding(pos, mask_id);
        state.edit_count[pos]++;
        state.edits_applied++;
    }
    return state;
}

struct DecodeOptions {
    double   temperature = 0.0;  // 0 = argmax committing
    uint64_t rng_seed    = 0;
};

namespace detail {

struct StepOutcome {
    bool delta_empty = true;
};

// One forward + set computation + transition over `scope`. Returns which sets
// fired; appends a StepTrace.
inline StepOutcome run_step(const ModelOracle & model, DecodeState & state,
                            const ThresholdConfig & cfg, const std::vector<int> & scope,
                            int mask_id, bool allow_fallback, double temperature, Rng * rng,
                            int & step_counter, std::vector<StepTrace> & traces) {
    ProbGrid probs = model.predict(state.tokens, scope);
    state.forwards_used++;

    UpdateSets sets     = compute_update_sets(state, probs, cfg, scope, mask_id);
    bool       fallback = false;

    if (sets.gamma.empty() && allow_fallback && cfg.fallback_commit) {
        // commit the single highest-confidence masked position (tie: lowest index)
        int    best_pos = -1;
        double best_p   = -1.0;
        for (int pos : scope) {
            if (state.tokens[pos] == mask_id) {
                int top = probs.top_excluding(pos, mask_id);
                if (top >= 0 && probs.prob_at(pos, top) > best_p) {
                    best_p   = probs.prob_at(pos, top);
                    best_pos = pos;
                }
            }
        }
        if (best_pos >= 0) {
            sets.gamma.push_back(best_pos);
            fallback = true;
        }
    }

    std::vector<int> committed(sets.gamma.size());
    for (size_t k = 0; k < sets.gamma.size(); k++) {
        committed[k] = commit_token(probs, sets.gamma[k], mask_id, temperature, rng);
    }
    state = apply_transition(std::move(state), sets, probs, mask_id, &committed);

    StepTrace trace;
    trace.step     = step_counter++;
    trace.block    = state.active_block;
    trace.gamma    = sets.gamma;
    trace.delta    = sets.delta;
    trace.fallback = fallback;
    trace.tokens   = state.tokens;
    traces.push_back(std::move(trace));

    return StepOutcome{ sets.delta.empty() };
}

inline void finalize_block(DecodeState & state, int b) {
    for (int i = state.layout.block_begin(b); i < state.layout.block_end(b); i++) {
        state.status[i] = PosStatus::Finalized;
    }
}

}  // namespace detail

// Threshold decoding of the active block: forward / update sets / transition
// until the block is fully unmasked and the last step edited nothing. When a
// step unmaskable-commits nothing and masks remain, fallback_commit (if set)
// commits the single most confident masked position.
inline std::pair<DecodeState, std::vector<StepTrace>> decode_block(
    const ModelOracle & model, DecodeState state, const ThresholdConfig & cfg, int mask_id,
    const DecodeOptions & opts = {}, Rng * external_rng = nullptr, int step_base = 0) {
    const int b = state.active_block;
    if (state.masked_in_block(b) == 0) {
        throw std::runtime_error("block already decoded");
    }
    std::vector<int> scope = state.layout.block_positions(b);

    Rng   local_rng(opts.rng_seed);
    Rng * rng = external_rng != nullptr ? external_rng : &local_rng;

    std::vector<StepTrace> traces;
    int                    step_counter = step_base;
    for (int step = 0; step < cfg.max_steps_per_block; step++) {
        auto outcome =
            detail::run_step(model, state, cfg, scope, mask_id, /*allow_fallback=*/true,
                             opts.temperature, rng, step_counter, traces);
        if (state.masked_in_block(b) == 0 && outcome.delta_empty) {
            detail::finalize_block(state, b);
            return { std::move(state), std::move(traces) };
        }
    }
    if (state.masked_in_block(b) > 0) {
        throw std::runtime_error("stalled decode");
    }
    // step cap hit while edits were still firing; the block is complete
    detail::finalize_block(state, b);
    return { std::move(state), std::move(traces) };
}

// Re-exposes the trailing window of finalized blocks (plus the current one)
// to edit-only passes. Each pass costs one forward; stops when no edit fires.
inline std::pair<DecodeState, std::vector<StepTrace>> mbe_pass(
    const ModelOracle & model, DecodeState state, const ThresholdConfig & cfg, int mask_id,
    int step_base = 0) {
    if (!cfg.mbe_enabled) {
        throw std::runtime_error("MBE disabled");
    }
    const int b = state.active_block;
    if (b < 1) {
        throw std::runtime_error("MBE requires a preceding finalized block");
    }
    if (cfg.mbe_window < 1 || cfg.mbe_max_passes < 1) {
        return { std::move(state), {} };
    }

    int              first = std::max(0, b - cfg.mbe_window);
    std::vector<int> scope;
    for (int i = state.layout.block_begin(first); i < state.layout.block_end(b); i++) {
        scope.push_back(i);
    }

    std::vector<StepTrace> traces;
    int                    step_counter = step_base;
    for (int pass = 0; pass < cfg.mbe_max_passes; pass++) {
        auto outcome = detail::run_step(model, state, cfg, scope, mask_id,
                                        /*allow_fallback=*/false, 0.0, nullptr, step_counter,
                                        traces);
        if (outcome.delta_empty) {
            break;
        }
    }
    return { std::move(state), std::move(traces) };
}

struct DecodeResult {
    DecodeState            state;
    Metrics                metrics;
    std::vector<StepTrace> traces;
};

// Full left-to-right decode: per-block threshold decoding, optional MBE after
// each finalized block, early stop once an EOS lands (later positions become
// PAD and leave the TPF numerator).
inline DecodeResult decode_sequence(const ModelOracle & model, const std::vector<int> & prompt,
                                    const ThresholdConfig & cfg, const BlockLayout & layout,
                                    const Vocabulary & vocab, const DecodeOptions & opts = {}) {
    cfg.validate();
    if (cfg.block_size != layout.block_size) {
        throw std::runtime_error("layout mismatch: config block_size " +
                                 std::to_string(cfg.block_size) + " != layout block_size " +
                                 std::to_string(layout.block_size));
    }
    auto t0 = std::chrono::steady_clock::now();

    DecodeState state = make_decode_state(prompt, layout, vocab.mask_id());
    Rng         rng(opts.rng_seed);

    std::vector<StepTrace> traces;
    for (int b = 0; b < layout.num_blocks; b++) {
        state.active_block = b;
        auto [next, block_traces] = decode_block(model, std::move(state), cfg, vocab.mask_id(),
                                                 opts, &rng, static_cast<int>(traces.size()));
        state = std::move(next);
        traces.insert(traces.end(), block_traces.begin(), block_traces.end());

        if (cfg.mbe_enabled && b >= 1) {
            auto [edited, mbe_traces] =
                mbe_pass(model, std::move(state), cfg, vocab.mask_id(),
                         static_cast<int>(traces.size()));
            state = std::move(edited);
            traces.insert(traces.end(), mbe_traces.begin(), mbe_traces.end());
        }

        // earliest committed EOS ends the sequence
        int eos_pos = -1;
        for (int i = layout.prompt_len; i < layout.total_len(); i++) {
            if (state.status[i] != PosStatus::Masked && state.tokens[i] == vocab.eos_id()) {
                eos_pos = i;
                break;
            }
        }
        if (eos_pos >= 0) {
            for (int i = eos_pos + 1; i < layout.total_len(); i++) {
                if (state.status[i] != PosStatus::Masked) {
                    state.tokens_generated--;  // committed earlier, now PAD filler
                }
                state.tokens[i] = vocab.pad_id();
                state.status[i] = PosStatus::Finalized;
            }
            break;
        }
    }

    auto t1 = std::chrono::steady_clock::now();

    DecodeResult result;
    result.metrics.tokens_generated = state.tokens_generated;
    result.metrics.forwards_used    = state.forwards_used;
    result.metrics.edits_applied    = state.edits_applied;
    result.metrics.wall_time        = std::chrono::duration<double>(t1 - t0).count();
    result.metrics.finalize();
    result.state  = std::move(state);
    result.traces = std::move(traces);
    return result;
}

}  // namespace draftedit
