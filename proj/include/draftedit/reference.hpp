#pragma once

// Independent reference implementations used as cross-checks. These share
// only types with the main engine; the control flow is written separately on
// purpose and must stay free of edit logic / composite batching.

#include <stdexcept>
#include <vector>

#include "draftedit/net.hpp"
#include "draftedit/prob.hpp"
#include "draftedit/vocab.hpp"

namespace draftedit {

struct ReferenceDecode {
    std::vector<int>              tokens;
    long                          forwards = 0;
    std::vector<std::vector<int>> step_tokens;  // sequence after every forward
};

// Pure mask-to-token threshold decoder: per step, commit every masked
// position of the active block whose top candidate exceeds tau_mask; when
// none clears the bar, optionally commit the single most confident one.
// No edits, ever. Mirrors the engine's EOS/PAD convention.
inline ReferenceDecode reference_threshold_decode(const ModelOracle & model,
                                                  const std::vector<int> & prompt,
                                                  double tau_mask, const BlockLayout & layout,
                                                  const Vocabulary & vocab,
                                                  int max_steps_per_block, bool fallback_commit) {
    layout.validate();
    if (static_cast<int>(prompt.size()) != layout.prompt_len) {
        throw std::runtime_error("layout mismatch");
    }

    ReferenceDecode out;
    out.tokens = prompt;
    out.tokens.resize(layout.total_len(), vocab.mask_id());

    for (int b = 0; b < layout.num_blocks; b++) {
        int lo = layout.block_begin(b);
        int hi = layout.block_end(b);

        int step = 0;
        while (true) {
            bool any_masked = false;
            for (int i = lo; i < hi; i++) {
                any_masked |= out.tokens[i] == vocab.mask_id();
            }
            if (!any_masked) {
                break;
            }
            if (step >= max_steps_per_block) {
                throw std::runtime_error("stalled decode");
            }
            step++;

            std::vector<int> scope;
            for (int i = lo; i < hi; i++) {
                scope.push_back(i);
            }
            ProbGrid probs = model.predict(out.tokens, scope);
            out.forwards++;

            // recompute argmaxes from raw rows rather than trusting the grid
            int    committed = 0;
            int    best_pos  = -1;
            int    best_tok  = -1;
            double best_p    = -1.0;
            std::vector<std::pair<int, int>> commits;
            for (int i = lo; i < hi; i++) {
                if (out.tokens[i] != vocab.mask_id()) {
                    continue;
                }
                const auto & row = probs.row_at(i);
                int          top = -1;
                for (size_t v = 0; v < row.size(); v++) {
                    if (static_cast<int>(v) == vocab.mask_id()) {
                        continue;
                    }
                    if (top < 0 || row[v] > row[top]) {
                        top = static_cast<int>(v);
                    }
                }
                if (row[top] > tau_mask) {
                    commits.push_back({ i, top });
                } else if (row[top] > best_p) {
                    best_p   = row[top];
                    best_pos = i;
                    best_tok = top;
                }
            }
            for (auto [pos, tok] : commits) {
                out.tokens[pos] = tok;
                committed++;
            }
            if (committed == 0 && fallback_commit && best_pos >= 0) {
                out.tokens[best_pos] = best_tok;
            }
            out.step_tokens.push_back(out.tokens);
        }

        // first committed EOS pads out the rest and stops
        int eos_pos = -1;
        for (int i = layout.prompt_len; i < layout.total_len(); i++) {
            if (out.tokens[i] == vocab.eos_id()) {
                eos_pos = i;
                break;
            }
        }
        if (eos_pos >= 0) {
            for (int i = eos_pos + 1; i < layout.total_len(); i++) {
                out.tokens[i] = vocab.pad_id();
            }
            return out;
        }
    }
    return out;
}

// Single block-conditional likelihood term computed without the composite
// batching trick: a dedicated forward over [prompt | clean blocks < b |
// corrupted block b] under the ordinary block-causal mask.
inline double naive_block_term(const ToyNet & net, const std::vector<int> & prompt,
                               const std::vector<int> & completion,
                               const std::vector<int> & corrupted, const BlockLayout & layout,
                               int block, int mask_id) {
    const int P  = layout.prompt_len;
    const int bs = layout.block_size;

    std::vector<int> seq;
    seq.reserve(P + (block + 1) * bs);
    seq.insert(seq.end(), prompt.begin(), prompt.end());
    for (int i = 0; i < block * bs; i++) {
        seq.push_back(completion[i]);
    }
    for (int i = block * bs; i < (block + 1) * bs; i++) {
        seq.push_back(corrupted[i]);
    }

    AttnMask         mask = build_block_causal_mask(P, bs, block + 1);
    std::vector<int> pos_ids(seq.size());
    for (size_t t = 0; t < seq.size(); t++) {
        pos_ids[t] = static_cast<int>(t);
    }

    std::vector<WeightedTarget> targets;
    for (int i = block * bs; i < (block + 1) * bs; i++) {
        if (corrupted[i] == mask_id) {
            targets.push_back({ P + i, completion[i], 1.0 });
        }
    }
    if (targets.empty()) {
        return 0.0;
    }
    ToyNet::Trace trace = net.forward_trace(seq, pos_ids, mask);
    return net.log_prob_sum(trace, targets);
}

// All (timestep, block) terms via separate forwards.
inline std::vector<std::vector<double>> naive_likelihood_terms(
    const ToyNet & net, const std::vector<int> & prompt, const std::vector<int> & completion,
    const std::vector<std::vector<int>> & corrupted_levels, const BlockLayout & layout,
    int mask_id) {
    std::vector<std::vector<double>> terms;
    for (const auto & corrupted : corrupted_levels) {
        std::vector<double> per_block;
        for (int b = 0; b < layout.num_blocks; b++) {
            per_block.push_back(
                naive_block_term(net, prompt, completion, corrupted, layout, b, mask_id));
        }
        terms.push_back(std::move(per_block));
    }
    return terms;
}

}  // namespace draftedit
