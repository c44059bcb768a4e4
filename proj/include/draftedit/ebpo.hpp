#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "draftedit/decode.hpp"
#include "draftedit/net.hpp"
#include "draftedit/util.hpp"
#include "draftedit/vocab.hpp"

namespace draftedit {

// Discretized corruption levels for the likelihood bound. Level t masks
// exactly ceil(t * len) completion positions, chosen by a seeded partial
// shuffle.
struct TimestepGrid {
    std::vector<double>           timesteps;
    std::vector<double>           weights;
    std::vector<std::vector<int>> corrupted;  // per level, completion region only
    uint64_t                      rng_seed = 0;
};

inline TimestepGrid materialize_grid(const std::vector<int> & completion,
                                     const std::vector<double> & timesteps,
                                     const std::vector<double> & weights, int mask_id,
                                     uint64_t seed) {
    if (timesteps.empty() || timesteps.size() != weights.size()) {
        throw std::runtime_error("invalid timestep grid");
    }
    for (size_t n = 0; n < timesteps.size(); n++) {
        if (timesteps[n] <= 0.0 || timesteps[n] > 1.0 || weights[n] <= 0.0) {
            throw std::runtime_error("invalid timestep grid");
        }
    }
    TimestepGrid grid;
    grid.timesteps = timesteps;
    grid.weights   = weights;
    grid.rng_seed  = seed;

    const int len = static_cast<int>(completion.size());
    Rng       rng(seed);
    for (double t : timesteps) {
        int k = static_cast<int>(std::ceil(t * len));
        k     = std::min(k, len);
        std::vector<int> order(len);
        for (int i = 0; i < len; i++) {
            order[i] = i;
        }
        for (int i = 0; i < k; i++) {
            int j = static_cast<int>(std::uniform_int_distribution<int>(i, len - 1)(rng));
            std::swap(order[i], order[j]);
        }
        std::vector<int> corrupted = completion;
        for (int i = 0; i < k; i++) {
            corrupted[order[i]] = mask_id;
        }
        grid.corrupted.push_back(std::move(corrupted));
    }
    return grid;
}

// One sampled completion with its reward, group-relative advantage, and the
// cached per-(timestep, block) log-likelihood terms of the policy it was
// sampled from.
struct RolloutRecord {
    std::vector<int>                 prompt;
    std::vector<int>                 completion;  // full generation region
    double                           reward    = 0.0;
    double                           advantage = 0.0;
    TimestepGrid                     grid;
    std::vector<std::vector<double>> old_terms;  // [timestep][block]

    nlohmann::json to_json() const {
        return nlohmann::json{ { "prompt", prompt },
                               { "completion", completion },
                               { "reward", reward },
                               { "advantage", advantage },
                               { "log_ratio_terms", old_terms } };
    }
};

struct RolloutGroup {
    std::vector<int>           prompt;
    std::vector<RolloutRecord> records;
};

struct ClipConfig {
    double eps_low      = 0.2;
    double eps_high     = 0.2;
    int    group_size   = 4;
    double lr           = 0.05;
    int    inner_epochs = 1;

    void validate() const {
        if (eps_low <= 0.0 || eps_high <= 0.0 || 1.0 - eps_low <= 0.0) {
            throw std::runtime_error("invalid clip range");
        }
        if (group_size < 2 || inner_epochs < 1) {
            throw std::runtime_error("group size must be at least 2");
        }
    }

    nlohmann::json to_json() const {
        return nlohmann::json{ { "eps_low", eps_low },
                               { "eps_high", eps_high },
                               { "group_size", group_size },
                               { "lr", lr },
                               { "inner_epochs", inner_epochs } };
    }

    static ClipConfig from_json(const nlohmann::json & j) {
        ClipConfig c;
        if (j.contains("eps_low")) c.eps_low = j.at("eps_low").get<double>();
        if (j.contains("eps_high")) c.eps_high = j.at("eps_high").get<double>();
        if (j.contains("group_size")) c.group_size = j.at("group_size").get<int>();
        if (j.contains("lr")) c.lr = j.at("lr").get<double>();
        if (j.contains("inner_epochs")) c.inner_epochs = j.at("inner_epochs").get<int>();
        c.validate();
        return c;
    }
};

// Group-relative standardization: (r - mean) / (std + 1e-8).
inline std::vector<double> group_advantage(const std::vector<double> & rewards) {
    if (rewards.size() < 2) {
        throw std::runtime_error("degenerate group");
    }
    double mean = 0.0;
    for (double r : rewards) {
        mean += r;
    }
    mean /= rewards.size();
    double var = 0.0;
    for (double r : rewards) {
        var += (r - mean) * (r - mean);
    }
    var /= rewards.size();
    double              sd = std::sqrt(var);
    std::vector<double> out(rewards.size());
    for (size_t i = 0; i < rewards.size(); i++) {
        out[i] = (rewards[i] - mean) / (sd + 1e-8);
    }
    return out;
}

// All block-conditional log-likelihood terms for one record in one forward
// per timestep, via the composite input [prompt | corrupted | clean].
inline std::vector<std::vector<double>> block_likelihood_terms(const ToyNet &       net,
                                                               const std::vector<int> & prompt,
                                                               const std::vector<int> & completion,
                                                               const TimestepGrid &     grid,
                                                               const BlockLayout &      layout,
                                                               int                      mask_id) {
    const int P = layout.prompt_len;
    const int L = layout.gen_len();
    if (static_cast<int>(prompt.size()) != P || static_cast<int>(completion.size()) != L) {
        throw std::runtime_error("layout mismatch");
    }
    AttnMask         mask    = build_composite_mask(P, layout.block_size, layout.num_blocks);
    std::vector<int> pos_ids = composite_position_ids(P, L);

    std::vector<std::vector<double>> terms;
    terms.reserve(grid.corrupted.size());
    for (const auto & corrupted : grid.corrupted) {
        if (static_cast<int>(corrupted.size()) != L) {
            throw std::runtime_error("layout mismatch");
        }
        std::vector<int> z;
        z.reserve(P + 2 * L);
        z.insert(z.end(), prompt.begin(), prompt.end());
        z.insert(z.end(), corrupted.begin(), corrupted.end());
        z.insert(z.end(), completion.begin(), completion.end());

        ToyNet::Trace       trace = net.forward_trace(z, pos_ids, mask);
        std::vector<double> per_block(layout.num_blocks, 0.0);
        for (int b = 0; b < layout.num_blocks; b++) {
            std::vector<WeightedTarget> targets;
            for (int i = b * layout.block_size; i < (b + 1) * layout.block_size; i++) {
                if (corrupted[i] == mask_id) {
                    targets.push_back({ P + i, completion[i], 1.0 });
                }
            }
            per_block[b] = targets.empty() ? 0.0 : net.log_prob_sum(trace, targets);
        }
        terms.push_back(std::move(per_block));
    }
    return terms;
}

// Weighted difference of the block-conditional terms under the current and
// old policies. Cached old terms take precedence over re-scoring theta_old.
inline double estimate_log_ratio(const ToyNet & theta, const ToyNet & theta_old,
                                 const RolloutRecord & record, const TimestepGrid & grid,
                                 const BlockLayout & layout, int mask_id) {
    auto terms_new =
        block_likelihood_terms(theta, record.prompt, record.completion, grid, layout, mask_id);
    std::vector<std::vector<double>> terms_old = record.old_terms;
    if (terms_old.empty()) {
        terms_old = block_likelihood_terms(theta_old, record.prompt, record.completion, grid,
                                           layout, mask_id);
    }
    double total = 0.0;
    for (size_t n = 0; n < grid.timesteps.size(); n++) {
        for (int b = 0; b < layout.num_blocks; b++) {
            total += grid.weights[n] * (terms_new[n][b] - terms_old[n][b]);
        }
    }
    return total;
}

using RewardFn =
    std::function<double(const std::vector<int> & prompt, const std::vector<int> & completion)>;

struct RolloutLog {
    std::vector<std::string> skipped;  // human-readable reasons for excluded records
};

// G stochastic completions per prompt (temperature sampling at commit time),
// rewards attached, old-policy terms cached immediately. Groups with fewer
// than two scored survivors are dropped.
inline std::vector<RolloutGroup> collect_rollouts(
    const ToyNet & policy, const std::vector<std::vector<int>> & prompts,
    const ThresholdConfig & cfg, const BlockLayout & layout, const Vocabulary & vocab,
    int group_size, const RewardFn & reward_fn, const std::vector<double> & timesteps,
    const std::vector<double> & weights, double temperature, uint64_t seed,
    RolloutLog * log = nullptr) {
    if (group_size < 2) {
        throw std::runtime_error("group size must be at least 2");
    }
    NetOracle oracle(policy, layout.prompt_len);
    Rng       master(seed);

    std::vector<RolloutGroup> groups;
    for (size_t pi = 0; pi < prompts.size(); pi++) {
        RolloutGroup group;
        group.prompt = prompts[pi];
        for (int g = 0; g < group_size; g++) {
            uint64_t decode_seed = master();
            uint64_t grid_seed   = master();

            DecodeResult result;
            try {
                result = decode_sequence(oracle, prompts[pi], cfg, layout, vocab,
                                         DecodeOptions{ temperature, decode_seed });
            } catch (const std::exception & e) {
                if (log != nullptr) {
                    log->skipped.push_back("prompt " + std::to_string(pi) + " rollout " +
                                           std::to_string(g) + ": decode failed: " + e.what());
                }
                continue;
            }

            RolloutRecord record;
            record.prompt = prompts[pi];
            record.completion.assign(result.state.tokens.begin() + layout.prompt_len,
                                     result.state.tokens.end());
            double reward = 0.0;
            try {
                reward = reward_fn(record.prompt, record.completion);
            } catch (const std::exception & e) {
                if (log != nullptr) {
                    log->skipped.push_back("prompt " + std::to_string(pi) + " rollout " +
                                           std::to_string(g) + ": reward failed: " + e.what());
                }
                continue;
            }
            if (!std::isfinite(reward)) {
                if (log != nullptr) {
                    log->skipped.push_back("prompt " + std::to_string(pi) + " rollout " +
                                           std::to_string(g) + ": non-finite reward");
                }
                continue;
            }
            record.reward = reward;
            record.grid = materialize_grid(record.completion, timesteps, weights, vocab.mask_id(),
                                           grid_seed);
            record.old_terms = block_likelihood_terms(policy, record.prompt, record.completion,
                                                      record.grid, layout, vocab.mask_id());
            group.records.push_back(std::move(record));
        }
        if (group.records.size() < 2) {
            if (log != nullptr) {
                log->skipped.push_back("prompt " + std::to_string(pi) +
                                       ": group dropped (fewer than two survivors)");
            }
            continue;
        }
        std::vector<double> rewards;
        for (const auto & r : group.records) {
            rewards.push_back(r.reward);
        }
        std::vector<double> adv = group_advantage(rewards);
        for (size_t k = 0; k < adv.size(); k++) {
            group.records[k].advantage = adv[k];
        }
        groups.push_back(std::move(group));
    }
    return groups;
}

struct EbpoStats {
    double objective     = 0.0;
    double clip_fraction = 0.0;
    double mean_reward   = 0.0;
};

// Clipped-surrogate ascent on the mean over all records, ratio estimated via
// the weighted block-conditional terms. Gradient flows only through records
// whose ratio is not pinned by the clip.
inline EbpoStats ebpo_update(ToyNet & theta, const std::vector<RolloutGroup> & groups,
                             const BlockLayout & layout, const ClipConfig & clip, int mask_id) {
    clip.validate();
    size_t n_records = 0;
    double reward_sum = 0.0;
    for (const auto & g : groups) {
        n_records += g.records.size();
        for (const auto & r : g.records) {
            reward_sum += r.reward;
        }
    }
    if (n_records == 0) {
        throw std::runtime_error("no rollout records");
    }

    const int P = layout.prompt_len;
    const int L = layout.gen_len();

    AttnMask         mask    = build_composite_mask(P, layout.block_size, layout.num_blocks);
    std::vector<int> pos_ids = composite_position_ids(P, L);

    EbpoStats stats;
    stats.mean_reward = reward_sum / static_cast<double>(n_records);

    std::vector<double> grad_step;
    std::vector<double> grad_record;
    for (int epoch = 0; epoch < clip.inner_epochs; epoch++) {
        grad_step.assign(theta.param_count(), 0.0);
        double objective = 0.0;
        long   clipped   = 0;

        for (const auto & group : groups) {
            for (const auto & record : group.records) {
                // new-policy terms and their gradient, one composite pass per level
                double cached_old = 0.0;
                for (size_t n = 0; n < record.grid.timesteps.size(); n++) {
                    for (int b = 0; b < layout.num_blocks; b++) {
                        cached_old += record.grid.weights[n] * record.old_terms[n][b];
                    }
                }

                grad_record.assign(theta.param_count(), 0.0);
                double log_ratio = -cached_old;
                for (size_t n = 0; n < record.grid.corrupted.size(); n++) {
                    const auto & corrupted = record.grid.corrupted[n];
                    std::vector<int> z;
                    z.reserve(P + 2 * L);
                    z.insert(z.end(), record.prompt.begin(), record.prompt.end());
                    z.insert(z.end(), corrupted.begin(), corrupted.end());
                    z.insert(z.end(), record.completion.begin(), record.completion.end());

                    std::vector<WeightedTarget> targets;
                    for (int i = 0; i < L; i++) {
                        if (corrupted[i] == mask_id) {
                            targets.push_back({ P + i, record.completion[i],
                                                record.grid.weights[n] });
                        }
                    }
                    ToyNet::Trace trace = theta.forward_trace(z, pos_ids, mask);
                    if (targets.empty()) {
                        continue;
                    }
                    std::vector<double> g;
                    double              weighted_nll = theta.loss_and_grad(trace, targets, g);
                    log_ratio += -weighted_nll;  // sum of weights * log p
                    for (size_t i = 0; i < g.size(); i++) {
                        grad_record[i] -= g[i];  // d(log p)/dtheta = -d(nll)/dtheta
                    }
                }

                double rho = std::exp(log_ratio);
                if (!std::isfinite(rho)) {
                    throw std::runtime_error("divergence");
                }
                double lo = 1.0 - clip.eps_low;
                double hi = 1.0 + clip.eps_high;
                double rho_clipped = std::min(std::max(rho, lo), hi);
                double surrogate =
                    std::min(rho * record.advantage, rho_clipped * record.advantage);
                objective += surrogate;
                if (rho < lo || rho > hi) {
                    clipped++;
                }

                bool gate = !((record.advantage > 0.0 && rho > hi) ||
                              (record.advantage < 0.0 && rho < lo));
                if (gate && record.advantage != 0.0) {
                    double coeff = record.advantage * rho / static_cast<double>(n_records);
                    for (size_t i = 0; i < grad_step.size(); i++) {
                        grad_step[i] += coeff * grad_record[i];
                    }
                }
            }
        }

        objective /= static_cast<double>(n_records);
        if (!std::isfinite(objective)) {
            throw std::runtime_error("divergence");
        }
        auto & params = theta.params();
        for (size_t i = 0; i < params.size(); i++) {
            params[i] += clip.lr * grad_step[i];
        }
        if (!theta.finite()) {
            throw std::runtime_error("divergence");
        }
        stats.objective     = objective;
        stats.clip_fraction = static_cast<double>(clipped) / static_cast<double>(n_records);
    }
    return stats;
}

}  // namespace draftedit
