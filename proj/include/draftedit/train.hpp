#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "draftedit/corruption.hpp"
#include "draftedit/net.hpp"
#include "draftedit/vocab.hpp"

namespace draftedit {

// Mixture of the drafting (masked-position) and editing (noised-position)
// cross-entropy streams. An empty stream contributes zero and hands its
// weight to the other one.
struct DualStreamLoss {
    double m2t_loss   = 0.0;
    double t2t_loss   = 0.0;
    double lambda_t2t = 0.5;
    double total      = 0.0;
};

namespace detail {

// Per-position loss weights for the mixture; throws when nothing is supervised.
inline std::vector<WeightedTarget> dual_stream_targets(const CorruptedPair & pair,
                                                       double lambda_t2t, double & w_m2t,
                                                       double & w_t2t) {
    const size_t nm = pair.m2t_positions.size();
    const size_t nt = pair.t2t_positions.size();
    if (nm == 0 && nt == 0) {
        throw std::runtime_error("no supervised positions");
    }
    w_m2t = nt == 0 ? 1.0 : (1.0 - lambda_t2t);
    w_t2t = nm == 0 ? 1.0 : lambda_t2t;

    std::vector<WeightedTarget> targets;
    targets.reserve(nm + nt);
    for (int pos : pair.m2t_positions) {
        targets.push_back({ pos, pair.clean[pos], w_m2t / static_cast<double>(nm) });
    }
    for (int pos : pair.t2t_positions) {
        targets.push_back({ pos, pair.clean[pos], w_t2t / static_cast<double>(nt) });
    }
    return targets;
}

inline ToyNet::Trace pair_forward(const ToyNet & net, const CorruptedPair & pair,
                                  int prompt_len) {
    const int T = static_cast<int>(pair.corrupted.size());
    if (prompt_len < 0 || prompt_len > T ||
        (T - prompt_len) % net.config().block_size != 0) {
        throw std::runtime_error("layout mismatch");
    }
    int      num_blocks = (T - prompt_len) / net.config().block_size;
    AttnMask mask = build_block_causal_mask(prompt_len, net.config().block_size, num_blocks);
    std::vector<int> pos_ids(T);
    for (int t = 0; t < T; t++) {
        pos_ids[t] = t;
    }
    return net.forward_trace(pair.corrupted, pos_ids, mask);
}

// A non-owning oracle over a net being trained; the net must stay frozen for
// the duration of each predict call.
class NetRefOracle : public ModelOracle {
  public:
    NetRefOracle(const ToyNet & net, int prompt_len) : net_(net), prompt_len_(prompt_len) {}

    int vocab_size() const override { return net_.config().vocab_size; }

    ProbGrid predict(const std::vector<int> & tokens,
                     const std::vector<int> & scope) const override {
        return net_.forward(tokens, prompt_len_, scope);
    }

  private:
    const ToyNet & net_;
    int            prompt_len_;
};

}  // namespace detail

inline DualStreamLoss dual_stream_loss(const ToyNet & net, const CorruptedPair & pair,
                                       double lambda_t2t, int prompt_len) {
    double w_m2t = 0.0, w_t2t = 0.0;
    detail::dual_stream_targets(pair, lambda_t2t, w_m2t, w_t2t);  // validates supervision
    auto trace = detail::pair_forward(net, pair, prompt_len);

    DualStreamLoss out;
    out.lambda_t2t = lambda_t2t;
    for (int pos : pair.m2t_positions) {
        out.m2t_loss += -net.log_prob_sum(trace, { { pos, pair.clean[pos], 1.0 } }) /
                        pair.m2t_positions.size();
    }
    for (int pos : pair.t2t_positions) {
        out.t2t_loss += -net.log_prob_sum(trace, { { pos, pair.clean[pos], 1.0 } }) /
                        pair.t2t_positions.size();
    }
    out.total = w_m2t * out.m2t_loss + w_t2t * out.t2t_loss;
    return out;
}

// Loss plus parameter gradient in one backward pass.
inline DualStreamLoss dual_stream_loss_grad(const ToyNet & net, const CorruptedPair & pair,
                                            double lambda_t2t, int prompt_len,
                                            std::vector<double> & grad) {
    double w_m2t = 0.0, w_t2t = 0.0;
    auto   targets = detail::dual_stream_targets(pair, lambda_t2t, w_m2t, w_t2t);
    auto   trace   = detail::pair_forward(net, pair, prompt_len);

    DualStreamLoss out;
    out.lambda_t2t = lambda_t2t;
    out.total      = net.loss_and_grad(trace, targets, grad);
    for (int pos : pair.m2t_positions) {
        out.m2t_loss += -net.log_prob_sum(trace, { { pos, pair.clean[pos], 1.0 } }) /
                        pair.m2t_positions.size();
    }
    for (int pos : pair.t2t_positions) {
        out.t2t_loss += -net.log_prob_sum(trace, { { pos, pair.clean[pos], 1.0 } }) /
                        pair.t2t_positions.size();
    }
    return out;
}

// Full-sequence training pair: the prompt region stays clean, the generation
// region is corrupted; supervision positions are absolute.
inline CorruptedPair make_training_pair(const std::vector<int> & full_clean, int prompt_len,
                                        const Vocabulary & vocab, double mask_rate,
                                        double noise_rate, uint64_t seed) {
    std::vector<int> gen(full_clean.begin() + prompt_len, full_clean.end());
    CorruptedPair    region = corrupt(gen, vocab, mask_rate, noise_rate, seed);

    CorruptedPair pair;
    pair.clean     = full_clean;
    pair.corrupted = full_clean;
    std::copy(region.corrupted.begin(), region.corrupted.end(),
              pair.corrupted.begin() + prompt_len);
    for (int pos : region.m2t_positions) {
        pair.m2t_positions.push_back(pos + prompt_len);
    }
    for (int pos : region.t2t_positions) {
        pair.t2t_positions.push_back(pos + prompt_len);
    }
    return pair;
}

struct TrainSchedule {
    double   mask_rate  = 0.4;
    double   noise_rate = 0.2;
    double   lambda_t2t = 0.5;
    int      mtf_rounds = 0;
    double   lr         = 0.2;
    double   momentum   = 0.5;
    int      batch_size = 1;
    int      steps      = 500;
    uint64_t seed       = 1;

    nlohmann::json to_json() const {
        return nlohmann::json{ { "mask_rate", mask_rate },   { "noise_rate", noise_rate },
                               { "lambda_t2t", lambda_t2t }, { "mtf_rounds", mtf_rounds },
                               { "lr", lr },                 { "momentum", momentum },
                               { "batch_size", batch_size },
                               { "steps", steps },           { "seed", seed } };
    }

    static TrainSchedule from_json(const nlohmann::json & j) {
        TrainSchedule s;
        if (j.contains("mask_rate")) s.mask_rate = j.at("mask_rate").get<double>();
        if (j.contains("noise_rate")) s.noise_rate = j.at("noise_rate").get<double>();
        if (j.contains("lambda_t2t")) s.lambda_t2t = j.at("lambda_t2t").get<double>();
        if (j.contains("mtf_rounds")) s.mtf_rounds = j.at("mtf_rounds").get<int>();
        if (j.contains("lr")) s.lr = j.at("lr").get<double>();
        if (j.contains("momentum")) s.momentum = j.at("momentum").get<double>();
        if (j.contains("batch_size")) s.batch_size = j.at("batch_size").get<int>();
        if (j.contains("steps")) s.steps = j.at("steps").get<int>();
        if (j.contains("seed")) s.seed = j.at("seed").get<uint64_t>();
        return s;
    }
};

struct LossPoint {
    int    step = 0;
    double total = 0.0, m2t = 0.0, t2t = 0.0;
};

// Gradient descent (optional momentum) over corrupt(+MTF) batches drawn from
// layout-shaped clean sequences. Deterministic given the schedule seed.
inline std::vector<LossPoint> train(ToyNet & net, const std::vector<std::vector<int>> & examples,
                                    const BlockLayout & layout, const Vocabulary & vocab,
                                    const TrainSchedule & schedule) {
    if (examples.empty()) {
        throw std::runtime_error("empty corpus");
    }
    if (schedule.steps < 1) {
        throw std::runtime_error("steps must be positive");
    }
    for (const auto & ex : examples) {
        if (static_cast<int>(ex.size()) != layout.total_len()) {
            throw std::runtime_error("layout mismatch");
        }
    }

    const int batch = std::max(1, schedule.batch_size);

    std::vector<LossPoint> curve;
    curve.reserve(schedule.steps);
    std::vector<double> velocity(net.param_count(), 0.0);
    std::vector<double> grad_sum(net.param_count(), 0.0);
    std::vector<double> grad;
    Rng                 rng(schedule.seed);

    for (int step = 0; step < schedule.steps; step++) {
        std::fill(grad_sum.begin(), grad_sum.end(), 0.0);
        LossPoint point{ step, 0.0, 0.0, 0.0 };
        for (int k = 0; k < batch; k++) {
            const auto & example =
                examples[std::uniform_int_distribution<size_t>(0, examples.size() - 1)(rng)];
            CorruptedPair pair =
                make_training_pair(example, layout.prompt_len, vocab, schedule.mask_rate,
                                   schedule.noise_rate, rng());
            for (int retry = 0; retry < 8 && pair.m2t_positions.empty() &&
                                pair.t2t_positions.empty();
                 retry++) {
                pair = make_training_pair(example, layout.prompt_len, vocab, schedule.mask_rate,
                                          schedule.noise_rate, rng());
            }
            if (schedule.mtf_rounds > 0) {
                detail::NetRefOracle oracle(net, layout.prompt_len);
                CorruptedPair        augmented =
                    mtf_augment(oracle, vocab, pair, schedule.mtf_rounds, rng());
                // MTF can resolve every position; fall back to the raw corruption
                if (!augmented.m2t_positions.empty() || !augmented.t2t_positions.empty()) {
                    pair = std::move(augmented);
                }
            }

            DualStreamLoss loss =
                dual_stream_loss_grad(net, pair, schedule.lambda_t2t, layout.prompt_len, grad);
            if (!std::isfinite(loss.total)) {
                throw std::runtime_error("divergence at step " + std::to_string(step));
            }
            point.total += loss.total / batch;
            point.m2t += loss.m2t_loss / batch;
            point.t2t += loss.t2t_loss / batch;
            for (size_t i = 0; i < grad_sum.size(); i++) {
                grad_sum[i] += grad[i] / batch;
            }
        }

        auto & params = net.params();
        if (schedule.momentum > 0.0) {
            for (size_t i = 0; i < params.size(); i++) {
                velocity[i] = schedule.momentum * velocity[i] + grad_sum[i];
                params[i] -= schedule.lr * velocity[i];
            }
        } else {
            for (size_t i = 0; i < params.size(); i++) {
                params[i] -= schedule.lr * grad_sum[i];
            }
        }
        if (!net.finite()) {
            throw std::runtime_error("divergence at step " + std::to_string(step));
        }
        curve.push_back(point);
    }
    return curve;
}

// Worst relative error between the analytic gradient of the dual-stream loss
// and central finite differences over a random parameter subset.
inline double grad_check(const ToyNet & net, const CorruptedPair & pair, int prompt_len,
                         double lambda_t2t = 0.5, int max_indices = 128, uint64_t seed = 7) {
    if (net.param_count() > 100000) {
        throw std::runtime_error("net too large for grad_check");
    }
    std::vector<double> analytic;
    dual_stream_loss_grad(net, pair, lambda_t2t, prompt_len, analytic);

    std::vector<size_t> indices(net.param_count());
    for (size_t i = 0; i < indices.size(); i++) {
        indices[i] = i;
    }
    Rng rng(seed);
    std::shuffle(indices.begin(), indices.end(), rng);
    if (static_cast<int>(indices.size()) > max_indices) {
        indices.resize(max_indices);
    }

    const double h = 1e-5;
    ToyNet       probe = net;
    double       worst = 0.0;
    for (size_t idx : indices) {
        double saved = probe.params()[idx];
        probe.params()[idx] = saved + h;
        double lp = dual_stream_loss(probe, pair, lambda_t2t, prompt_len).total;
        probe.params()[idx] = saved - h;
        double lm = dual_stream_loss(probe, pair, lambda_t2t, prompt_len).total;
        probe.params()[idx] = saved;

        double numeric = (lp - lm) / (2.0 * h);
        double err = std::fabs(analytic[idx] - numeric) /
                     std::max(1e-8, std::fabs(analytic[idx]) + std::fabs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

// --- checkpoints -------------------------------------------------------------
// JSON header (hyperparameters + vocabulary hash) next to a flat little-endian
// float64 parameter file.

inline void save_checkpoint(const ToyNet & net, const std::string & json_path,
                            const std::string & bin_path, const std::string & vocab_hash) {
    std::string bin_name = bin_path;
    auto        slash    = bin_name.find_last_of('/');
    if (slash != std::string::npos) {
        bin_name = bin_name.substr(slash + 1);
    }
    nlohmann::json header{ { "config", net.config().to_json() },
                           { "vocab_hash", vocab_hash },
                           { "param_count", net.param_count() },
                           { "param_file", bin_name } };
    std::ofstream  jf(json_path);
    if (!jf) {
        throw std::runtime_error("cannot write checkpoint: " + json_path);
    }
    jf << header.dump(2) << "\n";

    std::ofstream bf(bin_path, std::ios::binary);
    if (!bf) {
        throw std::runtime_error("cannot write checkpoint: " + bin_path);
    }
    bf.write(reinterpret_cast<const char *>(net.params().data()),
             static_cast<std::streamsize>(net.param_count() * sizeof(double)));
}

struct Checkpoint {
    ToyNet      net;
    std::string vocab_hash;
};

inline Checkpoint load_checkpoint(const std::string & json_path) {
    std::ifstream jf(json_path);
    if (!jf) {
        throw std::runtime_error("cannot read checkpoint: " + json_path);
    }
    nlohmann::json header;
    jf >> header;

    NetConfig cfg = NetConfig::from_json(header.at("config"));
    ToyNet    net(cfg, 0);
    size_t    count = header.at("param_count").get<size_t>();
    if (count != net.param_count()) {
        throw std::runtime_error("checkpoint parameter count mismatch");
    }

    std::string dir;
    auto        slash = json_path.find_last_of('/');
    if (slash != std::string::npos) {
        dir = json_path.substr(0, slash + 1);
    }
    std::string   bin_path = dir + header.at("param_file").get<std::string>();
    std::ifstream bf(bin_path, std::ios::binary);
    if (!bf) {
        throw std::runtime_error("cannot read checkpoint: " + bin_path);
    }
    bf.read(reinterpret_cast<char *>(net.params().data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (static_cast<size_t>(bf.gcount()) != count * sizeof(double)) {
        throw std::runtime_error("checkpoint truncated: " + bin_path);
    }
    return Checkpoint{ std::move(net), header.at("vocab_hash").get<std::string>() };
}

}  // namespace draftedit
