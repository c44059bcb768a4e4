#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "draftedit/checks.hpp"
#include "draftedit/decode.hpp"
#include "draftedit/ebpo.hpp"
#include "draftedit/net.hpp"
#include "draftedit/train.hpp"
#include "draftedit/vocab.hpp"

namespace draftedit {

// Exit-code carriers: 2 for missing inputs, 3 for config/layout problems.
struct MissingInputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class TaskKind { None, Copy, Sort, Memorize };

inline std::string to_string(TaskKind t) {
    switch (t) {
        case TaskKind::Copy:
            return "copy";
        case TaskKind::Sort:
            return "sort";
        case TaskKind::Memorize:
            return "memorize";
        default:
            return "none";
    }
}

inline TaskKind task_from_string(const std::string & s) {
    if (s == "copy") {
        return TaskKind::Copy;
    }
    if (s == "sort") {
        return TaskKind::Sort;
    }
    if (s == "memorize") {
        return TaskKind::Memorize;
    }
    if (s == "none") {
        return TaskKind::None;
    }
    throw ConfigError("unknown task: " + s);
}

// Deterministic text tasks with programmatic scorers. A corpus line maps to a
// (prompt, target) pair; the memorize task keeps an empty prompt.
inline std::pair<std::string, std::string> task_example(TaskKind task, const std::string & line) {
    switch (task) {
        case TaskKind::Copy:
            return { line, line };
        case TaskKind::Sort: {
            std::string sorted = line;
            std::sort(sorted.begin(), sorted.end());
            return { line, sorted };
        }
        case TaskKind::Memorize:
            return { "", line };
        default:
            return { line, "" };
    }
}

struct RlConfig {
    int                 iterations       = 30;
    double              temperature      = 1.0;
    int                 prompts_per_iter = 6;
    std::vector<double> timesteps        = { 0.25, 0.5, 0.75, 1.0 };
    std::vector<double> weights          = { 0.25, 0.25, 0.25, 0.25 };

    nlohmann::json to_json() const {
        return nlohmann::json{ { "iterations", iterations },
                               { "temperature", temperature },
                               { "prompts_per_iter", prompts_per_iter },
                               { "timesteps", timesteps },
                               { "weights", weights } };
    }

    static RlConfig from_json(const nlohmann::json & j) {
        RlConfig c;
        if (j.contains("iterations")) c.iterations = j.at("iterations").get<int>();
        if (j.contains("temperature")) c.temperature = j.at("temperature").get<double>();
        if (j.contains("prompts_per_iter"))
            c.prompts_per_iter = j.at("prompts_per_iter").get<int>();
        if (j.contains("timesteps")) c.timesteps = j.at("timesteps").get<std::vector<double>>();
        if (j.contains("weights")) c.weights = j.at("weights").get<std::vector<double>>();
        return c;
    }
};

struct SweepConfig {
    std::vector<double> tau_mask;
    std::vector<double> tau_edit;

    nlohmann::json to_json() const {
        return nlohmann::json{ { "tau_mask", tau_mask }, { "tau_edit", tau_edit } };
    }

    static SweepConfig from_json(const nlohmann::json & j) {
        SweepConfig c;
        if (j.contains("tau_mask")) c.tau_mask = j.at("tau_mask").get<std::vector<double>>();
        if (j.contains("tau_edit")) c.tau_edit = j.at("tau_edit").get<std::vector<double>>();
        return c;
    }
};

struct Paths {
    std::string corpus, checkpoint, prompts, vocab, output_dir = "out";

    nlohmann::json to_json() const {
        return nlohmann::json{ { "corpus", corpus },
                               { "checkpoint", checkpoint },
                               { "prompts", prompts },
                               { "vocab", vocab },
                               { "output_dir", output_dir } };
    }

    static Paths from_json(const nlohmann::json & j) {
        Paths p;
        if (j.contains("corpus")) p.corpus = j.at("corpus").get<std::string>();
        if (j.contains("checkpoint")) p.checkpoint = j.at("checkpoint").get<std::string>();
        if (j.contains("prompts")) p.prompts = j.at("prompts").get<std::string>();
        if (j.contains("vocab")) p.vocab = j.at("vocab").get<std::string>();
        if (j.contains("output_dir")) p.output_dir = j.at("output_dir").get<std::string>();
        return p;
    }
};

struct RunConfig {
    std::string           mode = "decode";
    Paths                 paths;
    ThresholdConfig       threshold;
    BlockLayout           layout;
    std::vector<uint64_t> seeds       = { 1 };
    int                   repetitions = 1;
    TaskKind              task        = TaskKind::None;
    nlohmann::json        net         = nlohmann::json::object();  // partial NetConfig overrides
    TrainSchedule         train;
    ClipConfig            clip;
    RlConfig              rl;
    SweepConfig           sweep;

    nlohmann::json to_json() const {
        return nlohmann::json{ { "mode", mode },
                               { "paths", paths.to_json() },
                               { "threshold", threshold.to_json() },
                               { "layout", layout.to_json() },
                               { "seeds", seeds },
                               { "repetitions", repetitions },
                               { "task", to_string(task) },
                               { "net", net },
                               { "train", train.to_json() },
                               { "clip", clip.to_json() },
                               { "rl", rl.to_json() },
                               { "sweep", sweep.to_json() } };
    }

    static RunConfig from_json(const nlohmann::json & j) {
        RunConfig c;
        try {
            if (j.contains("mode")) c.mode = j.at("mode").get<std::string>();
            if (j.contains("paths")) c.paths = Paths::from_json(j.at("paths"));
            if (j.contains("threshold")) c.threshold = ThresholdConfig::from_json(j.at("threshold"));
            if (j.contains("layout")) c.layout = BlockLayout::from_json(j.at("layout"));
            if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
            if (j.contains("repetitions")) c.repetitions = j.at("repetitions").get<int>();
            if (j.contains("task")) c.task = task_from_string(j.at("task").get<std::string>());
            if (j.contains("net")) c.net = j.at("net");
            if (j.contains("train")) c.train = TrainSchedule::from_json(j.at("train"));
            if (j.contains("clip")) c.clip = ClipConfig::from_json(j.at("clip"));
            if (j.contains("rl")) c.rl = RlConfig::from_json(j.at("rl"));
            if (j.contains("sweep")) c.sweep = SweepConfig::from_json(j.at("sweep"));
        } catch (const ConfigError &) {
            throw;
        } catch (const std::exception & e) {
            throw ConfigError(std::string("bad config: ") + e.what());
        }
        if (c.seeds.empty()) {
            throw ConfigError("seeds must not be empty");
        }
        if (c.threshold.block_size != c.layout.block_size) {
            c.threshold.block_size = c.layout.block_size;
        }
        return c;
    }

    static RunConfig load(const std::string & path) {
        std::ifstream in(path);
        if (!in) {
            throw MissingInputError("cannot read config: " + path);
        }
        nlohmann::json j;
        try {
            in >> j;
        } catch (const std::exception & e) {
            throw ConfigError(std::string("bad config json: ") + e.what());
        }
        return from_json(j);
    }
};

// --- file helpers ------------------------------------------------------------

inline std::vector<std::string> read_lines(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        throw MissingInputError("cannot read file: " + path);
    }
    std::vector<std::string> lines;
    std::string              line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (!line.empty()) {
            lines.push_back(line);
        }
    }
    return lines;
}

inline void write_text(const std::string & path, const std::string & content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write file: " + path);
    }
    out << content;
}

inline int env_threads() {
    const char * env = std::getenv("DLM_THREADS");
    if (env == nullptr) {
        return 1;
    }
    int n = std::atoi(env);
    return n > 0 ? n : 1;
}

// --- task encoding and scoring -------------------------------------------------

// Full clean sequence for one (prompt, target) pair: prompt must fill the
// prompt region exactly; the target is truncated to leave room for EOS and
// PAD-filled to the block grid.
inline std::vector<int> build_example(const Vocabulary & vocab, const BlockLayout & layout,
                                      const std::string & prompt_text,
                                      const std::string & target_text) {
    std::vector<int> prompt = vocab.encode(prompt_text);
    if (static_cast<int>(prompt.size()) != layout.prompt_len) {
        throw ConfigError("layout mismatch: prompt '" + prompt_text + "' has " +
                          std::to_string(prompt.size()) + " tokens, layout expects " +
                          std::to_string(layout.prompt_len));
    }
    std::vector<int> target = vocab.encode(target_text);
    if (static_cast<int>(target.size()) > layout.gen_len() - 1) {
        target.resize(layout.gen_len() - 1);
    }
    std::vector<int> full = prompt;
    full.insert(full.end(), target.begin(), target.end());
    full.push_back(vocab.eos_id());
    full.resize(layout.total_len(), vocab.pad_id());
    return full;
}

// Expected generation region (target + EOS + PAD fill).
inline std::vector<int> expected_completion(const Vocabulary & vocab, const BlockLayout & layout,
                                            const std::string & target_text) {
    std::vector<int> target = vocab.encode(target_text);
    if (static_cast<int>(target.size()) > layout.gen_len() - 1) {
        target.resize(layout.gen_len() - 1);
    }
    target.push_back(vocab.eos_id());
    target.resize(layout.gen_len(), vocab.pad_id());
    return target;
}

// Exact-match score: generated tokens up to and including the first EOS must
// equal the expected ones.
inline bool exact_match(const Vocabulary & vocab, const std::vector<int> & generated,
                        const std::vector<int> & expected) {
    auto upto_eos = [&](const std::vector<int> & seq) {
        std::vector<int> out;
        for (int t : seq) {
            out.push_back(t);
            if (t == vocab.eos_id()) {
                break;
            }
        }
        return out;
    };
    return upto_eos(generated) == upto_eos(expected);
}

// Dense reward in [0, 1]: positionwise agreement over the expected span
// (target plus EOS).
inline double dense_reward(const Vocabulary & vocab, const std::vector<int> & generated,
                           const std::vector<int> & expected) {
    size_t span = 0;
    while (span < expected.size() && expected[span] != vocab.eos_id()) {
        span++;
    }
    span = std::min(span + 1, expected.size());  // include the EOS slot
    if (span == 0) {
        return 0.0;
    }
    size_t hits = 0;
    for (size_t i = 0; i < span; i++) {
        hits += i < generated.size() && generated[i] == expected[i];
    }
    return static_cast<double>(hits) / static_cast<double>(span);
}

// --- evaluation over a prompt set ------------------------------------------------

struct EvalOutcome {
    Metrics                     aggregate;
    std::vector<DecodeResult>   results;
    std::vector<bool>           matches;
    std::vector<double>         rewards;
};

// Decodes every prompt (DLM_THREADS-way prompt parallelism, outputs ordered)
// and scores against the task targets when provided.
inline EvalOutcome evaluate_prompts(const ModelOracle & oracle, const Vocabulary & vocab,
                                    const BlockLayout & layout, const ThresholdConfig & cfg,
                                    const std::vector<std::vector<int>> & prompts,
                                    const std::vector<std::vector<int>> & expected,
                                    uint64_t seed) {
    EvalOutcome outcome;
    outcome.results.resize(prompts.size());
    outcome.matches.assign(prompts.size(), false);
    outcome.rewards.assign(prompts.size(), 0.0);

    int threads = std::min<int>(env_threads(), static_cast<int>(prompts.size()));
    threads     = std::max(threads, 1);

    std::atomic<size_t> next{ 0 };
    std::vector<std::string> errors(std::max<size_t>(prompts.size(), 1));
    auto worker = [&]() {
        while (true) {
            size_t i = next.fetch_add(1);
            if (i >= prompts.size()) {
                return;
            }
            try {
                outcome.results[i] = decode_sequence(oracle, prompts[i], cfg, layout, vocab,
                                                     DecodeOptions{ 0.0, seed + i });
            } catch (const std::exception & e) {
                errors[i] = e.what();
            }
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; t++) {
            pool.emplace_back(worker);
        }
        for (auto & th : pool) {
            th.join();
        }
    }
    for (const auto & err : errors) {
        if (!err.empty()) {
            throw std::runtime_error(err);
        }
    }

    double score_sum = 0.0;
    for (size_t i = 0; i < prompts.size(); i++) {
        const auto & r = outcome.results[i];
        outcome.aggregate.tokens_generated += r.metrics.tokens_generated;
        outcome.aggregate.forwards_used += r.metrics.forwards_used;
        outcome.aggregate.edits_applied += r.metrics.edits_applied;
        outcome.aggregate.wall_time += r.metrics.wall_time;
        if (!expected.empty()) {
            std::vector<int> generated(r.state.tokens.begin() + layout.prompt_len,
                                       r.state.tokens.end());
            outcome.matches[i] = exact_match(vocab, generated, expected[i]);
            outcome.rewards[i] = dense_reward(vocab, generated, expected[i]);
            score_sum += outcome.matches[i] ? 1.0 : 0.0;
        }
    }
    outcome.aggregate.finalize();
    if (!expected.empty() && !prompts.empty()) {
        outcome.aggregate.task_score = score_sum / static_cast<double>(prompts.size());
    }
    return outcome;
}

// --- commands ----------------------------------------------------------------

namespace detail {

inline std::string out_path(const RunConfig & cfg, const std::string & name) {
    return (std::filesystem::path(cfg.paths.output_dir) / name).string();
}

inline std::string config_comment(const RunConfig & cfg) {
    return "# run_config: " + cfg.to_json().dump() + "\n";
}

inline NetConfig make_net_config(const RunConfig & cfg, const Vocabulary & vocab) {
    NetConfig nc;
    nc.vocab_size    = vocab.size();
    nc.block_size    = cfg.layout.block_size;
    nc.max_positions = cfg.layout.prompt_len + 2 * cfg.layout.gen_len();
    if (cfg.net.contains("width")) nc.width = cfg.net.at("width").get<int>();
    if (cfg.net.contains("heads")) nc.heads = cfg.net.at("heads").get<int>();
    if (cfg.net.contains("layers")) nc.layers = cfg.net.at("layers").get<int>();
    if (cfg.net.contains("ffn_mult")) nc.ffn_mult = cfg.net.at("ffn_mult").get<int>();
    if (cfg.net.contains("max_positions"))
        nc.max_positions = cfg.net.at("max_positions").get<int>();
    try {
        nc.validate();
    } catch (const std::exception & e) {
        throw ConfigError(e.what());
    }
    return nc;
}

inline std::string default_vocab_path(const RunConfig & cfg) {
    if (!cfg.paths.vocab.empty()) {
        return cfg.paths.vocab;
    }
    std::filesystem::path ck(cfg.paths.checkpoint);
    return (ck.parent_path() / "vocab.json").string();
}

struct LoadedModel {
    Vocabulary vocab;
    ToyNet     net;
};

inline LoadedModel load_model(const RunConfig & cfg) {
    if (cfg.paths.checkpoint.empty()) {
        throw MissingInputError("no checkpoint configured");
    }
    if (!std::filesystem::exists(cfg.paths.checkpoint)) {
        throw MissingInputError("missing checkpoint: " + cfg.paths.checkpoint);
    }
    std::string vocab_path = default_vocab_path(cfg);
    if (!std::filesystem::exists(vocab_path)) {
        throw MissingInputError("missing vocabulary: " + vocab_path);
    }
    Vocabulary vocab = Vocabulary::load(vocab_path);
    Checkpoint ck    = load_checkpoint(cfg.paths.checkpoint);
    if (ck.vocab_hash != vocab.hash()) {
        throw ConfigError("checkpoint/vocabulary hash mismatch");
    }
    return LoadedModel{ std::move(vocab), std::move(ck.net) };
}

// prompts + expected completions for a task evaluation file
inline void load_eval_set(const RunConfig & cfg, const Vocabulary & vocab,
                          const std::string & path, std::vector<std::vector<int>> & prompts,
                          std::vector<std::vector<int>> & expected) {
    auto lines = read_lines(path);
    if (lines.empty()) {
        throw MissingInputError("no prompts in " + path);
    }
    for (const auto & line : lines) {
        auto [prompt_text, target_text] = task_example(cfg.task, line);
        std::vector<int> prompt;
        try {
            prompt = vocab.encode(prompt_text);
        } catch (const std::exception & e) {
            throw ConfigError(e.what());
        }
        if (static_cast<int>(prompt.size()) != cfg.layout.prompt_len) {
            throw ConfigError("layout mismatch: prompt length " +
                              std::to_string(prompt.size()) + " != " +
                              std::to_string(cfg.layout.prompt_len));
        }
        prompts.push_back(std::move(prompt));
        if (cfg.task != TaskKind::None) {
            expected.push_back(expected_completion(vocab, cfg.layout, target_text));
        }
    }
}

inline std::string metrics_json_text(const RunConfig & cfg, const Metrics & aggregate,
                                     const std::vector<DecodeResult> & results,
                                     const std::vector<bool> &         matches) {
    nlohmann::json per_prompt = nlohmann::json::array();
    for (size_t i = 0; i < results.size(); i++) {
        nlohmann::json j = results[i].metrics.to_json();
        if (i < matches.size() && aggregate.task_score.has_value()) {
            j["match"] = static_cast<bool>(matches[i]);
        }
        per_prompt.push_back(j);
    }
    nlohmann::json doc{ { "run_config", cfg.to_json() },
                        { "seeds", cfg.seeds },
                        { "aggregate", aggregate.to_json() },
                        { "per_prompt", per_prompt } };
    return doc.dump(2) + "\n";
}

}  // namespace detail

// Train on a corpus, persist vocabulary + checkpoint + loss curve.
inline int cmd_train(const RunConfig & cfg) {
    if (cfg.paths.corpus.empty()) {
        throw MissingInputError("no corpus configured");
    }
    auto lines = read_lines(cfg.paths.corpus);
    if (lines.empty()) {
        throw MissingInputError("empty corpus: " + cfg.paths.corpus);
    }

    std::string all_text;
    for (const auto & line : lines) {
        all_text += line;
        all_text += "\n";
    }
    Vocabulary vocab = Vocabulary::build(all_text);

    std::vector<std::vector<int>> examples;
    for (const auto & line : lines) {
        auto [prompt_text, target_text] = task_example(cfg.task, line);
        examples.push_back(build_example(vocab, cfg.layout, prompt_text, target_text));
    }

    NetConfig     nc = detail::make_net_config(cfg, vocab);
    TrainSchedule schedule = cfg.train;
    schedule.seed          = cfg.seeds[0];
    ToyNet net(nc, schedule.seed);

    auto curve = train(net, examples, cfg.layout, vocab, schedule);

    std::filesystem::create_directories(cfg.paths.output_dir);
    vocab.save(detail::out_path(cfg, "vocab.json"));
    save_checkpoint(net, detail::out_path(cfg, "model.json"), detail::out_path(cfg, "model.bin"),
                    vocab.hash());

    std::ostringstream csv;
    csv << detail::config_comment(cfg);
    csv << "step,loss_total,loss_m2t,loss_t2t\n";
    char buf[128];
    for (const auto & p : curve) {
        std::snprintf(buf, sizeof(buf), "%d,%.9f,%.9f,%.9f\n", p.step, p.total, p.m2t, p.t2t);
        csv << buf;
    }
    write_text(detail::out_path(cfg, "loss.csv"), csv.str());

    nlohmann::json summary{ { "run_config", cfg.to_json() },
                            { "seeds", cfg.seeds },
                            { "param_count", net.param_count() },
                            { "final_loss", curve.back().total },
                            { "final_m2t", curve.back().m2t },
                            { "final_t2t", curve.back().t2t } };
    write_text(detail::out_path(cfg, "train_summary.json"), summary.dump(2) + "\n");

    std::cout << "train: " << curve.size() << " steps, " << net.param_count()
              << " params, final loss " << curve.back().total << " (m2t " << curve.back().m2t
              << ", t2t " << curve.back().t2t << ") -> " << cfg.paths.output_dir << "\n";
    return 0;
}

// Decode a prompt file, emit traces + metrics, print a one-line summary.
inline int cmd_decode(const RunConfig & cfg) {
    auto model = detail::load_model(cfg);
    if (cfg.paths.prompts.empty()) {
        throw MissingInputError("no prompts configured");
    }
    std::vector<std::vector<int>> prompts, expected;
    detail::load_eval_set(cfg, model.vocab, cfg.paths.prompts, prompts, expected);

    if (cfg.layout.prompt_len + cfg.layout.gen_len() > model.net.config().max_positions) {
        throw ConfigError("layout mismatch: sequence exceeds model positions");
    }

    NetOracle   oracle(model.net, cfg.layout.prompt_len);
    EvalOutcome outcome;
    for (int rep = 0; rep < std::max(1, cfg.repetitions); rep++) {
        outcome = evaluate_prompts(oracle, model.vocab, cfg.layout, cfg.threshold, prompts,
                                   expected, cfg.seeds[0]);
    }

    std::filesystem::create_directories(cfg.paths.output_dir);
    for (size_t i = 0; i < outcome.results.size(); i++) {
        std::ostringstream jsonl;
        jsonl << nlohmann::json{ { "run_config", cfg.to_json() }, { "seeds", cfg.seeds } }.dump()
              << "\n";
        jsonl << traces_to_jsonl(outcome.results[i].traces);
        char name[64];
        std::snprintf(name, sizeof(name), "trace_%04zu.jsonl", i);
        write_text(detail::out_path(cfg, name), jsonl.str());
    }
    write_text(detail::out_path(cfg, "metrics.json"),
               detail::metrics_json_text(cfg, outcome.aggregate, outcome.results,
                                         outcome.matches));

    std::cout << "decode: " << prompts.size() << " prompts, tpf " << outcome.aggregate.tpf
              << ", edits " << outcome.aggregate.edits_applied;
    if (outcome.aggregate.task_score) {
        std::cout << ", score " << *outcome.aggregate.task_score;
    }
    std::cout << " -> " << cfg.paths.output_dir << "\n";
    return 0;
}

// Threshold grid sweep; one CSV row per (tau_mask, tau_edit), sorted by tpf.
inline int cmd_sweep(const RunConfig & cfg) {
    if (cfg.sweep.tau_mask.empty() || cfg.sweep.tau_edit.empty()) {
        throw ConfigError("empty grid");
    }
    auto model = detail::load_model(cfg);
    if (cfg.paths.prompts.empty()) {
        throw MissingInputError("no prompts configured");
    }
    std::vector<std::vector<int>> prompts, expected;
    detail::load_eval_set(cfg, model.vocab, cfg.paths.prompts, prompts, expected);
    NetOracle oracle(model.net, cfg.layout.prompt_len);

    struct Row {
        double tau_mask, tau_edit, tpf, score;
        long   edits;
    };
    std::vector<Row> rows;
    for (double tm : cfg.sweep.tau_mask) {
        for (double te : cfg.sweep.tau_edit) {
            ThresholdConfig point = cfg.threshold;
            point.mode            = DecodeMode::Custom;
            point.tau_mask        = tm;
            point.tau_edit        = te;
            point.validate();
            EvalOutcome outcome = evaluate_prompts(oracle, model.vocab, cfg.layout, point,
                                                   prompts, expected, cfg.seeds[0]);
            rows.push_back({ tm, te, outcome.aggregate.tpf,
                             outcome.aggregate.task_score.value_or(0.0),
                             outcome.aggregate.edits_applied });
        }
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row & a, const Row & b) { return a.tpf < b.tpf; });

    std::ostringstream csv;
    csv << detail::config_comment(cfg);
    csv << "tau_mask,tau_edit,tpf,score,edits\n";
    char buf[160];
    for (const auto & r : rows) {
        std::snprintf(buf, sizeof(buf), "%.4f,%.4f,%.6f,%.6f,%ld\n", r.tau_mask, r.tau_edit,
                      r.tpf, r.score, r.edits);
        csv << buf;
    }
    std::filesystem::create_directories(cfg.paths.output_dir);
    write_text(detail::out_path(cfg, "sweep.csv"), csv.str());

    std::cout << "sweep: " << rows.size() << " grid points -> "
              << detail::out_path(cfg, "sweep.csv") << "\n";
    return 0;
}

// EBPO loop: on-policy rollouts with cached old terms, clipped-surrogate
// updates, CSV log + rollout dumps + final checkpoint.
inline int cmd_rl(const RunConfig & cfg) {
    auto model = detail::load_model(cfg);
    if (cfg.paths.prompts.empty() && cfg.paths.corpus.empty()) {
        throw MissingInputError("no prompts configured");
    }
    std::string prompt_path = cfg.paths.prompts.empty() ? cfg.paths.corpus : cfg.paths.prompts;
    std::vector<std::vector<int>> prompts, expected;
    detail::load_eval_set(cfg, model.vocab, prompt_path, prompts, expected);
    if (cfg.task == TaskKind::None) {
        throw ConfigError("rl requires a scored task");
    }

    // reward against the task target for the matching prompt
    std::map<std::vector<int>, std::vector<int>> target_of;
    for (size_t i = 0; i < prompts.size(); i++) {
        target_of[prompts[i]] = expected[i];
    }
    RewardFn reward = [&](const std::vector<int> & prompt, const std::vector<int> & completion) {
        return dense_reward(model.vocab, completion, target_of.at(prompt));
    };

    ToyNet policy = model.net;
    Rng    rng(cfg.seeds[0]);

    std::ostringstream log_csv;
    log_csv << detail::config_comment(cfg);
    log_csv << "iter,objective,mean_reward,clip_fraction\n";
    std::ostringstream rollout_jsonl;
    rollout_jsonl << nlohmann::json{ { "run_config", cfg.to_json() }, { "seeds", cfg.seeds } }
                         .dump()
                  << "\n";

    char buf[160];
    for (int iter = 0; iter < cfg.rl.iterations; iter++) {
        std::vector<std::vector<int>> batch;
        for (int k = 0; k < cfg.rl.prompts_per_iter; k++) {
            batch.push_back(prompts[std::uniform_int_distribution<size_t>(
                0, prompts.size() - 1)(rng)]);
        }
        auto groups = collect_rollouts(policy, batch, cfg.threshold, cfg.layout, model.vocab,
                                       cfg.clip.group_size, reward, cfg.rl.timesteps,
                                       cfg.rl.weights, cfg.rl.temperature, rng());
        if (groups.empty()) {
            continue;
        }
        EbpoStats stats = ebpo_update(policy, groups, cfg.layout, cfg.clip,
                                      model.vocab.mask_id());
        std::snprintf(buf, sizeof(buf), "%d,%.9f,%.9f,%.6f\n", iter, stats.objective,
                      stats.mean_reward, stats.clip_fraction);
        log_csv << buf;
        for (const auto & group : groups) {
            for (const auto & record : group.records) {
                rollout_jsonl << record.to_json().dump() << "\n";
            }
        }
    }

    std::filesystem::create_directories(cfg.paths.output_dir);
    write_text(detail::out_path(cfg, "rl_log.csv"), log_csv.str());
    write_text(detail::out_path(cfg, "rollouts.jsonl"), rollout_jsonl.str());
    model.vocab.save(detail::out_path(cfg, "vocab.json"));
    save_checkpoint(policy, detail::out_path(cfg, "rl_model.json"),
                    detail::out_path(cfg, "rl_model.bin"), model.vocab.hash());

    // before/after greedy evaluation on the prompt set
    NetOracle before(model.net, cfg.layout.prompt_len);
    NetOracle after(policy, cfg.layout.prompt_len);
    auto eval_before = evaluate_prompts(before, model.vocab, cfg.layout, cfg.threshold, prompts,
                                        expected, cfg.seeds[0]);
    auto eval_after = evaluate_prompts(after, model.vocab, cfg.layout, cfg.threshold, prompts,
                                       expected, cfg.seeds[0]);
    double reward_before = 0.0, reward_after = 0.0;
    for (size_t i = 0; i < prompts.size(); i++) {
        reward_before += eval_before.rewards[i];
        reward_after += eval_after.rewards[i];
    }
    reward_before /= prompts.size();
    reward_after /= prompts.size();

    nlohmann::json summary{ { "run_config", cfg.to_json() },
                            { "seeds", cfg.seeds },
                            { "mean_reward_before", reward_before },
                            { "mean_reward_after", reward_after } };
    write_text(detail::out_path(cfg, "rl_summary.json"), summary.dump(2) + "\n");

    std::cout << "rl: " << cfg.rl.iterations << " iterations, mean reward " << reward_before
              << " -> " << reward_after << " (" << cfg.paths.output_dir << ")\n";
    return 0;
}

// Invariant suite (+ optional checkpoint finiteness); exit 1 on any failure.
inline int cmd_check(const RunConfig & cfg) {
    std::vector<CheckResult> results;

    if (!cfg.paths.checkpoint.empty()) {
        if (!std::filesystem::exists(cfg.paths.checkpoint)) {
            throw MissingInputError("missing checkpoint: " + cfg.paths.checkpoint);
        }
        Checkpoint ck = load_checkpoint(cfg.paths.checkpoint);
        results.push_back({ "finite parameters", ck.net.finite(),
                            ck.net.finite() ? "all parameters finite" : "divergence" });
    }

    auto suite = run_invariant_suite(cfg.seeds[0]);
    results.insert(results.end(), suite.begin(), suite.end());

    bool all_ok = true;
    std::printf("%-32s %-6s %s\n", "check", "status", "detail");
    for (const auto & r : results) {
        std::printf("%-32s %-6s %s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL",
                    r.detail.c_str());
        all_ok &= r.passed;
    }
    return all_ok ? 0 : 1;
}

inline int run_command(const RunConfig & cfg) {
    if (cfg.mode == "train") {
        return cmd_train(cfg);
    }
    if (cfg.mode == "decode") {
        return cmd_decode(cfg);
    }
    if (cfg.mode == "sweep") {
        return cmd_sweep(cfg);
    }
    if (cfg.mode == "rl") {
        return cmd_rl(cfg);
    }
    if (cfg.mode == "check") {
        return cmd_check(cfg);
    }
    throw ConfigError("unknown mode: " + cfg.mode);
}

}  // namespace draftedit
