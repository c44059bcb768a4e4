#include <doctest.h>

#include <set>

#include "draftedit/decode.hpp"
#include "draftedit/reference.hpp"

using namespace draftedit;

namespace {

Vocabulary letters(int n) {
    std::string corpus;
    for (int i = 0; i < n; i++) {
        corpus += static_cast<char>('a' + i);
    }
    return Vocabulary::build(corpus);
}

std::vector<double> row_of(int vocab, std::initializer_list<std::pair<int, double>> mass) {
    std::vector<double> row(vocab, 0.0);
    double              assigned = 0.0;
    for (auto [tok, p] : mass) {
        row[tok] = p;
        assigned += p;
    }
    // spread the remainder over untouched entries to keep the row valid
    int untouched = 0;
    for (double p : row) {
        untouched += p == 0.0;
    }
    if (untouched > 0) {
        for (double & p : row) {
            if (p == 0.0) {
                p = (1.0 - assigned) / untouched;
            }
        }
    }
    return row;
}

// Step-by-step simulator written independently of the engine: direct scan of
// the raw rows, literal set definitions, single-commit fallback.
struct SimResult {
    std::vector<int>              tokens;
    std::vector<std::vector<int>> step_tokens;
    long                          forwards = 0;
    long                          edits    = 0;
    long                          commits  = 0;
};

SimResult simulate_block(const ModelOracle & oracle, std::vector<int> tokens,
                         const std::vector<int> & scope, const ThresholdConfig & cfg,
                         const Vocabulary & vocab) {
    SimResult        sim;
    std::vector<int> edit_count(tokens.size(), 0);
    for (int step = 0; step < cfg.max_steps_per_block; step++) {
        ProbGrid probs = oracle.predict(tokens, scope);
        sim.forwards++;

        std::vector<std::pair<int, int>> commits;  // (pos, token)
        std::vector<std::pair<int, int>> edits;
        int                              best_pos = -1;
        double                           best_p   = -1.0;
        int                              best_tok = -1;
        for (int pos : scope) {
            const auto & row = probs.row_at(pos);
            int          top = -1;
            for (size_t v = 0; v < row.size(); v++) {
                if (static_cast<int>(v) == vocab.mask_id()) {
                    continue;
                }
                if (top < 0 || row[v] > row[top]) {
                    top = static_cast<int>(v);
                }
            }
            if (tokens[pos] == vocab.mask_id()) {
                if (row[top] > cfg.tau_mask) {
                    commits.push_back({ pos, top });
                } else if (row[top] > best_p) {
                    best_p   = row[top];
                    best_pos = pos;
                    best_tok = top;
                }
            } else if (tokens[pos] != top && row[top] > cfg.tau_edit &&
                       edit_count[pos] < cfg.edit_budget_per_position) {
                edits.push_back({ pos, top });
            }
        }
        if (commits.empty() && cfg.fallback_commit && best_pos >= 0) {
            commits.push_back({ best_pos, best_tok });
        }
        for (auto [pos, tok] : commits) {
            tokens[pos] = tok;
            sim.commits++;
        }
        for (auto [pos, tok] : edits) {
            tokens[pos] = tok;
            edit_count[pos]++;
            sim.edits++;
        }
        sim.step_tokens.push_back(tokens);

        bool masked = false;
        for (int pos : scope) {
            masked |= tokens[pos] == vocab.mask_id();
        }
        if (!masked && edits.empty()) {
            break;
        }
    }
    sim.tokens = tokens;
    return sim;
}

// Fixture: 1-token prompt, one block of four, commits and an edit spread over
// three steps. Shared by the engine/simulator comparison and the
// context-keyed table oracle example.
std::shared_ptr<TableOracle> four_token_fixture(const Vocabulary & v) {
    const int a = 0, b = 1, c = 2, d = 3;
    auto      oracle = std::make_shared<TableOracle>(v.size());
    oracle->set_default_row(1, row_of(v.size(), { { b, 0.7 } }));
    oracle->set_default_row(2, row_of(v.size(), { { c, 0.5 }, { a, 0.3 } }));
    oracle->set_default_row(3, row_of(v.size(), { { d, 0.65 } }));
    oracle->set_default_row(4, row_of(v.size(), { { a, 0.55 } }));

    std::vector<int> after_step1 = { a, b, v.mask_id(), d, v.mask_id() };
    oracle->set_context_row(after_step1, 1, row_of(v.size(), { { c, 0.9 } }));
    oracle->set_context_row(after_step1, 2, row_of(v.size(), { { c, 0.7 } }));
    oracle->set_context_row(after_step1, 4, row_of(v.size(), { { a, 0.5 } }));

    std::vector<int> after_step2 = { a, c, c, d, v.mask_id() };
    oracle->set_context_row(after_step2, 1, row_of(v.size(), { { c, 0.95 } }));
    oracle->set_context_row(after_step2, 2, row_of(v.size(), { { c, 0.9 } }));
    oracle->set_context_row(after_step2, 4, row_of(v.size(), { { b, 0.62 } }));
    return oracle;
}

}  // namespace

TEST_CASE("prob grid: argmax ties break to the lowest token id") {
    ProbGrid grid({ 0 }, { { 0.4, 0.4, 0.2 } });
    CHECK(grid.top_at(0) == 0);
    CHECK(grid.top_prob_at(0) == doctest::Approx(0.4));
}

TEST_CASE("prob grid: invalid rows rejected") {
    ProbGrid bad({ 0 }, { { 0.5, 0.2, 0.2 } });
    CHECK_THROWS_WITH(bad.validate(), "invalid distribution");
    TableOracle oracle(3);
    CHECK_THROWS_WITH(oracle.set_default_row(0, { 0.9, 0.3, 0.1 }), "invalid distribution");
}

TEST_CASE("table oracle: uniform rows give top probability 1/V") {
    TableOracle oracle(5);
    ProbGrid    grid = oracle.predict({ 0, 0, 0 }, { 0, 1, 2 });
    grid.validate();
    for (int pos : { 0, 1, 2 }) {
        CHECK(grid.top_prob_at(pos) == doctest::Approx(0.2));
        CHECK(grid.top_at(pos) == 0);
    }
}

TEST_CASE("table oracle: delta rows commit everything in one step") {
    Vocabulary  v = letters(4);
    BlockLayout layout{ 0, 4, 1 };
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 4; i++) {
        std::vector<double> row(v.size(), 0.0);
        row[i] = 1.0;
        rows.push_back(row);
    }
    auto oracle = make_table_oracle(v.size(), rows);

    ThresholdConfig cfg;
    cfg.block_size = 4;
    cfg.tau_mask   = 0.99;  // p = 1 > any tau < 1
    cfg.tau_edit   = 1.0;

    DecodeResult result = decode_sequence(*oracle, {}, cfg, layout, v);
    CHECK(result.metrics.forwards_used == 1);
    CHECK(result.state.tokens == std::vector<int>{ 0, 1, 2, 3 });
}

TEST_CASE("compute_update_sets: unmasking fires, editing stays quiet") {
    Vocabulary  v = letters(3);  // a b c MASK EOS PAD
    BlockLayout layout{ 0, 3, 1 };
    DecodeState st = make_decode_state({}, layout, v.mask_id());
    st.tokens      = { 0, v.mask_id(), 1 };
    st.status      = { PosStatus::Committed, PosStatus::Masked, PosStatus::Committed };

    ProbGrid probs({ 0, 1, 2 }, { row_of(v.size(), { { 0, 0.9 } }),
                                  row_of(v.size(), { { 2, 0.8 } }),
                                  row_of(v.size(), { { 2, 0.7 } }) });
    ThresholdConfig cfg;
    cfg.tau_mask = 0.75;
    cfg.tau_edit = 0.75;

    UpdateSets sets = compute_update_sets(st, probs, cfg, { 0, 1, 2 }, v.mask_id());
    CHECK(sets.gamma == std::vector<int>{ 1 });
    CHECK(sets.delta.empty());
}

TEST_CASE("compute_update_sets: vacuous when everything agrees") {
    Vocabulary  v = letters(3);
    BlockLayout layout{ 0, 2, 1 };
    DecodeState st = make_decode_state({}, layout, v.mask_id());
    st.tokens      = { 0, 1 };
    st.status      = { PosStatus::Committed, PosStatus::Committed };

    ProbGrid probs({ 0, 1 },
                   { row_of(v.size(), { { 0, 0.99 } }), row_of(v.size(), { { 1, 0.99 } }) });
    ThresholdConfig cfg;
    UpdateSets      sets = compute_update_sets(st, probs, cfg, { 0, 1 }, v.mask_id());
    CHECK(sets.gamma.empty());
    CHECK(sets.delta.empty());
}

TEST_CASE("compute_update_sets: tau_mask 0 admits every masked position") {
    Vocabulary  v = letters(4);
    BlockLayout layout{ 0, 4, 1 };
    DecodeState st = make_decode_state({}, layout, v.mask_id());

    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 4; i++) {
        rows.push_back(row_of(v.size(), { { i, 0.3 } }));
    }
    ProbGrid        probs({ 0, 1, 2, 3 }, rows);
    ThresholdConfig cfg;
    cfg.tau_mask = 0.0;
    UpdateSets sets = compute_update_sets(st, probs, cfg, { 0, 1, 2, 3 }, v.mask_id());
    CHECK(sets.gamma.size() == 4);
}

TEST_CASE("compute_update_sets: prompt positions are immutable") {
    Vocabulary  v = letters(3);
    BlockLayout layout{ 1, 2, 1 };
    DecodeState st = make_decode_state({ 0 }, layout, v.mask_id());
    ProbGrid    probs({ 0, 1, 2 }, { row_of(v.size(), { { 0, 0.9 } }),
                                     row_of(v.size(), { { 1, 0.9 } }),
                                     row_of(v.size(), { { 1, 0.9 } }) });
    ThresholdConfig cfg;
    CHECK_THROWS_WITH(compute_update_sets(st, probs, cfg, { 0, 1 }, v.mask_id()),
                      "prompt positions immutable");
}

TEST_CASE("compute_update_sets: threshold monotonicity") {
    Vocabulary  v = letters(5);
    BlockLayout layout{ 0, 6, 1 };
    Rng         rng(5150);
    for (int trial = 0; trial < 100; trial++) {
        DecodeState st = make_decode_state({}, layout, v.mask_id());
        std::vector<std::vector<double>> rows;
        std::vector<int>                 scope;
        for (int i = 0; i < 6; i++) {
            scope.push_back(i);
            if (uniform_unit(rng) < 0.5) {
                st.tokens[i] = static_cast<int>(rng() % (v.size() - 3));
                st.status[i] = PosStatus::Committed;
            }
            std::vector<double> row(v.size(), 0.0);
            double              sum = 0.0;
            for (int t = 0; t < v.size() - 3; t++) {
                row[t] = uniform_unit(rng) + 1e-3;
                sum += row[t];
            }
            for (double & p : row) {
                p /= sum;
            }
            rows.push_back(row);
        }
        ProbGrid probs(scope, rows);

        double lo = uniform_unit(rng), hi = uniform_unit(rng);
        if (lo > hi) {
            std::swap(lo, hi);
        }
        ThresholdConfig loose, tight;
        loose.tau_mask = lo;
        loose.tau_edit = lo;
        tight.tau_mask = hi;
        tight.tau_edit = hi;

        UpdateSets    wide   = compute_update_sets(st, probs, loose, scope, v.mask_id());
        UpdateSets    narrow = compute_update_sets(st, probs, tight, scope, v.mask_id());
        std::set<int> wide_g(wide.gamma.begin(), wide.gamma.end());
        std::set<int> wide_d(wide.delta.begin(), wide.delta.end());
        for (int pos : narrow.gamma) {
            CHECK(wide_g.count(pos) == 1);
        }
        for (int pos : narrow.delta) {
            CHECK(wide_d.count(pos) == 1);
        }
    }
}

TEST_CASE("apply_transition: empty sets leave tokens alone") {
    Vocabulary  v = letters(3);
    BlockLayout layout{ 0, 3, 1 };
    DecodeState st = make_decode_state({}, layout, v.mask_id());
    ProbGrid    probs({ 0, 1, 2 }, { row_of(v.size(), { { 0, 0.9 } }),
                                     row_of(v.size(), { { 1, 0.9 } }),
                                     row_of(v.size(), { { 2, 0.9 } }) });
    DecodeState next = apply_transition(st, {}, probs, v.mask_id());
    CHECK(next.tokens == st.tokens);
    CHECK(next.tokens_generated == 0);
    CHECK(next.edits_applied == 0);
}

TEST_CASE("apply_transition: commit then edit") {
    Vocabulary  v = letters(4);  // a b c d
    BlockLayout layout{ 0, 3, 1 };
    DecodeState st = make_decode_state({}, layout, v.mask_id());
    st.tokens      = { 0, v.mask_id(), 1 };
    st.status      = { PosStatus::Committed, PosStatus::Masked, PosStatus::Committed };

    ProbGrid probs({ 0, 1, 2 }, { row_of(v.size(), { { 0, 0.9 } }),
                                  row_of(v.size(), { { 2, 0.9 } }),
                                  row_of(v.size(), { { 3, 0.9 } }) });

    UpdateSets  commit{ { 1 }, {} };
    DecodeState after = apply_transition(st, commit, probs, v.mask_id());
    CHECK(after.tokens == std::vector<int>{ 0, 2, 1 });
    CHECK(after.status[1] == PosStatus::Committed);
    CHECK(after.tokens_generated == 1);

    UpdateSets  edit{ {}, { 2 } };
    DecodeState edited = apply_transition(after, edit, probs, v.mask_id());
    CHECK(edited.tokens == std::vector<int>{ 0, 2, 3 });
    CHECK(edited.edit_count[2] == 1);
    CHECK(edited.edits_applied == 1);
}

TEST_CASE("apply_transition: overlapping sets rejected") {
    Vocabulary  v = letters(3);
    BlockLayout layout{ 0, 2, 1 };
    DecodeState st = make_decode_state({}, layout, v.mask_id());
    ProbGrid    probs({ 0, 1 },
                      { row_of(v.size(), { { 0, 0.9 } }), row_of(v.size(), { { 1, 0.9 } }) });
    UpdateSets  overlap{ { 0 }, { 0 } };
    CHECK_THROWS_WITH(apply_transition(st, overlap, probs, v.mask_id()), "disjointness violated");
}

TEST_CASE("decode_block: tau_mask 0 and tau_edit 1 finish in one forward") {
    Vocabulary  v = letters(4);
    BlockLayout layout{ 1, 4, 1 };
    auto        oracle = four_token_fixture(v);

    ThresholdConfig cfg;
    cfg.tau_mask = 0.0;
    cfg.tau_edit = 1.0;

    DecodeState st     = make_decode_state({ 0 }, layout, v.mask_id());
    auto [next, trace] = decode_block(*oracle, st, cfg, v.mask_id());
    CHECK(next.forwards_used == 1);
    CHECK(next.tokens_generated == 4);
    CHECK(trace.size() == 1);
    for (int i = 1; i < 5; i++) {
        CHECK(next.status[i] == PosStatus::Finalized);
    }
}

TEST_CASE("decode_block: tau_mask 1 with fallback commits one token per forward") {
    Vocabulary  v = letters(4);
    BlockLayout layout{ 1, 4, 1 };
    auto        oracle = four_token_fixture(v);

    ThresholdConfig cfg;
    cfg.tau_mask        = 1.0;
    cfg.tau_edit        = 1.0;
    cfg.fallback_commit = true;

    DecodeState st     = make_decode_state({ 0 }, layout, v.mask_id());
    auto [next, trace] = decode_block(*oracle, st, cfg, v.mask_id());
    CHECK(next.forwards_used == 4);
    CHECK(next.tokens_generated == 4);
    for (const auto & t : trace) {
        CHECK(t.gamma.size() == 1);
        CHECK(t.fallback);
    }
}

TEST_CASE("decode_block: trace matches the independent step simulator") {
    Vocabulary  v = letters(4);
    BlockLayout layout{ 1, 4, 1 };
    auto        oracle = four_token_fixture(v);

    ThresholdConfig cfg;
    cfg.tau_mask = 0.6;
    cfg.tau_edit = 0.8;

    DecodeState st     = make_decode_state({ 0 }, layout, v.mask_id());
    auto [next, trace] = decode_block(*oracle, st, cfg, v.mask_id());

    SimResult sim =
        simulate_block(*oracle, { 0, v.mask_id(), v.mask_id(), v.mask_id(), v.mask_id() },
                       { 1, 2, 3, 4 }, cfg, v);
    REQUIRE(trace.size() == sim.step_tokens.size());
    for (size_t k = 0; k < trace.size(); k++) {
        CHECK(trace[k].tokens == sim.step_tokens[k]);
    }
    CHECK(next.tokens == sim.tokens);
    CHECK(next.forwards_used == sim.forwards);
    CHECK(next.edits_applied == sim.edits);
    CHECK(next.tokens_generated == sim.commits);

    // the hand-designed trajectory: commits b/d, edit b->c + commit c, commit b
    CHECK(next.tokens == std::vector<int>{ 0, 2, 2, 3, 1 });
    CHECK(next.forwards_used == 3);
    CHECK(next.edits_applied == 1);
}

TEST_CASE("decode_block: random static tables match the simulator") {
    Vocabulary v = letters(5);
    Rng        rng(8080);
    for (int trial = 0; trial < 60; trial++) {
        int         bs = 2 + static_cast<int>(rng() % 4);
        BlockLayout layout{ 1, bs, 1 };
        auto        oracle = std::make_shared<TableOracle>(v.size());
        for (int pos = 0; pos < layout.total_len(); pos++) {
            std::vector<double> row(v.size(), 0.0);
            double              sum = 0.0;
            for (int t = 0; t < v.size() - 3; t++) {
                row[t] = uniform_unit(rng) + 1e-3;
                sum += row[t];
            }
            for (double & p : row) {
                p /= sum;
            }
            oracle->set_default_row(pos, row);
        }
        ThresholdConfig cfg;
        cfg.block_size      = bs;
        cfg.tau_mask        = uniform_unit(rng) * 0.9;
        cfg.tau_edit        = 0.5 + 0.5 * uniform_unit(rng);
        cfg.fallback_commit = true;

        DecodeState st     = make_decode_state({ 0 }, layout, v.mask_id());
        auto [next, trace] = decode_block(*oracle, st, cfg, v.mask_id());

        std::vector<int> init(layout.total_len(), v.mask_id());
        init[0]       = 0;
        SimResult sim = simulate_block(*oracle, init, layout.block_positions(0), cfg, v);
        CHECK(next.tokens == sim.tokens);
        CHECK(next.forwards_used == sim.forwards);
    }
}

TEST_CASE("decode_block: already decoded block rejected") {
    Vocabulary  v = letters(3);
    BlockLayout layout{ 0, 2, 1 };
    DecodeState st = make_decode_state({}, layout, v.mask_id());
    st.tokens      = { 0, 1 };
    st.status      = { PosStatus::Committed, PosStatus::Committed };
    TableOracle oracle(v.size());
    CHECK_THROWS_WITH(decode_block(oracle, st, ThresholdConfig{}, v.mask_id()),
                      "block already decoded");
}

TEST_CASE("decode_block: stall without fallback raises") {
    Vocabulary  v = letters(3);
    BlockLayout layout{ 0, 2, 1 };
    DecodeState st = make_decode_state({}, layout, v.mask_id());

    ThresholdConfig cfg;
    cfg.tau_mask            = 1.0;  // unsatisfiable, strict inequality
    cfg.fallback_commit     = false;
    cfg.max_steps_per_block = 4;
    TableOracle oracle(v.size());
    CHECK_THROWS_WITH(decode_block(oracle, st, cfg, v.mask_id()), "stalled decode");
}

TEST_CASE("decode_sequence: single block reduces to decode_block") {
    Vocabulary  v = letters(4);
    BlockLayout layout{ 1, 4, 1 };
    auto        oracle = four_token_fixture(v);

    ThresholdConfig cfg;
    cfg.tau_mask = 0.6;
    cfg.tau_edit = 0.8;

    DecodeResult seq = decode_sequence(*oracle, { 0 }, cfg, layout, v);

    DecodeState st       = make_decode_state({ 0 }, layout, v.mask_id());
    auto [block, btrace] = decode_block(*oracle, st, cfg, v.mask_id());
    CHECK(seq.state.tokens == block.tokens);
    CHECK(seq.metrics.forwards_used == block.forwards_used);
    CHECK(seq.traces.size() == btrace.size());
}

TEST_CASE("decode_sequence: EOS stops later blocks and pads the tail") {
    Vocabulary  v = letters(3);  // a b c MASK EOS PAD
    BlockLayout layout{ 1, 2, 3 };
    auto        oracle = std::make_shared<TableOracle>(v.size());
    oracle->set_default_row(1, row_of(v.size(), { { 1, 0.9 } }));
    oracle->set_default_row(2, row_of(v.size(), { { v.eos_id(), 0.9 } }));
    for (int pos = 3; pos < layout.total_len(); pos++) {
        oracle->set_default_row(pos, row_of(v.size(), { { 0, 0.9 } }));
    }

    ThresholdConfig cfg;
    cfg.block_size = 2;
    cfg.tau_mask   = 0.5;
    cfg.tau_edit   = 1.0;

    DecodeResult result = decode_sequence(*oracle, { 0 }, cfg, layout, v);
    CHECK(result.metrics.forwards_used == 1);  // blocks 2 and 3 never run
    CHECK(result.metrics.tokens_generated == 2);
    CHECK(result.state.tokens ==
          std::vector<int>{ 0, 1, v.eos_id(), v.pad_id(), v.pad_id(), v.pad_id(), v.pad_id() });
}

TEST_CASE("decode_sequence: two blocks equal chained block simulations") {
    Vocabulary  v = letters(5);
    BlockLayout layout{ 1, 4, 2 };
    Rng         rng(31337);
    auto        oracle = std::make_shared<TableOracle>(v.size());
    for (int pos = 0; pos < layout.total_len(); pos++) {
        std::vector<double> row(v.size(), 0.0);
        double              sum = 0.0;
        for (int t = 0; t < v.size() - 3; t++) {
            row[t] = uniform_unit(rng) + 1e-3;
            sum += row[t];
        }
        for (double & p : row) {
            p /= sum;
        }
        oracle->set_default_row(pos, row);
    }

    ThresholdConfig cfg;
    cfg.block_size = 4;
    cfg.tau_mask   = 0.3;
    cfg.tau_edit   = 0.9;

    DecodeResult result = decode_sequence(*oracle, { 0 }, cfg, layout, v);

    std::vector<int> tokens(layout.total_len(), v.mask_id());
    tokens[0]      = 0;
    SimResult sim1 = simulate_block(*oracle, tokens, layout.block_positions(0), cfg, v);
    SimResult sim2 = simulate_block(*oracle, sim1.tokens, layout.block_positions(1), cfg, v);
    CHECK(result.state.tokens == sim2.tokens);
    CHECK(result.metrics.forwards_used == sim1.forwards + sim2.forwards);
}

TEST_CASE("decode_sequence: prompt immutability, determinism, fallback TPF floor") {
    Vocabulary v = letters(5);
    Rng        rng(2024);
    for (int trial = 0; trial < 40; trial++) {
        BlockLayout layout{ 2, 2 + static_cast<int>(rng() % 3),
                            1 + static_cast<int>(rng() % 3) };
        auto oracle = std::make_shared<TableOracle>(v.size());
        for (int pos = 0; pos < layout.total_len(); pos++) {
            std::vector<double> row(v.size(), 0.0);
            double              sum = 0.0;
            for (int t = 0; t < v.size() - 3; t++) {
                row[t] = uniform_unit(rng) + 1e-3;
                sum += row[t];
            }
            for (double & p : row) {
                p /= sum;
            }
            oracle->set_default_row(pos, row);
        }
        ThresholdConfig cfg;
        cfg.block_size      = layout.block_size;
        cfg.tau_mask        = uniform_unit(rng);
        cfg.tau_edit        = 1.0;
        cfg.fallback_commit = true;

        std::vector<int> prompt = { 0, 1 };
        DecodeResult     a      = decode_sequence(*oracle, prompt, cfg, layout, v);
        DecodeResult     b      = decode_sequence(*oracle, prompt, cfg, layout, v);

        CHECK(a.state.tokens[0] == 0);
        CHECK(a.state.tokens[1] == 1);
        CHECK(a.state.tokens == b.state.tokens);
        CHECK(traces_to_jsonl(a.traces) == traces_to_jsonl(b.traces));
        CHECK(a.metrics.tpf >= 1.0);
    }
}

TEST_CASE("mbe_pass: agreeing oracle costs one forward and zero edits") {
    Vocabulary  v = letters(4);
    BlockLayout layout{ 1, 2, 2 };
    auto        oracle = std::make_shared<TableOracle>(v.size());
    for (int pos = 1; pos < layout.total_len(); pos++) {
        oracle->set_default_row(pos, row_of(v.size(), { { 1, 0.99 } }));
    }

    ThresholdConfig cfg;
    cfg.block_size  = 2;
    cfg.tau_mask    = 0.5;
    cfg.tau_edit    = 0.8;
    cfg.mbe_enabled = true;
    cfg.mbe_window  = 1;

    DecodeResult result = decode_sequence(*oracle, { 0 }, cfg, layout, v);
    // block decodes take one forward each; the single MBE pass adds exactly one
    CHECK(result.metrics.forwards_used == 3);
    CHECK(result.metrics.edits_applied == 0);
}

TEST_CASE("mbe_pass: prior-block token revised when its candidate flips") {
    Vocabulary  v = letters(4);  // a b c d
    BlockLayout layout{ 1, 2, 2 };
    auto        oracle = std::make_shared<TableOracle>(v.size());
    // block 1 commits [b, b]; block 2 commits [c, c]
    oracle->set_default_row(1, row_of(v.size(), { { 1, 0.9 } }));
    oracle->set_default_row(2, row_of(v.size(), { { 1, 0.9 } }));
    oracle->set_default_row(3, row_of(v.size(), { { 2, 0.9 } }));
    oracle->set_default_row(4, row_of(v.size(), { { 2, 0.9 } }));
    // once block 2 reads [c, c], position 1 wants d instead of b
    std::vector<int> full = { 0, 1, 1, 2, 2 };
    oracle->set_context_row(full, 1, row_of(v.size(), { { 3, 0.95 } }));
    oracle->set_context_row(full, 2, row_of(v.size(), { { 1, 0.9 } }));
    oracle->set_context_row(full, 3, row_of(v.size(), { { 2, 0.9 } }));
    oracle->set_context_row(full, 4, row_of(v.size(), { { 2, 0.9 } }));

    ThresholdConfig cfg;
    cfg.block_size  = 2;
    cfg.tau_mask    = 0.5;
    cfg.tau_edit    = 0.9;
    cfg.mbe_enabled = true;
    cfg.mbe_window  = 1;

    DecodeResult result = decode_sequence(*oracle, { 0 }, cfg, layout, v);
    CHECK(result.state.tokens[1] == 3);  // b -> d, p 0.95 > tau_edit
    CHECK(result.metrics.edits_applied == 1);
}

TEST_CASE("mbe_pass: oscillating oracle is stopped by the pass budget") {
    Vocabulary  v = letters(4);
    BlockLayout layout{ 1, 2, 2 };
    auto        oracle = std::make_shared<TableOracle>(v.size());
    oracle->set_default_row(1, row_of(v.size(), { { 1, 0.9 } }));
    oracle->set_default_row(2, row_of(v.size(), { { 1, 0.9 } }));
    oracle->set_default_row(3, row_of(v.size(), { { 2, 0.9 } }));
    oracle->set_default_row(4, row_of(v.size(), { { 2, 0.9 } }));
    // whatever position 1 holds, the oracle wants the other token
    std::vector<int> with_b = { 0, 1, 1, 2, 2 };
    std::vector<int> with_d = { 0, 3, 1, 2, 2 };
    oracle->set_context_row(with_b, 1, row_of(v.size(), { { 3, 0.95 } }));
    oracle->set_context_row(with_d, 1, row_of(v.size(), { { 1, 0.95 } }));

    ThresholdConfig cfg;
    cfg.block_size     = 2;
    cfg.tau_mask       = 0.5;
    cfg.tau_edit       = 0.9;
    cfg.mbe_enabled    = true;
    cfg.mbe_window     = 1;
    cfg.mbe_max_passes = 2;

    DecodeResult result = decode_sequence(*oracle, { 0 }, cfg, layout, v);
    // exactly two MBE passes run, each applying one flip
    CHECK(result.metrics.forwards_used == 4);
    CHECK(result.metrics.edits_applied == 2);
    CHECK(result.state.tokens[1] == 1);  // flipped away and back
}

TEST_CASE("mbe_pass: disabled call rejected") {
    Vocabulary  v = letters(3);
    BlockLayout layout{ 0, 2, 2 };
    DecodeState st  = make_decode_state({}, layout, v.mask_id());
    st.active_block = 1;
    ThresholdConfig cfg;
    cfg.mbe_enabled = false;
    TableOracle oracle(v.size());
    CHECK_THROWS_WITH(mbe_pass(oracle, st, cfg, v.mask_id()), "MBE disabled");
}

TEST_CASE("threshold config: speedy ordering enforced, json round trip exact") {
    ThresholdConfig bad;
    bad.mode     = DecodeMode::Speedy;
    bad.tau_mask = 0.95;
    bad.tau_edit = 0.5;
    CHECK_THROWS(bad.validate());

    ThresholdConfig cfg = ThresholdConfig::speedy(4);
    cfg.validate();
    CHECK(cfg.tau_mask == doctest::Approx(0.45));
    CHECK(cfg.tau_edit == doctest::Approx(0.90));

    nlohmann::json j = cfg.to_json();
    for (const char * key :
         { "tau_mask", "tau_edit", "mode", "block_size", "max_steps_per_block",
           "edit_budget_per_position", "fallback_commit", "mbe_enabled", "mbe_window",
           "mbe_max_passes" }) {
        CHECK(j.contains(key));
    }
    CHECK(j.size() == 10);

    ThresholdConfig back = ThresholdConfig::from_json(j);
    CHECK(back.tau_mask == cfg.tau_mask);
    CHECK(back.tau_edit == cfg.tau_edit);
    CHECK(back.mode == cfg.mode);
}

TEST_CASE("baseline equivalence: tau_edit 1 matches the edit-free reference") {
    Vocabulary v = letters(5);
    Rng        rng(4711);
    for (int trial = 0; trial < 30; trial++) {
        BlockLayout layout{ 1, 2 + static_cast<int>(rng() % 3),
                            1 + static_cast<int>(rng() % 3) };
        auto oracle = std::make_shared<TableOracle>(v.size());
        for (int pos = 0; pos < layout.total_len(); pos++) {
            std::vector<double> row(v.size(), 0.0);
            double              sum = 0.0;
            for (int t = 0; t < v.size() - 2; t++) {  // EOS can appear
                if (t == v.mask_id()) {
                    continue;
                }
                row[t] = uniform_unit(rng) + 1e-3;
                sum += row[t];
            }
            for (double & p : row) {
                p /= sum;
            }
            oracle->set_default_row(pos, row);
        }
        ThresholdConfig cfg;
        cfg.block_size      = layout.block_size;
        cfg.tau_mask        = uniform_unit(rng) * 0.95;
        cfg.tau_edit        = 1.0;
        cfg.fallback_commit = true;

        DecodeResult    engine = decode_sequence(*oracle, { 0 }, cfg, layout, v);
        ReferenceDecode ref =
            reference_threshold_decode(*oracle, { 0 }, cfg.tau_mask, layout, v,
                                       cfg.max_steps_per_block, cfg.fallback_commit);
        CHECK(engine.state.tokens == ref.tokens);
        CHECK(engine.metrics.forwards_used == ref.forwards);
        REQUIRE(engine.traces.size() == ref.step_tokens.size());
        for (size_t k = 0; k < ref.step_tokens.size(); k++) {
            CHECK(engine.traces[k].tokens == ref.step_tokens[k]);
        }
    }
}

TEST_CASE("step trace: jsonl schema carries exactly the six fields") {
    StepTrace trace;
    trace.step     = 3;
    trace.block    = 1;
    trace.gamma    = { 4, 5 };
    trace.delta    = { 2 };
    trace.fallback = false;
    trace.tokens   = { 0, 1, 2 };
    nlohmann::json j = trace.to_json();
    CHECK(j.size() == 6);
    CHECK(j.at("step") == 3);
    CHECK(j.at("block") == 1);
    CHECK(j.at("gamma") == nlohmann::json::array({ 4, 5 }));
    CHECK(j.at("delta") == nlohmann::json::array({ 2 }));
    CHECK(j.at("fallback") == false);
    CHECK(j.at("tokens") == nlohmann::json::array({ 0, 1, 2 }));
}
