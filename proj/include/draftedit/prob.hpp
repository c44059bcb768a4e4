#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "draftedit/util.hpp"

namespace draftedit {

// Per-position categorical distributions over the vocabulary, restricted to
// a scope of positions. top_candidate is the row argmax (ties -> lowest id).
struct ProbGrid {
    std::vector<int>                 positions;  // sorted ascending
    std::vector<std::vector<double>> rows;       // rows[k] belongs to positions[k]
    std::vector<int>                 top_token;
    std::vector<double>              top_prob;

    ProbGrid() = default;

    ProbGrid(std::vector<int> pos, std::vector<std::vector<double>> r) :
        positions(std::move(pos)),
        rows(std::move(r)) {
        if (positions.size() != rows.size()) {
            throw std::runtime_error("probability grid shape mismatch");
        }
        top_token.resize(rows.size());
        top_prob.resize(rows.size());
        for (size_t k = 0; k < rows.size(); k++) {
            top_token[k] = argmax_lowest(rows[k]);
            top_prob[k]  = rows[k].empty() ? 0.0 : rows[k][top_token[k]];
        }
    }

    int vocab_size() const { return rows.empty() ? 0 : static_cast<int>(rows[0].size()); }

    bool covers(int pos) const {
        return std::binary_search(positions.begin(), positions.end(), pos);
    }

    int index_of(int pos) const {
        auto it = std::lower_bound(positions.begin(), positions.end(), pos);
        if (it == positions.end() || *it != pos) {
            throw std::runtime_error("probability grid does not cover position " +
                                     std::to_string(pos));
        }
        return static_cast<int>(it - positions.begin());
    }

    const std::vector<double> & row_at(int pos) const { return rows[index_of(pos)]; }

    int top_at(int pos) const { return top_token[index_of(pos)]; }

    double top_prob_at(int pos) const { return top_prob[index_of(pos)]; }

    // argmax with one token banned from the support (ties -> lowest id)
    int top_excluding(int pos, int banned) const {
        const auto & row  = rows[index_of(pos)];
        int          best = -1;
        for (size_t v = 0; v < row.size(); v++) {
            if (static_cast<int>(v) == banned) {
                continue;
            }
            if (best < 0 || row[v] > row[best]) {
                best = static_cast<int>(v);
            }
        }
        return best;
    }

    double prob_at(int pos, int token) const { return rows[index_of(pos)][token]; }

    // Every row must be a distribution: non-negative, sum within 1e-6 of 1.
    void validate() const {
        for (const auto & row : rows) {
            double sum = 0.0;
            for (double p : row) {
                if (p < 0.0 || !std::isfinite(p)) {
                    throw std::runtime_error("invalid distribution");
                }
                sum += p;
            }
            if (std::fabs(sum - 1.0) > 1e-6) {
                throw std::runtime_error("invalid distribution");
            }
        }
    }
};

// Anything that can score token positions: the trainable net, frozen test
// tables, or any external scorer. predict() must be pure so frozen oracles
// can serve concurrent decodes.
class ModelOracle {
  public:
    virtual ~ModelOracle() = default;

    virtual int vocab_size() const = 0;

    virtual ProbGrid predict(const std::vector<int> & tokens,
                             const std::vector<int> & scope) const = 0;
};

// Frozen, deterministic oracle for tests and simulators. Rows are resolved
// in order: exact (tokens, position) override, per-position default, uniform.
class TableOracle : public ModelOracle {
  public:
    explicit TableOracle(int vocab_size) : vocab_(vocab_size) {
        if (vocab_size < 1) {
            throw std::runtime_error("invalid distribution");
        }
    }

    void set_default_row(int pos, std::vector<double> row) {
        check_row(row);
        defaults_[pos] = std::move(row);
    }

    void set_context_row(const std::vector<int> & tokens, int pos, std::vector<double> row) {
        check_row(row);
        contexts_[tokens][pos] = std::move(row);
    }

    int vocab_size() const override { return vocab_; }

    ProbGrid predict(const std::vector<int> & tokens, const std::vector<int> & scope) const override {
        std::vector<std::vector<double>> rows;
        rows.reserve(scope.size());
        auto ctx = contexts_.find(tokens);
        for (int pos : scope) {
            if (ctx != contexts_.end()) {
                auto it = ctx->second.find(pos);
                if (it != ctx->second.end()) {
                    rows.push_back(it->second);
                    continue;
                }
            }
            auto dit = defaults_.find(pos);
            if (dit != defaults_.end()) {
                rows.push_back(dit->second);
            } else {
                rows.push_back(std::vector<double>(vocab_, 1.0 / vocab_));
            }
        }
        std::vector<int> pos_sorted(scope);
        std::sort(pos_sorted.begin(), pos_sorted.end());
        if (pos_sorted != scope) {
            // keep rows aligned with the sorted scope
            std::vector<std::vector<double>> sorted_rows(rows.size());
            for (size_t k = 0; k < scope.size(); k++) {
                auto it = std::lower_bound(pos_sorted.begin(), pos_sorted.end(), scope[k]);
                sorted_rows[it - pos_sorted.begin()] = std::move(rows[k]);
            }
            rows = std::move(sorted_rows);
        }
        return ProbGrid(std::move(pos_sorted), std::move(rows));
    }

  private:
    void check_row(const std::vector<double> & row) const {
        if (static_cast<int>(row.size()) != vocab_) {
            throw std::runtime_error("invalid distribution");
        }
        double sum = 0.0;
        for (double p : row) {
            if (p < 0.0 || !std::isfinite(p)) {
                throw std::runtime_error("invalid distribution");
            }
            sum += p;
        }
        if (std::fabs(sum - 1.0) > 1e-6) {
            throw std::runtime_error("invalid distribution");
        }
    }

    int                                                            vocab_;
    std::unordered_map<int, std::vector<double>>                   defaults_;
    std::map<std::vector<int>, std::unordered_map<int, std::vector<double>>> contexts_;
};

// Table oracle from per-position rows only; rows[k] serves position k.
inline std::shared_ptr<TableOracle> make_table_oracle(int                                     vocab_size,
                                                      const std::vector<std::vector<double>> & rows) {
    auto oracle = std::make_shared<TableOracle>(vocab_size);
    for (size_t pos = 0; pos < rows.size(); pos++) {
        oracle->set_default_row(static_cast<int>(pos), rows[pos]);
    }
    return oracle;
}

}  // namespace draftedit
