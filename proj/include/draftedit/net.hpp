#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "draftedit/prob.hpp"
#include "draftedit/util.hpp"
#include "draftedit/vocab.hpp"

namespace draftedit {

// Row-major dense matrix of doubles. Training and verification paths stay in
// 64-bit throughout; finite-difference checks need the headroom.
struct Mat {
    int                 rows = 0;
    int                 cols = 0;
    std::vector<double> a;

    Mat() = default;

    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

    double & at(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }

    double at(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }
};

namespace detail {

// C += A * B
inline void matmul_acc(const Mat & A, const Mat & B, Mat & C) {
    for (int i = 0; i < A.rows; i++) {
        for (int k = 0; k < A.cols; k++) {
            double aik = A.at(i, k);
            if (aik == 0.0) {
                continue;
            }
            for (int j = 0; j < B.cols; j++) {
                C.at(i, j) += aik * B.at(k, j);
            }
        }
    }
}

inline Mat matmul(const Mat & A, const Mat & B) {
    Mat C(A.rows, B.cols);
    matmul_acc(A, B, C);
    return C;
}

// C += A^T * B
inline void matmul_at_b_acc(const Mat & A, const Mat & B, Mat & C) {
    for (int k = 0; k < A.rows; k++) {
        for (int i = 0; i < A.cols; i++) {
            double aki = A.at(k, i);
            if (aki == 0.0) {
                continue;
            }
            for (int j = 0; j < B.cols; j++) {
                C.at(i, j) += aki * B.at(k, j);
            }
        }
    }
}

// C += A * B^T
inline void matmul_a_bt_acc(const Mat & A, const Mat & B, Mat & C) {
    for (int i = 0; i < A.rows; i++) {
        for (int j = 0; j < B.rows; j++) {
            double s = 0.0;
            for (int k = 0; k < A.cols; k++) {
                s += A.at(i, k) * B.at(j, k);
            }
            C.at(i, j) += s;
        }
    }
}

}  // namespace detail

// Dense T x T attention visibility matrix: allow(i, j) means row i may attend
// to column j.
struct AttnMask {
    int                  n = 0;
    std::vector<uint8_t> allow;

    explicit AttnMask(int size = 0) : n(size), allow(static_cast<size_t>(size) * size, 0) {}

    void set(int i, int j) { allow[static_cast<size_t>(i) * n + j] = 1; }

    bool at(int i, int j) const { return allow[static_cast<size_t>(i) * n + j] != 0; }
};

// Prompt is a fully bidirectional prefix; generation position in block b sees
// the prompt, all earlier blocks, and its own block bidirectionally.
inline AttnMask build_block_causal_mask(int prompt_len, int block_size, int num_blocks) {
    int      total = prompt_len + block_size * num_blocks;
    AttnMask mask(total);
    for (int i = 0; i < prompt_len; i++) {
        for (int j = 0; j < prompt_len; j++) {
            mask.set(i, j);
        }
    }
    for (int b = 0; b < num_blocks; b++) {
        int lo = prompt_len + b * block_size;
        int hi = prompt_len + (b + 1) * block_size;
        for (int i = lo; i < hi; i++) {
            for (int j = 0; j < hi; j++) {
                mask.set(i, j);
            }
        }
    }
    return mask;
}

// Layout for scoring all block-conditional likelihood terms in one pass:
// [prompt | corrupted completion | clean completion]. The corrupted block b
// sees the prompt, itself (bidirectional), and the *clean copies* of blocks
// < b; the clean copy follows the ordinary block-causal pattern on its own.
inline AttnMask build_composite_mask(int prompt_len, int block_size, int num_blocks) {
    int      gen   = block_size * num_blocks;
    int      total = prompt_len + 2 * gen;
    AttnMask mask(total);
    for (int i = 0; i < prompt_len; i++) {
        for (int j = 0; j < prompt_len; j++) {
            mask.set(i, j);
        }
    }
    int corr0  = prompt_len;
    int clean0 = prompt_len + gen;
    for (int b = 0; b < num_blocks; b++) {
        for (int i = corr0 + b * block_size; i < corr0 + (b + 1) * block_size; i++) {
            for (int j = 0; j < prompt_len; j++) {
                mask.set(i, j);
            }
            for (int j = corr0 + b * block_size; j < corr0 + (b + 1) * block_size; j++) {
                mask.set(i, j);
            }
            for (int j = clean0; j < clean0 + b * block_size; j++) {
                mask.set(i, j);
            }
        }
        for (int i = clean0 + b * block_size; i < clean0 + (b + 1) * block_size; i++) {
            for (int j = 0; j < prompt_len; j++) {
                mask.set(i, j);
            }
            for (int j = clean0; j < clean0 + (b + 1) * block_size; j++) {
                mask.set(i, j);
            }
        }
    }
    return mask;
}

// Position ids for the composite layout: the clean copy mirrors the logical
// positions of the completion it shadows.
inline std::vector<int> composite_position_ids(int prompt_len, int gen_len) {
    std::vector<int> ids(prompt_len + 2 * gen_len);
    for (int i = 0; i < prompt_len + gen_len; i++) {
        ids[i] = i;
    }
    for (int i = 0; i < gen_len; i++) {
        ids[prompt_len + gen_len + i] = prompt_len + i;
    }
    return ids;
}

struct NetConfig {
    int vocab_size    = 0;
    int width         = 32;
    int heads         = 2;
    int layers        = 1;
    int ffn_mult      = 2;
    int max_positions = 64;
    int block_size    = 4;

    void validate() const {
        if (vocab_size < 1 || width < 1 || heads < 1 || layers < 1 || layers > 2 ||
            ffn_mult < 1 || max_positions < 1 || block_size < 1) {
            throw std::runtime_error("invalid net config");
        }
        if (width % heads != 0) {
            throw std::runtime_error("invalid net config: width must divide into heads");
        }
    }

    int head_dim() const { return width / heads; }

    int ffn_dim() const { return ffn_mult * width; }

    nlohmann::json to_json() const {
        return nlohmann::json{ { "vocab_size", vocab_size }, { "width", width },
                               { "heads", heads },           { "layers", layers },
                               { "ffn_mult", ffn_mult },     { "max_positions", max_positions },
                               { "block_size", block_size } };
    }

    static NetConfig from_json(const nlohmann::json & j) {
        NetConfig c;
        c.vocab_size    = j.at("vocab_size").get<int>();
        c.width         = j.at("width").get<int>();
        c.heads         = j.at("heads").get<int>();
        c.layers        = j.at("layers").get<int>();
        c.ffn_mult      = j.at("ffn_mult").get<int>();
        c.max_positions = j.at("max_positions").get<int>();
        c.block_size    = j.at("block_size").get<int>();
        c.validate();
        return c;
    }
};

// Supervision target: -log p(target token) at a position, scaled by weight.
struct WeightedTarget {
    int    pos    = 0;
    int    target = 0;
    double weight = 1.0;
};

// Small block-causal transformer: token+position embeddings, 1-2 pre-norm
// attention/ffn layers (tanh activation, no biases), rmsnorm head, untied
// output projection. Forward/backward are hand-written and checked against
// central finite differences.
class ToyNet {
  public:
    ToyNet() = default;

    ToyNet(const NetConfig & cfg, uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        compute_offsets();
        params_.assign(total_params_, 0.0);
        Rng                              rng(seed);
        std::normal_distribution<double> dist(0.0, 0.08);
        for (double & p : params_) {
            p = dist(rng);
        }
        // norm gains start at identity
        for (int l = 0; l < cfg_.layers; l++) {
            for (int i = 0; i < cfg_.width; i++) {
                params_[off_g1_[l] + i] = 1.0;
                params_[off_g2_[l] + i] = 1.0;
            }
        }
        for (int i = 0; i < cfg_.width; i++) {
            params_[off_gf_ + i] = 1.0;
        }
    }

    const NetConfig & config() const { return cfg_; }

    size_t param_count() const { return total_params_; }

    std::vector<double> & params() { return params_; }

    const std::vector<double> & params() const { return params_; }

    bool finite() const {
        for (double p : params_) {
            if (!std::isfinite(p)) {
                return false;
            }
        }
        return true;
    }

    // --- forward -----------------------------------------------------------

    struct Trace {
        Mat                 x_embed;
        std::vector<Mat>    x0, n1, q, k, v, att, o, x_mid, n2, h;
        std::vector<std::vector<double>> rms1, rms2;
        Mat                 x_final, nf, logits;
        std::vector<double> rmsf;
        std::vector<int>    tokens, pos_ids;
        const AttnMask *    mask = nullptr;
    };

    // Full-sequence forward under an arbitrary visibility mask. Logits are
    // produced for every row; scoped softmaxes are taken by the callers.
    Trace forward_trace(const std::vector<int> & tokens, const std::vector<int> & pos_ids,
                        const AttnMask & mask) const {
        const int T  = static_cast<int>(tokens.size());
        const int d  = cfg_.width;
        const int hd = cfg_.head_dim();
        if (static_cast<int>(pos_ids.size()) != T || mask.n != T) {
            throw std::runtime_error("layout mismatch: mask/position shape");
        }
        for (int t = 0; t < T; t++) {
            if (tokens[t] < 0 || tokens[t] >= cfg_.vocab_size) {
                throw std::runtime_error("token id out of range");
            }
            if (pos_ids[t] < 0 || pos_ids[t] >= cfg_.max_positions) {
                throw std::runtime_error("layout mismatch: position beyond max_positions");
            }
        }

        Trace tr;
        tr.tokens  = tokens;
        tr.pos_ids = pos_ids;
        tr.mask    = &mask;

        Mat X(T, d);
        for (int t = 0; t < T; t++) {
            for (int j = 0; j < d; j++) {
                X.at(t, j) = params_[off_tok_ + static_cast<size_t>(tokens[t]) * d + j] +
                             params_[off_pos_ + static_cast<size_t>(pos_ids[t]) * d + j];
            }
        }
        tr.x_embed = X;

        for (int l = 0; l < cfg_.layers; l++) {
            tr.x0.push_back(X);
            std::vector<double> rms1;
            Mat                 N1 = rmsnorm(X, off_g1_[l], rms1);
            tr.n1.push_back(N1);
            tr.rms1.push_back(rms1);

            Mat Q = project(N1, off_wq_[l], d, d);
            Mat K = project(N1, off_wk_[l], d, d);
            Mat V = project(N1, off_wv_[l], d, d);
            tr.q.push_back(Q);
            tr.k.push_back(K);
            tr.v.push_back(V);

            // attention weights, one T x T sheet per head, zeros where masked
            Mat A(T * cfg_.heads, T);
            Mat O(T, d);
            const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
            for (int h = 0; h < cfg_.heads; h++) {
                int base = h * hd;
                for (int t = 0; t < T; t++) {
                    double best = 0.0;
                    bool   any  = false;
                    std::vector<double> scores(T, 0.0);
                    for (int u = 0; u < T; u++) {
                        if (!mask.at(t, u)) {
                            continue;
                        }
                        double s = 0.0;
                        for (int j = 0; j < hd; j++) {
                            s += Q.at(t, base + j) * K.at(u, base + j);
                        }
                        s *= scale;
                        scores[u] = s;
                        if (!any || s > best) {
                            best = s;
                            any  = true;
                        }
                    }
                    if (!any) {
                        continue;  // row attends to nothing; contributes zero
                    }
                    double z = 0.0;
                    for (int u = 0; u < T; u++) {
                        if (mask.at(t, u)) {
                            z += std::exp(scores[u] - best);
                        }
                    }
                    for (int u = 0; u < T; u++) {
                        if (!mask.at(t, u)) {
                            continue;
                        }
                        double w = std::exp(scores[u] - best) / z;
                        A.at(h * T + t, u) = w;
                        for (int j = 0; j < hd; j++) {
                            O.at(t, base + j) += w * V.at(u, base + j);
                        }
                    }
                }
            }
            tr.att.push_back(A);
            tr.o.push_back(O);

            Mat P = project(O, off_wo_[l], d, d);
            for (int t = 0; t < T; t++) {
                for (int j = 0; j < d; j++) {
                    X.at(t, j) += P.at(t, j);
                }
            }
            tr.x_mid.push_back(X);

            std::vector<double> rms2;
            Mat                 N2 = rmsnorm(X, off_g2_[l], rms2);
            tr.n2.push_back(N2);
            tr.rms2.push_back(rms2);

            Mat H = project(N2, off_w1_[l], d, cfg_.ffn_dim());
            for (double & v2 : H.a) {
                v2 = std::tanh(v2);
            }
            tr.h.push_back(H);

            Mat F = project(H, off_w2_[l], cfg_.ffn_dim(), d);
            for (int t = 0; t < T; t++) {
                for (int j = 0; j < d; j++) {
                    X.at(t, j) += F.at(t, j);
                }
            }
        }

        tr.x_final = X;
        tr.nf      = rmsnorm(X, off_gf_, tr.rmsf);
        tr.logits  = project(tr.nf, off_out_, d, cfg_.vocab_size);
        return tr;
    }

    // Softmax rows of an existing trace restricted to a scope.
    ProbGrid probs_from_trace(const Trace & tr, const std::vector<int> & scope) const {
        std::vector<int> pos(scope);
        std::sort(pos.begin(), pos.end());
        std::vector<std::vector<double>> rows;
        rows.reserve(pos.size());
        for (int p : pos) {
            if (p < 0 || p >= tr.logits.rows) {
                throw std::runtime_error("scope position out of range");
            }
            rows.push_back(softmax_row(tr.logits, p));
        }
        return ProbGrid(std::move(pos), std::move(rows));
    }

    ProbGrid forward_custom(const std::vector<int> & tokens, const std::vector<int> & pos_ids,
                            const AttnMask & mask, const std::vector<int> & scope) const {
        Trace tr = forward_trace(tokens, pos_ids, mask);
        return probs_from_trace(tr, scope);
    }

    // Standard-layout forward: prompt + whole blocks, block-causal visibility.
    ProbGrid forward(const std::vector<int> & tokens, int prompt_len,
                     const std::vector<int> & scope) const {
        const int T = static_cast<int>(tokens.size());
        if (prompt_len < 0 || prompt_len > T || (T - prompt_len) % cfg_.block_size != 0) {
            throw std::runtime_error("layout mismatch");
        }
        int num_blocks = (T - prompt_len) / cfg_.block_size;
        AttnMask mask = build_block_causal_mask(prompt_len, cfg_.block_size, num_blocks);
        std::vector<int> pos_ids(T);
        for (int t = 0; t < T; t++) {
            pos_ids[t] = t;
        }
        return forward_custom(tokens, pos_ids, mask, scope);
    }

    // --- loss and backward -------------------------------------------------

    // loss = sum_k weight_k * (-log p(target_k at pos_k)); grad matches the
    // flat parameter vector.
    double loss_and_grad(const Trace & tr, const std::vector<WeightedTarget> & targets,
                         std::vector<double> & grad) const {
        grad.assign(total_params_, 0.0);
        return backward(tr, targets, &grad);
    }

    double loss_only(const std::vector<int> & tokens, const std::vector<int> & pos_ids,
                     const AttnMask & mask, const std::vector<WeightedTarget> & targets) const {
        Trace tr = forward_trace(tokens, pos_ids, mask);
        return backward(tr, targets, nullptr);
    }

    // Sum of log p(target) over targets (weights applied), from one trace.
    double log_prob_sum(const Trace & tr, const std::vector<WeightedTarget> & targets) const {
        return -backward(tr, targets, nullptr);
    }

  private:
    Mat rmsnorm(const Mat & X, size_t gain_off, std::vector<double> & rms_out) const {
        const int d = X.cols;
        Mat       Y(X.rows, d);
        rms_out.resize(X.rows);
        for (int t = 0; t < X.rows; t++) {
            double ms = 0.0;
            for (int j = 0; j < d; j++) {
                ms += X.at(t, j) * X.at(t, j);
            }
            double r   = std::sqrt(ms / d + 1e-6);
            rms_out[t] = r;
            for (int j = 0; j < d; j++) {
                Y.at(t, j) = params_[gain_off + j] * X.at(t, j) / r;
            }
        }
        return Y;
    }

    // dX contribution of a rmsnorm given upstream dY; accumulates gain grads.
    void rmsnorm_backward(const Mat & dY, const Mat & X, size_t gain_off,
                          const std::vector<double> & rms, Mat & dX,
                          std::vector<double> * grad) const {
        const int d = X.cols;
        for (int t = 0; t < X.rows; t++) {
            double r = rms[t];
            double s = 0.0;
            for (int j = 0; j < d; j++) {
                s += dY.at(t, j) * params_[gain_off + j] * X.at(t, j);
            }
            for (int j = 0; j < d; j++) {
                dX.at(t, j) += params_[gain_off + j] * dY.at(t, j) / r -
                               X.at(t, j) * s / (d * r * r * r);
                if (grad != nullptr) {
                    (*grad)[gain_off + j] += dY.at(t, j) * X.at(t, j) / r;
                }
            }
        }
    }

    Mat project(const Mat & X, size_t w_off, int in_dim, int out_dim) const {
        Mat Y(X.rows, out_dim);
        for (int t = 0; t < X.rows; t++) {
            for (int k = 0; k < in_dim; k++) {
                double x = X.at(t, k);
                if (x == 0.0) {
                    continue;
                }
                const double * w = &params_[w_off + static_cast<size_t>(k) * out_dim];
                for (int j = 0; j < out_dim; j++) {
                    Y.at(t, j) += x * w[j];
                }
            }
        }
        return Y;
    }

    // dX = dY * W^T, gW += X^T * dY
    void project_backward(const Mat & dY, const Mat & X, size_t w_off, int in_dim, int out_dim,
                          Mat & dX, std::vector<double> * grad) const {
        for (int t = 0; t < X.rows; t++) {
            for (int k = 0; k < in_dim; k++) {
                const double * w = &params_[w_off + static_cast<size_t>(k) * out_dim];
                double         s = 0.0;
                for (int j = 0; j < out_dim; j++) {
                    s += dY.at(t, j) * w[j];
                }
                dX.at(t, k) += s;
            }
            if (grad != nullptr) {
                for (int k = 0; k < in_dim; k++) {
                    double x = X.at(t, k);
                    if (x == 0.0) {
                        continue;
                    }
                    double * g = &(*grad)[w_off + static_cast<size_t>(k) * out_dim];
                    for (int j = 0; j < out_dim; j++) {
                        g[j] += x * dY.at(t, j);
                    }
                }
            }
        }
    }

    std::vector<double> softmax_row(const Mat & logits, int row) const {
        const int           V = logits.cols;
        std::vector<double> out(V);
        double              best = logits.at(row, 0);
        for (int v = 1; v < V; v++) {
            best = std::max(best, logits.at(row, v));
        }
        double z = 0.0;
        for (int v = 0; v < V; v++) {
            out[v] = std::exp(logits.at(row, v) - best);
            z += out[v];
        }
        for (int v = 0; v < V; v++) {
            out[v] /= z;
        }
        return out;
    }

    // Shared loss evaluation; fills grad when non-null. Returns the loss.
    double backward(const Trace & tr, const std::vector<WeightedTarget> & targets,
                    std::vector<double> * grad) const {
        const int T  = tr.logits.rows;
        const int d  = cfg_.width;
        const int hd = cfg_.head_dim();
        const int V  = cfg_.vocab_size;

        double loss = 0.0;
        Mat    dlogits(T, V);
        for (const auto & wt : targets) {
            if (wt.pos < 0 || wt.pos >= T || wt.target < 0 || wt.target >= V) {
                throw std::runtime_error("target out of range");
            }
            std::vector<double> sm = softmax_row(tr.logits, wt.pos);
            loss += wt.weight * (-std::log(std::max(sm[wt.target], 1e-300)));
            if (grad != nullptr) {
                for (int v = 0; v < V; v++) {
                    dlogits.at(wt.pos, v) += wt.weight * (sm[v] - (v == wt.target ? 1.0 : 0.0));
                }
            }
        }
        if (grad == nullptr) {
            return loss;
        }

        Mat dNF(T, d);
        project_backward(dlogits, tr.nf, off_out_, d, V, dNF, grad);

        Mat dX(T, d);
        rmsnorm_backward(dNF, tr.x_final, off_gf_, tr.rmsf, dX, grad);

        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
        for (int l = cfg_.layers - 1; l >= 0; l--) {
            // ffn block: x_out = x_mid + tanh(rmsnorm(x_mid) W1) W2
            Mat dF(dX);  // residual passthrough keeps dX as dx_mid
            Mat dH(T, cfg_.ffn_dim());
            project_backward(dF, tr.h[l], off_w2_[l], cfg_.ffn_dim(), d, dH, grad);
            for (int t = 0; t < T; t++) {
                for (int j = 0; j < cfg_.ffn_dim(); j++) {
                    double h = tr.h[l].at(t, j);
                    dH.at(t, j) *= (1.0 - h * h);
                }
            }
            Mat dN2(T, d);
            project_backward(dH, tr.n2[l], off_w1_[l], d, cfg_.ffn_dim(), dN2, grad);
            rmsnorm_backward(dN2, tr.x_mid[l], off_g2_[l], tr.rms2[l], dX, grad);

            // attention block: x_mid = x0 + attn(rmsnorm(x0)) Wo
            Mat dP(dX);
            Mat dO(T, d);
            project_backward(dP, tr.o[l], off_wo_[l], d, d, dO, grad);

            Mat dQ(T, d);
            Mat dK(T, d);
            Mat dV(T, d);
            const Mat & A = tr.att[l];
            for (int h = 0; h < cfg_.heads; h++) {
                int base = h * hd;
                for (int t = 0; t < T; t++) {
                    // dA and the softmax jacobian, row at a time
                    std::vector<double> dA(T, 0.0);
                    double              sum_w = 0.0;
                    for (int u = 0; u < T; u++) {
                        double w = A.at(h * T + t, u);
                        if (w == 0.0) {
                            continue;
                        }
                        double da = 0.0;
                        for (int j = 0; j < hd; j++) {
                            da += dO.at(t, base + j) * tr.v[l].at(u, base + j);
                        }
                        dA[u] = da;
                        sum_w += w * da;
                        for (int j = 0; j < hd; j++) {
                            dV.at(u, base + j) += w * dO.at(t, base + j);
                        }
                    }
                    for (int u = 0; u < T; u++) {
                        double w = A.at(h * T + t, u);
                        if (w == 0.0) {
                            continue;
                        }
                        double ds = w * (dA[u] - sum_w) * scale;
                        for (int j = 0; j < hd; j++) {
                            dQ.at(t, base + j) += ds * tr.k[l].at(u, base + j);
                            dK.at(u, base + j) += ds * tr.q[l].at(t, base + j);
                        }
                    }
                }
            }

            Mat dN1(T, d);
            project_backward(dQ, tr.n1[l], off_wq_[l], d, d, dN1, grad);
            project_backward(dK, tr.n1[l], off_wk_[l], d, d, dN1, grad);
            project_backward(dV, tr.n1[l], off_wv_[l], d, d, dN1, grad);
            rmsnorm_backward(dN1, tr.x0[l], off_g1_[l], tr.rms1[l], dX, grad);
        }

        for (int t = 0; t < T; t++) {
            for (int j = 0; j < d; j++) {
                (*grad)[off_tok_ + static_cast<size_t>(tr.tokens[t]) * d + j] += dX.at(t, j);
                (*grad)[off_pos_ + static_cast<size_t>(tr.pos_ids[t]) * d + j] += dX.at(t, j);
            }
        }
        return loss;
    }

    void compute_offsets() {
        const size_t d = cfg_.width;
        const size_t f = cfg_.ffn_dim();
        size_t       off = 0;
        off_tok_ = off;
        off += static_cast<size_t>(cfg_.vocab_size) * d;
        off_pos_ = off;
        off += static_cast<size_t>(cfg_.max_positions) * d;
        off_g1_.resize(cfg_.layers);
        off_wq_.resize(cfg_.layers);
        off_wk_.resize(cfg_.layers);
        off_wv_.resize(cfg_.layers);
        off_wo_.resize(cfg_.layers);
        off_g2_.resize(cfg_.layers);
        off_w1_.resize(cfg_.layers);
        off_w2_.resize(cfg_.layers);
        for (int l = 0; l < cfg_.layers; l++) {
            off_g1_[l] = off;
            off += d;
            off_wq_[l] = off;
            off += d * d;
            off_wk_[l] = off;
            off += d * d;
            off_wv_[l] = off;
            off += d * d;
            off_wo_[l] = off;
            off += d * d;
            off_g2_[l] = off;
            off += d;
            off_w1_[l] = off;
            off += d * f;
            off_w2_[l] = off;
            off += f * d;
        }
        off_gf_ = off;
        off += d;
        off_out_ = off;
        off += d * static_cast<size_t>(cfg_.vocab_size);
        total_params_ = off;
    }

    NetConfig           cfg_;
    std::vector<double> params_;
    size_t              off_tok_ = 0, off_pos_ = 0, off_gf_ = 0, off_out_ = 0;
    std::vector<size_t> off_g1_, off_wq_, off_wk_, off_wv_, off_wo_, off_g2_, off_w1_, off_w2_;
    size_t              total_params_ = 0;
};

// ModelOracle view of a frozen net snapshot with a fixed prompt length.
class NetOracle : public ModelOracle {
  public:
    NetOracle(ToyNet net, int prompt_len) : net_(std::move(net)), prompt_len_(prompt_len) {}

    int vocab_size() const override { return net_.config().vocab_size; }

    ProbGrid predict(const std::vector<int> & tokens, const std::vector<int> & scope) const override {
        return net_.forward(tokens, prompt_len_, scope);
    }

    const ToyNet & net() const { return net_; }

  private:
    ToyNet net_;
    int    prompt_len_;
};

}  // namespace draftedit
