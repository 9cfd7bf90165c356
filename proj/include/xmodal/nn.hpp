// SPDX-License-Identifier: Apache-2.0
//
// Shared neural building blocks: affine maps, norms, recurrent cells,
// multi-head scaled dot-product attention, feed-forward, embedders.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "xmodal/params.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

// Training-time runtime knobs shared by all modules of one pipeline.
struct RunState {
    bool training = false;
    Rng* rng = nullptr;  // per-step stream, owned by the caller

    BoolVec draw_keep_mask(std::size_t n, double rate) {
        BoolVec keep(n, 1);
        if (rng) {
            for (auto& k : keep) k = rng->uniform() < rate ? 0 : 1;
        }
        return keep;
    }
};

// y = x W + b over rows, or over a single vector.
struct Affine {
    Tensor w, b;

    Affine() = default;
    Affine(ParamStore& ps, const std::string& prefix, int in, int out)
        : w(ps.matrix(prefix + ".w", in, out)), b(ps.bias(prefix + ".b", out)) {}

    Tensor rows(const Tensor& x) const { return add_row_bias(matmul(x, w), b); }

    Tensor vec(const Tensor& x) const {
        Tensor r = matmul(reshape(x, {1, x.dim(0)}), w);
        return add(reshape(r, {w.dim(1)}), b);
    }
};

// Vector through a matrix with no bias.
inline Tensor vec_matmul(const Tensor& v, const Tensor& w) {
    return reshape(matmul(reshape(v, {1, v.dim(0)}), w), {w.dim(1)});
}

// Repeat a vector as n identical rows (differentiable; grads accumulate).
inline Tensor tile_rows(const Tensor& v, int n) {
    return embedding_lookup(reshape(v, {1, v.dim(0)}), std::vector<int>(static_cast<std::size_t>(n), 0));
}

struct Norm {
    Tensor g, b;
    double eps = 1e-5;

    Norm() = default;
    Norm(ParamStore& ps, const std::string& prefix, int d)
        : g(ps.gain(prefix + ".gain", d)), b(ps.bias(prefix + ".bias", d)) {}

    Tensor apply(const Tensor& x) const { return layer_norm(x, g, b, eps); }
};

// ---------------------------------------------------------------------------
// Recurrent cells. State tensors are rank-1 vectors of width `hidden`.

struct LstmCell {
    Tensor w_ih, w_hh, b;  // in x 4h, h x 4h, 4h; gate order i, f, g, o
    int hidden = 0;

    LstmCell() = default;
    LstmCell(ParamStore& ps, const std::string& prefix, int in, int h)
        : w_ih(ps.matrix(prefix + ".w_ih", in, 4 * h)),
          w_hh(ps.matrix(prefix + ".w_hh", h, 4 * h)),
          b(ps.bias(prefix + ".b", 4 * h)),
          hidden(h) {}

    // (c, h) -> (c', h')
    std::pair<Tensor, Tensor> step(const Tensor& x, const Tensor& c, const Tensor& h) const {
        Tensor z = add(add(vec_matmul(x, w_ih), vec_matmul(h, w_hh)), b);
        Tensor gates = reshape(z, {4, hidden});
        Tensor i = sigmoid(row(gates, 0));
        Tensor f = sigmoid(row(gates, 1));
        Tensor g = tanh(row(gates, 2));
        Tensor o = sigmoid(row(gates, 3));
        Tensor c_new = add(mul(f, c), mul(i, g));
        Tensor h_new = mul(o, tanh(c_new));
        return {c_new, h_new};
    }
};

struct GruCell {
    Tensor w_ih, w_hh, b;  // in x 3h, h x 3h, 3h; gate order z, r, n
    int hidden = 0;

    GruCell() = default;
    GruCell(ParamStore& ps, const std::string& prefix, int in, int h)
        : w_ih(ps.matrix(prefix + ".w_ih", in, 3 * h)),
          w_hh(ps.matrix(prefix + ".w_hh", h, 3 * h)),
          b(ps.bias(prefix + ".b", 3 * h)),
          hidden(h) {}

    // h' = (1 - z) * h + z * n; update gate z = 0 keeps the previous state.
    Tensor step(const Tensor& x, const Tensor& h) const {
        Tensor zi = reshape(vec_matmul(x, w_ih), {3, hidden});
        Tensor zh = reshape(vec_matmul(h, w_hh), {3, hidden});
        Tensor bs = reshape(b, {3, hidden});
        Tensor z = sigmoid(add(add(row(zi, 0), row(zh, 0)), row(bs, 0)));
        Tensor r = sigmoid(add(add(row(zi, 1), row(zh, 1)), row(bs, 1)));
        Tensor n = tanh(add(add(row(zi, 2), mul(r, row(zh, 2))), row(bs, 2)));
        Tensor keep = sub(Tensor::full({hidden}, 1.0), z);
        return add(mul(keep, h), mul(z, n));
    }
};

// ---------------------------------------------------------------------------
// Multi-head scaled dot-product attention.

struct MultiHeadAttention {
    Affine wq, wk, wv, wo;
    int heads = 1;
    int d = 0;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore& ps, const std::string& prefix, int d_model, int n_heads)
        : wq(ps, prefix + ".wq", d_model, d_model),
          wk(ps, prefix + ".wk", d_model, d_model),
          wv(ps, prefix + ".wv", d_model, d_model),
          wo(ps, prefix + ".wo", d_model, d_model),
          heads(n_heads),
          d(d_model) {
        if (d_model % n_heads != 0) {
            throw ConfigError("model width " + std::to_string(d_model) + " not divisible by heads " +
                              std::to_string(n_heads));
        }
    }

    // q: Tq x d, kv: Tk x d. key_mask (len Tk, optional) hides source rows;
    // causal additionally hides k > t (requires Tq == Tk).
    Tensor apply(const Tensor& q, const Tensor& kv, const BoolVec& key_mask, bool causal) const {
        return apply_kv(q, kv, kv, key_mask, causal, std::nullopt);
    }

    // Pre-projected extra key/value rows (memory slots) are appended after
    // the projected inputs and are always visible.
    Tensor apply_with_memory(const Tensor& q, const Tensor& kv, const BoolVec& key_mask,
                             const Tensor& mem_k, const Tensor& mem_v) const {
        return apply_kv(q, kv, kv, key_mask, false, std::make_pair(mem_k, mem_v));
    }

    Tensor project_keys(const Tensor& x) const { return wk.rows(x); }
    Tensor project_values(const Tensor& x) const { return wv.rows(x); }

    // Attention over already-projected key/value rows, all visible. Used by
    // stepwise decoding with a KV cache.
    Tensor apply_projected(const Tensor& q, const Tensor& keys_proj, const Tensor& values_proj) const {
        const int dh = d / heads;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        Tensor qs = wq.rows(q);
        Tensor out;
        for (int h = 0; h < heads; ++h) {
            Tensor qh = slice_cols(qs, h * dh, dh);
            Tensor kh = slice_cols(keys_proj, h * dh, dh);
            Tensor vh = slice_cols(values_proj, h * dh, dh);
            Tensor weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1);
            Tensor ctx = matmul(weights, vh);
            out = h == 0 ? ctx : concat(out, ctx, 1);
        }
        return wo.rows(out);
    }

    Tensor apply_kv(const Tensor& q, const Tensor& k_src, const Tensor& v_src, const BoolVec& key_mask,
                    bool causal, std::optional<std::pair<Tensor, Tensor>> memory = std::nullopt) const {
        const int tq = q.dim(0);
        Tensor qs = wq.rows(q);
        Tensor ks = wk.rows(k_src);
        Tensor vs = wv.rows(v_src);
        if (memory) {
            ks = concat(ks, memory->first, 0);
            vs = concat(vs, memory->second, 0);
        }
        const int tk = ks.dim(0);
        const int n_src = k_src.dim(0);
        const int dh = d / heads;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

        BoolVec mask(static_cast<std::size_t>(tq) * tk, 1);
        bool any_masked = false;
        for (int t = 0; t < tq; ++t) {
            for (int j = 0; j < tk; ++j) {
                bool keep = true;
                if (j < n_src) {
                    if (!key_mask.empty() && !key_mask[static_cast<std::size_t>(j)]) keep = false;
                    if (causal && j > t) keep = false;
                }
                if (!keep) {
                    mask[static_cast<std::size_t>(t) * tk + j] = 0;
                    any_masked = true;
                }
            }
        }

        Tensor out;
        for (int h = 0; h < heads; ++h) {
            Tensor qh = slice_cols(qs, h * dh, dh);
            Tensor kh = slice_cols(ks, h * dh, dh);
            Tensor vh = slice_cols(vs, h * dh, dh);
            Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
            Tensor weights = softmax(scores, 1, any_masked ? &mask : nullptr);
            Tensor ctx = matmul(weights, vh);
            out = h == 0 ? ctx : concat(out, ctx, 1);
        }
        return wo.rows(out);
    }
};

struct FeedForward {
    Affine in, out;
    double dropout_rate = 0.0;

    FeedForward() = default;
    FeedForward(ParamStore& ps, const std::string& prefix, int d, int inner)
        : in(ps, prefix + ".in", d, inner), out(ps, prefix + ".out", inner, d) {}

    Tensor apply(const Tensor& x) const { return out.rows(relu(in.rows(x))); }
};

// ---------------------------------------------------------------------------
// Embedders. The learned positional table is shared between words and
// regions/frames (frames are positioned like words).

struct TokenEmbedder {
    Tensor table;  // V x d
    Tensor pos;    // P x d
    int max_positions = 0;

    TokenEmbedder() = default;
    TokenEmbedder(ParamStore& ps, int vocab, int d, int max_pos)
        : table(ps.matrix("embed.token", vocab, d)),
          pos(ps.matrix("embed.pos", max_pos, d)),
          max_positions(max_pos) {}

    Tensor embed(const std::vector<int>& ids, int first_position = 0) const {
        if (first_position + static_cast<int>(ids.size()) > max_positions) {
            throw UsageError("sequence of length " + std::to_string(ids.size()) + " at offset " +
                             std::to_string(first_position) + " exceeds max positions " +
                             std::to_string(max_positions));
        }
        std::vector<int> positions(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = first_position + static_cast<int>(i);
        return add(embedding_lookup(table, ids), embedding_lookup(pos, positions));
    }

    // One row, as a vector.
    Tensor embed_at(int id, int position) const {
        return reshape(embed({id}, position), {table.dim(1)});
    }
};

struct VisualEmbedder {
    Affine proj;
    std::optional<Norm> norm;
    Tensor pos;  // shared table
    bool use_positions = true;
    int max_positions = 0;

    VisualEmbedder() = default;
    VisualEmbedder(ParamStore& ps, int feature_dim, int d, int max_pos, bool with_norm, bool with_pos)
        : proj(ps, "embed.visual", feature_dim, d),
          pos(ps.matrix("embed.pos", max_pos, d)),
          use_positions(with_pos),
          max_positions(max_pos) {
        if (with_norm) norm.emplace(ps, "embed.visual_norm", d);
    }

    Tensor embed(const Tensor& features) const {
        Tensor x = proj.rows(features);
        if (norm) x = norm->apply(x);
        if (use_positions) {
            const int n = features.dim(0);
            if (n > max_positions) throw UsageError("too many regions for positional table");
            std::vector<int> positions(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) positions[static_cast<std::size_t>(i)] = i;
            x = add(x, embedding_lookup(pos, positions));
        }
        return x;
    }
};

}  // namespace xmodal
