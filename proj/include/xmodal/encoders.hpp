// SPDX-License-Identifier: Apache-2.0
//
// Encoder stage: turns embedded visual/textual tokens into per-token
// intermediate states plus a pooled summary.

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "xmodal/data.hpp"
#include "xmodal/nn.hpp"
#include "xmodal/registry.hpp"

namespace xmodal {

struct EncoderOutput {
    Tensor states;  // N x d; masked rows are exactly zero
    Tensor global;  // d; mean over unmasked rows
    BoolVec mask;   // length N
};

// Multiplies masked rows by zero (identity when nothing is masked).
inline Tensor zero_masked_rows(const Tensor& h, const BoolVec& mask) {
    const int n = h.dim(0), d = h.dim(1);
    bool all = true;
    for (auto m : mask) all = all && m;
    if (mask.empty() || all) return h;
    std::vector<double> keep(h.size());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            keep[static_cast<std::size_t>(i) * d + j] = mask[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    return mul(h, Tensor({n, d}, std::move(keep)));
}

// Zeroes masked rows and pools the rest.
inline EncoderOutput finalize_encoder_output(const Tensor& states, const BoolVec& mask) {
    const int n = states.dim(0), d = states.dim(1);
    if (static_cast<int>(mask.size()) != n) throw ShapeError("encoder mask length mismatch");
    int kept = 0;
    for (auto m : mask) kept += m;
    if (kept == 0) throw DegenerateInputError("encoder input is fully masked");

    EncoderOutput out;
    out.mask = mask;
    if (kept == n) {
        out.states = states;
    } else {
        std::vector<double> keep_mat(states.size());
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) keep_mat[static_cast<std::size_t>(i) * d + j] = mask[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
        out.states = mul(states, Tensor({n, d}, std::move(keep_mat)));
    }
    std::vector<double> pool(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = mask[static_cast<std::size_t>(i)] ? 1.0 / kept : 0.0;
    out.global = reshape(matmul(Tensor({1, n}, std::move(pool)), out.states), {d});
    return out;
}

class Encoder : public Module {
public:
    virtual EncoderOutput encode(const Tensor& x, const BoolVec& mask,
                                 const std::vector<RelationEdge>& edges) = 0;
    virtual int width() const = 0;
};

// ---------------------------------------------------------------------------
// LSTM encoder: sequential recurrence, masked steps copy state through.

class LstmEncoder : public Encoder {
public:
    LstmEncoder(ParamStore& ps, const std::string& prefix, int in, int hidden)
        : cell_(ps, prefix + ".cell", in, hidden), hidden_(hidden) {}

    EncoderOutput encode(const Tensor& x, const BoolVec& mask, const std::vector<RelationEdge>&) override {
        const int n = x.dim(0);
        Tensor c = Tensor::zeros({hidden_});
        Tensor h = Tensor::zeros({hidden_});
        Tensor states;
        for (int t = 0; t < n; ++t) {
            if (mask.empty() || mask[static_cast<std::size_t>(t)]) {
                auto [c2, h2] = cell_.step(row(x, t), c, h);
                c = c2;
                h = h2;
            }
            // masked rows stay zero; finalize would zero them anyway
            Tensor r = reshape((mask.empty() || mask[static_cast<std::size_t>(t)]) ? h : Tensor::zeros({hidden_}),
                               {1, hidden_});
            states = t == 0 ? r : concat(states, r, 0);
        }
        return finalize_encoder_output(states, mask.empty() ? BoolVec(static_cast<std::size_t>(n), 1) : mask);
    }

    int width() const override { return hidden_; }

    const LstmCell& cell() const { return cell_; }

private:
    LstmCell cell_;
    int hidden_;
};

// ---------------------------------------------------------------------------
// Relation-conditioned GCN. Edge (src, dst, r) lets dst aggregate src through
// W_rel[r]; nodes without inbound edges use only the self term.

class GcnEncoder : public Encoder {
public:
    GcnEncoder(ParamStore& ps, const std::string& prefix, int in, int hidden, int layers, int relations)
        : hidden_(hidden), relations_(relations) {
        int d = in;
        for (int l = 0; l < layers; ++l) {
            std::string base = prefix + ".layer" + std::to_string(l);
            Layer layer;
            layer.w_self = ps.matrix(base + ".w_self", d, hidden);
            layer.b = ps.bias(base + ".b", hidden);
            for (int r = 0; r < relations; ++r) {
                layer.w_rel.push_back(ps.matrix(base + ".w_rel" + std::to_string(r), d, hidden));
            }
            layers_.push_back(std::move(layer));
            d = hidden;
        }
    }

    EncoderOutput encode(const Tensor& x, const BoolVec& mask,
                         const std::vector<RelationEdge>& edges) override {
        const int n = x.dim(0);
        for (const RelationEdge& e : edges) {
            if (e.relation < 0 || e.relation >= relations_) {
                throw IndexError("unknown relation id " + std::to_string(e.relation) + " (have " +
                                 std::to_string(relations_) + ")");
            }
            if (e.src >= n || e.dst >= n) throw IndexError("edge endpoint out of range");
        }
        Tensor h = zero_masked_rows(x, mask);
        for (const Layer& layer : layers_) {
            Tensor self_term = add_row_bias(matmul(h, layer.w_self), layer.b);
            // neighbor sums per destination
            std::vector<int> degree(static_cast<std::size_t>(n), 0);
            for (const RelationEdge& e : edges) ++degree[static_cast<std::size_t>(e.dst)];
            Tensor agg = self_term;
            if (!edges.empty()) {
                // group edges by relation so each relation costs one matmul
                Tensor neighbor_sum;
                bool have = false;
                for (int r = 0; r < relations_; ++r) {
                    std::vector<double> sel;  // n x n selector: dst row collects src columns
                    bool any = false;
                    sel.assign(static_cast<std::size_t>(n) * n, 0.0);
                    for (const RelationEdge& e : edges) {
                        if (e.relation != r) continue;
                        sel[static_cast<std::size_t>(e.dst) * n + e.src] +=
                            1.0 / degree[static_cast<std::size_t>(e.dst)];
                        any = true;
                    }
                    if (!any) continue;
                    Tensor gathered = matmul(Tensor({n, n}, std::move(sel)), matmul(h, layer.w_rel[static_cast<std::size_t>(r)]));
                    neighbor_sum = have ? add(neighbor_sum, gathered) : gathered;
                    have = true;
                }
                if (have) agg = add(agg, neighbor_sum);
            }
            h = relu(agg);
        }
        return finalize_encoder_output(h, mask.empty() ? BoolVec(static_cast<std::size_t>(n), 1) : mask);
    }

    int width() const override { return hidden_; }

private:
    struct Layer {
        Tensor w_self, b;
        std::vector<Tensor> w_rel;
    };
    std::vector<Layer> layers_;
    int hidden_;
    int relations_;
};

// ---------------------------------------------------------------------------
// 1-D GLU convolution stack with residuals; same padding, odd kernels.

class ConvEncoder : public Encoder {
public:
    ConvEncoder(ParamStore& ps, const std::string& prefix, int d, int layers, int kernel)
        : d_(d), kernel_(kernel) {
        if (kernel % 2 == 0) throw ConfigError("conv encoder kernel size must be odd, got " + std::to_string(kernel));
        for (int l = 0; l < layers; ++l) {
            std::string base = prefix + ".layer" + std::to_string(l);
            Layer layer;
            for (int o = 0; o < kernel; ++o) {
                layer.w_a.push_back(ps.matrix(base + ".wa" + std::to_string(o), d, d));
                layer.w_b.push_back(ps.matrix(base + ".wb" + std::to_string(o), d, d));
            }
            layer.b_a = ps.bias(base + ".ba", d);
            layer.b_b = ps.bias(base + ".bb", d);
            layers_.push_back(std::move(layer));
        }
    }

    EncoderOutput encode(const Tensor& x, const BoolVec& mask, const std::vector<RelationEdge>&) override {
        const int n = x.dim(0);
        BoolVec m = mask.empty() ? BoolVec(static_cast<std::size_t>(n), 1) : mask;
        Tensor h = x;
        const int pad = (kernel_ - 1) / 2;
        for (const Layer& layer : layers_) {
            h = zero_masked_rows(h, m);
            Tensor padded = pad > 0 ? concat(concat(Tensor::zeros({pad, d_}), h, 0), Tensor::zeros({pad, d_}), 0) : h;
            Tensor acc_a, acc_b;
            for (int o = 0; o < kernel_; ++o) {
                std::vector<int> idx(static_cast<std::size_t>(n));
                for (int t = 0; t < n; ++t) idx[static_cast<std::size_t>(t)] = t + o;
                Tensor shifted = embedding_lookup(padded, idx);
                Tensor ta = matmul(shifted, layer.w_a[static_cast<std::size_t>(o)]);
                Tensor tb = matmul(shifted, layer.w_b[static_cast<std::size_t>(o)]);
                acc_a = o == 0 ? ta : add(acc_a, ta);
                acc_b = o == 0 ? tb : add(acc_b, tb);
            }
            acc_a = add_row_bias(acc_a, layer.b_a);
            acc_b = add_row_bias(acc_b, layer.b_b);
            h = add(mul(acc_a, sigmoid(acc_b)), h);
        }
        return finalize_encoder_output(h, m);
    }

    int width() const override { return d_; }

private:
    struct Layer {
        std::vector<Tensor> w_a, w_b;
        Tensor b_a, b_b;
    };
    std::vector<Layer> layers_;
    int d_;
    int kernel_;
};

// ---------------------------------------------------------------------------
// Transformer encoder: pre-activation is the standard post-norm block
// (attention, add & norm, feed-forward, add & norm).

class SelfAttentionEncoder : public Encoder {
public:
    SelfAttentionEncoder(ParamStore& ps, const std::string& prefix, int d, int layers, int heads,
                         double dropout, std::shared_ptr<RunState> run)
        : d_(d), dropout_(dropout), run_(std::move(run)) {
        for (int l = 0; l < layers; ++l) {
            std::string base = prefix + ".block" + std::to_string(l);
            blocks_.push_back(Block{
                MultiHeadAttention(ps, base + ".attn", d, heads),
                Norm(ps, base + ".norm1", d),
                FeedForward(ps, base + ".ff", d, 4 * d),
                Norm(ps, base + ".norm2", d),
            });
        }
    }

    EncoderOutput encode(const Tensor& x, const BoolVec& mask, const std::vector<RelationEdge>&) override {
        const int n = x.dim(0);
        BoolVec m = mask.empty() ? BoolVec(static_cast<std::size_t>(n), 1) : mask;
        Tensor h = x;
        for (const Block& block : blocks_) {
            Tensor attn = block.attn.apply(h, h, m, /*causal=*/false);
            attn = maybe_dropout(attn);
            h = block.norm1.apply(add(h, attn));
            Tensor ff = block.ff.apply(h);
            ff = maybe_dropout(ff);
            h = block.norm2.apply(add(h, ff));
        }
        return finalize_encoder_output(h, m);
    }

    int width() const override { return d_; }

private:
    Tensor maybe_dropout(const Tensor& t) {
        if (dropout_ <= 0.0 || !run_ || !run_->training) return t;
        return dropout(t, dropout_, run_->draw_keep_mask(t.size(), dropout_));
    }

    struct Block {
        MultiHeadAttention attn;
        Norm norm1;
        FeedForward ff;
        Norm norm2;
    };
    std::vector<Block> blocks_;
    int d_;
    double dropout_;
    std::shared_ptr<RunState> run_;
};

}  // namespace xmodal
