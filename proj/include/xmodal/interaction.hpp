// SPDX-License-Identifier: Apache-2.0
//
// Cross-modal interaction stage: additive attention, top-down attention,
// co-attention, meshed memory attention, X-Linear attention.

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "xmodal/encoders.hpp"
#include "xmodal/nn.hpp"

namespace xmodal {

struct AttentionResult {
    Tensor context;  // d_v
    Tensor weights;  // N, sums to 1 over unmasked positions
};

// Queried attention over a set of source states; stateless per call.
class StepAttention : public Module {
public:
    virtual AttentionResult attend(const Tensor& query, const Tensor& keys, const Tensor& values,
                                   const BoolVec& mask) const = 0;
};

namespace detail {

inline void check_any_unmasked(const BoolVec& mask, int n, const char* what) {
    if (mask.empty()) return;
    int kept = 0;
    for (auto m : mask) kept += m;
    if (kept == 0) throw DegenerateInputError(std::string(what) + ": all source positions masked");
    if (static_cast<int>(mask.size()) != n) throw ShapeError(std::string(what) + ": mask length mismatch");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Additive attention: e_i = w^T tanh(Wq q + Wk k_i).

class AdditiveAttention : public StepAttention {
public:
    AdditiveAttention(ParamStore& ps, const std::string& prefix, int d_q, int d_k, int d_att)
        : w_q_(ps.matrix(prefix + ".wq", d_q, d_att)),
          w_k_(ps.matrix(prefix + ".wk", d_k, d_att)),
          w_(ps.matrix(prefix + ".w", d_att, 1)) {}

    AttentionResult attend(const Tensor& query, const Tensor& keys, const Tensor& values,
                           const BoolVec& mask) const override {
        const int n = keys.dim(0);
        detail::check_any_unmasked(mask, n, "additive_attention");
        Tensor qp = vec_matmul(query, w_q_);
        Tensor scores = matmul(tanh(add_row_bias(matmul(keys, w_k_), qp)), w_);
        Tensor e = reshape(scores, {n});
        Tensor weights = softmax(e, -1, mask.empty() ? nullptr : &mask);
        Tensor context = reshape(matmul(reshape(weights, {1, n}), values), {values.dim(1)});
        return {context, weights};
    }

private:
    Tensor w_q_, w_k_, w_;
};

// ---------------------------------------------------------------------------
// X-Linear attention, single-block form. Bilinear joint features gate both a
// spatial distribution and a channel-wise sigmoid gate.

class XLinearAttention : public StepAttention {
public:
    XLinearAttention(ParamStore& ps, const std::string& prefix, int d)
        : w_k_(ps.matrix(prefix + ".wk", d, d)),
          w_q_(ps.matrix(prefix + ".wq", d, d)),
          w_b_(ps.matrix(prefix + ".wb", d, d)),
          w_(ps.matrix(prefix + ".w", d, 1)),
          w_c_(ps.matrix(prefix + ".wc", d, d)),
          w_v_(ps.matrix(prefix + ".wv", d, d)),
          w_q2_(ps.matrix(prefix + ".wq2", d, d)) {}

    AttentionResult attend(const Tensor& query, const Tensor& keys, const Tensor& values,
                           const BoolVec& mask) const override {
        const int n = keys.dim(0);
        detail::check_any_unmasked(mask, n, "x_linear_attention");
        // bilinear joint features B_i = sigmoid(Wk k_i) * sigmoid(Wq q)
        Tensor qk = sigmoid(vec_matmul(query, w_q_));
        Tensor bilinear = mul(sigmoid(matmul(keys, w_k_)), tile_rows(qk, n));
        Tensor embedded = relu(matmul(bilinear, w_b_));  // N x d

        Tensor e = reshape(matmul(embedded, w_), {n});
        Tensor beta = softmax(e, -1, mask.empty() ? nullptr : &mask);

        // channel gate from the mean embedded bilinear feature (unmasked rows)
        int kept = 0;
        for (int i = 0; i < n; ++i) kept += mask.empty() ? 1 : mask[static_cast<std::size_t>(i)];
        std::vector<double> pool(static_cast<std::size_t>(n), 0.0);
        for (int i = 0; i < n; ++i) {
            pool[static_cast<std::size_t>(i)] = (mask.empty() || mask[static_cast<std::size_t>(i)]) ? 1.0 / kept : 0.0;
        }
        Tensor mean_embedded = reshape(matmul(Tensor({1, n}, std::move(pool)), embedded), {embedded.dim(1)});
        Tensor gamma = sigmoid(vec_matmul(mean_embedded, w_c_));

        Tensor gated_values = mul(matmul(values, w_v_), tile_rows(sigmoid(vec_matmul(query, w_q2_)), n));
        Tensor pooled = reshape(matmul(reshape(beta, {1, n}), gated_values), {gated_values.dim(1)});
        return {mul(gamma, pooled), beta};
    }

private:
    Tensor w_k_, w_q_, w_b_, w_, w_c_, w_v_, w_q2_;
};

// ---------------------------------------------------------------------------
// Top-down attention: an attention LSTM consumes [h_lang; global; word_emb],
// and its hidden state queries the regions through additive attention.

class TopDownAttention : public Module {
public:
    TopDownAttention(ParamStore& ps, const std::string& prefix, int d, int d_emb)
        : cell_(ps, prefix + ".att_lstm", d + d + d_emb, d), att_(ps, prefix + ".att", d, d, d), d_(d) {}

    std::vector<Tensor> initial_state() const {
        return {Tensor::zeros({d_}), Tensor::zeros({d_})};  // (c, h)
    }

    // Returns (attended feature, new state).
    std::pair<Tensor, std::vector<Tensor>> step(const Tensor& h_lang, const Tensor& word_emb,
                                                const EncoderOutput& enc,
                                                const std::vector<Tensor>& state) const {
        Tensor input = concat(concat(h_lang, enc.global, 0), word_emb, 0);
        auto [c2, h2] = cell_.step(input, state[0], state[1]);
        AttentionResult att = att_.attend(h2, enc.states, enc.states, enc.mask);
        return {att.context, {c2, h2}};
    }

private:
    LstmCell cell_;
    AdditiveAttention att_;
    int d_;
};

// ---------------------------------------------------------------------------
// Co-attention: two parallel cross-attention blocks, one per stream, each
// followed by add & norm and feed-forward.

class CoAttentionBlock : public Module {
public:
    CoAttentionBlock(ParamStore& ps, const std::string& prefix, int d, int heads, bool tied = false)
        : a_(make_stream(ps, prefix + ".a", d, heads)),
          b_(tied ? a_ : make_stream(ps, prefix + ".b", d, heads)) {}

    std::pair<Tensor, Tensor> apply(const Tensor& x_a, const Tensor& x_b, const BoolVec& mask_a,
                                    const BoolVec& mask_b) const {
        Tensor out_a = run_stream(a_, x_a, x_b, mask_b);
        Tensor out_b = run_stream(b_, x_b, x_a, mask_a);
        return {out_a, out_b};
    }

private:
    struct Stream {
        MultiHeadAttention cross;
        Norm norm1;
        FeedForward ff;
        Norm norm2;
    };

    static Stream make_stream(ParamStore& ps, const std::string& base, int d, int heads) {
        return Stream{MultiHeadAttention(ps, base + ".cross", d, heads), Norm(ps, base + ".norm1", d),
                      FeedForward(ps, base + ".ff", d, 4 * d), Norm(ps, base + ".norm2", d)};
    }

    static Tensor run_stream(const Stream& s, const Tensor& q, const Tensor& kv, const BoolVec& kv_mask) {
        Tensor attn = s.cross.apply(q, kv, kv_mask, /*causal=*/false);
        Tensor h = s.norm1.apply(add(q, attn));
        return s.norm2.apply(add(h, s.ff.apply(h)));
    }

    Stream a_, b_;
};

// ---------------------------------------------------------------------------
// Meshed memory attention: multi-head self-attention whose key/value set is
// extended with learned memory rows. memory_slots = 0 reduces to plain MHA.

class MeshedMemoryAttention : public Module {
public:
    MeshedMemoryAttention(ParamStore& ps, const std::string& prefix, int d, int heads, int memory_slots)
        : mha_(ps, prefix + ".attn", d, heads), slots_(memory_slots) {
        if (memory_slots < 0) throw ConfigError("memory_slots must be >= 0");
        if (memory_slots > 0) {
            mem_k_ = ps.matrix(prefix + ".mem_k", memory_slots, d);
            mem_v_ = ps.matrix(prefix + ".mem_v", memory_slots, d);
        }
    }

    Tensor apply(const Tensor& x, const BoolVec& mask) const {
        if (slots_ == 0) return mha_.apply(x, x, mask, /*causal=*/false);
        return mha_.apply_with_memory(x, x, mask, mem_k_, mem_v_);
    }

    int memory_slots() const { return slots_; }
    const Tensor& memory_keys() const { return mem_k_; }
    const Tensor& memory_values() const { return mem_v_; }
    const MultiHeadAttention& mha() const { return mha_; }

private:
    MultiHeadAttention mha_;
    Tensor mem_k_, mem_v_;
    int slots_;
};

// ---------------------------------------------------------------------------
// Tagged wrapper the pipeline builder hands to decoders and task heads.

enum class InteractionKind { Additive, XLinear, TopDown, CoAttention, MeshedMemory };

struct InteractionModule : Module {
    InteractionKind kind = InteractionKind::Additive;
    std::shared_ptr<StepAttention> step;        // additive / x_linear
    std::shared_ptr<TopDownAttention> top_down;
    std::shared_ptr<CoAttentionBlock> co;
    std::shared_ptr<MeshedMemoryAttention> meshed;
    Norm meshed_norm;  // wraps the encoder enhancement residual

    bool step_queryable() const { return step != nullptr; }
};

}  // namespace xmodal
