// SPDX-License-Identifier: Apache-2.0
//
// Decoder stage. Three families behind one step/forward interface:
// recurrent cells that pull a context vector from the interaction module at
// every step, a causal GLU convolution stack with per-layer attention, and a
// transformer with causal self-attention, cross-attention and a KV cache.

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "xmodal/interaction.hpp"
#include "xmodal/nn.hpp"

namespace xmodal {

struct DecoderState {
    int step = 0;                          // tokens consumed so far
    std::vector<Tensor> rec;               // recurrent: (c, h) per layer (h only for gru)
    std::vector<Tensor> inter;             // interaction-owned state (top-down LSTM)
    std::vector<Tensor> cache_k, cache_v;  // transformer: projected keys/values per block
    Tensor emb_cache;                      // conv: embeddings consumed so far
    bool has_emb_cache = false;
};

class DecoderCore : public Module {
public:
    virtual DecoderState initial_state(const EncoderOutput& enc) const = 0;
    virtual std::pair<Tensor, DecoderState> step(const DecoderState& s, const Tensor& word_emb,
                                                 const EncoderOutput& enc) const = 0;
    virtual Tensor forward(const Tensor& tokens_emb, const EncoderOutput& enc) const = 0;
    virtual int width() const = 0;
};

// ---------------------------------------------------------------------------
// Recurrent decoder: cell consumes [word_emb; context], context queried from
// the interaction module by the previous top-layer hidden state.

enum class RecurrentKind { Lstm, Gru };

class RecurrentDecoder : public DecoderCore {
public:
    RecurrentDecoder(ParamStore& ps, const std::string& prefix, RecurrentKind kind, int d_emb, int hidden,
                     int layers, std::shared_ptr<InteractionModule> interaction)
        : kind_(kind), hidden_(hidden), layers_(layers), interaction_(std::move(interaction)) {
        if (layers < 1) throw ConfigError("decoder layers must be >= 1");
        if (!interaction_ || (!interaction_->step_queryable() && !interaction_->top_down)) {
            throw ConfigError("recurrent decoder needs a step-queryable interaction module "
                              "(attention, x_linear, or top_down)");
        }
        context_dim_ = hidden;  // interaction contexts inherit the model width
        for (int l = 0; l < layers; ++l) {
            const int in = l == 0 ? d_emb + context_dim_ : hidden;
            std::string base = prefix + ".layer" + std::to_string(l);
            if (kind == RecurrentKind::Lstm) {
                lstm_.emplace_back(ps, base, in, hidden);
            } else {
                gru_.emplace_back(ps, base, in, hidden);
            }
        }
    }

    DecoderState initial_state(const EncoderOutput&) const override {
        DecoderState s;
        for (int l = 0; l < layers_; ++l) {
            if (kind_ == RecurrentKind::Lstm) {
                s.rec.push_back(Tensor::zeros({hidden_}));  // c
                s.rec.push_back(Tensor::zeros({hidden_}));  // h
            } else {
                s.rec.push_back(Tensor::zeros({hidden_}));  // h
            }
        }
        if (interaction_->top_down) s.inter = interaction_->top_down->initial_state();
        return s;
    }

    std::pair<Tensor, DecoderState> step(const DecoderState& s, const Tensor& word_emb,
                                         const EncoderOutput& enc) const override {
        DecoderState next = s;
        ++next.step;
        const Tensor query = top_hidden(s);

        Tensor context;
        if (interaction_->top_down) {
            auto [ctx, inter2] = interaction_->top_down->step(query, word_emb, enc, s.inter);
            context = ctx;
            next.inter = inter2;
        } else {
            context = interaction_->step->attend(query, enc.states, enc.states, enc.mask).context;
        }

        Tensor input = concat(word_emb, context, 0);
        for (int l = 0; l < layers_; ++l) {
            if (kind_ == RecurrentKind::Lstm) {
                auto [c2, h2] = lstm_[static_cast<std::size_t>(l)].step(input, s.rec[static_cast<std::size_t>(2 * l)],
                                                                        s.rec[static_cast<std::size_t>(2 * l + 1)]);
                next.rec[static_cast<std::size_t>(2 * l)] = c2;
                next.rec[static_cast<std::size_t>(2 * l + 1)] = h2;
                input = h2;
            } else {
                Tensor h2 = gru_[static_cast<std::size_t>(l)].step(input, s.rec[static_cast<std::size_t>(l)]);
                next.rec[static_cast<std::size_t>(l)] = h2;
                input = h2;
            }
        }
        return {input, next};
    }

    Tensor forward(const Tensor& tokens_emb, const EncoderOutput& enc) const override {
        const int t_len = tokens_emb.dim(0);
        DecoderState s = initial_state(enc);
        Tensor out;
        for (int t = 0; t < t_len; ++t) {
            auto [h, s2] = step(s, row(tokens_emb, t), enc);
            s = s2;
            Tensor r = reshape(h, {1, hidden_});
            out = t == 0 ? r : concat(out, r, 0);
        }
        return out;
    }

    int width() const override { return hidden_; }

private:
    Tensor top_hidden(const DecoderState& s) const {
        if (kind_ == RecurrentKind::Lstm) return s.rec[static_cast<std::size_t>(2 * layers_ - 1)];
        return s.rec[static_cast<std::size_t>(layers_ - 1)];
    }

    RecurrentKind kind_;
    int hidden_;
    int layers_;
    int context_dim_;
    std::vector<LstmCell> lstm_;
    std::vector<GruCell> gru_;
    std::shared_ptr<InteractionModule> interaction_;
};

// ---------------------------------------------------------------------------
// Causal convolution decoder: left-padded GLU convolutions, residuals, and
// additive attention over encoder states after every layer.

class ConvDecoder : public DecoderCore {
public:
    ConvDecoder(ParamStore& ps, const std::string& prefix, int d, int layers, int kernel)
        : d_(d), kernel_(kernel) {
        if (kernel < 1) throw ConfigError("conv decoder kernel must be >= 1");
        for (int l = 0; l < layers; ++l) {
            std::string base = prefix + ".layer" + std::to_string(l);
            Layer layer;
            for (int o = 0; o < kernel; ++o) {
                layer.w_a.push_back(ps.matrix(base + ".wa" + std::to_string(o), d, d));
                layer.w_b.push_back(ps.matrix(base + ".wb" + std::to_string(o), d, d));
            }
            layer.b_a = ps.bias(base + ".ba", d);
            layer.b_b = ps.bias(base + ".bb", d);
            layer.att = std::make_shared<AdditiveAttention>(ps, base + ".att", d, d, d);
            layers_.push_back(std::move(layer));
        }
    }

    DecoderState initial_state(const EncoderOutput&) const override {
        DecoderState s;
        s.has_emb_cache = false;
        return s;
    }

    std::pair<Tensor, DecoderState> step(const DecoderState& s, const Tensor& word_emb,
                                         const EncoderOutput& enc) const override {
        DecoderState next = s;
        ++next.step;
        Tensor newrow = reshape(word_emb, {1, d_});
        next.emb_cache = s.has_emb_cache ? concat(s.emb_cache, newrow, 0) : newrow;
        next.has_emb_cache = true;
        Tensor all = forward(next.emb_cache, enc);
        return {row(all, all.dim(0) - 1), next};
    }

    Tensor forward(const Tensor& tokens_emb, const EncoderOutput& enc) const override {
        const int t_len = tokens_emb.dim(0);
        Tensor x = tokens_emb;
        const int pad = kernel_ - 1;
        for (const Layer& layer : layers_) {
            Tensor padded = pad > 0 ? concat(Tensor::zeros({pad, d_}), x, 0) : x;
            Tensor acc_a, acc_b;
            for (int o = 0; o < kernel_; ++o) {
                std::vector<int> idx(static_cast<std::size_t>(t_len));
                for (int t = 0; t < t_len; ++t) idx[static_cast<std::size_t>(t)] = t + o;
                Tensor shifted = embedding_lookup(padded, idx);
                Tensor ta = matmul(shifted, layer.w_a[static_cast<std::size_t>(o)]);
                Tensor tb = matmul(shifted, layer.w_b[static_cast<std::size_t>(o)]);
                acc_a = o == 0 ? ta : add(acc_a, ta);
                acc_b = o == 0 ? tb : add(acc_b, tb);
            }
            Tensor h = add(mul(add_row_bias(acc_a, layer.b_a), sigmoid(add_row_bias(acc_b, layer.b_b))), x);
            Tensor ctx;
            for (int t = 0; t < t_len; ++t) {
                Tensor c = layer.att->attend(row(h, t), enc.states, enc.states, enc.mask).context;
                Tensor r = reshape(c, {1, d_});
                ctx = t == 0 ? r : concat(ctx, r, 0);
            }
            x = add(h, ctx);
        }
        return x;
    }

    int width() const override { return d_; }

private:
    struct Layer {
        std::vector<Tensor> w_a, w_b;
        Tensor b_a, b_b;
        std::shared_ptr<AdditiveAttention> att;
    };
    std::vector<Layer> layers_;
    int d_;
    int kernel_;
};

// ---------------------------------------------------------------------------
// Transformer decoder. Cross-attention defaults to multi-head scaled dot
// product; a step-queryable interaction module (additive or x_linear)
// replaces it as the cross-attention flavor.

class TransformerDecoder : public DecoderCore {
public:
    TransformerDecoder(ParamStore& ps, const std::string& prefix, int d, int layers, int heads,
                       std::shared_ptr<InteractionModule> interaction)
        : d_(d), interaction_(std::move(interaction)) {
        const bool flavored = interaction_ && interaction_->step_queryable();
        for (int l = 0; l < layers; ++l) {
            std::string base = prefix + ".block" + std::to_string(l);
            Block block{
                MultiHeadAttention(ps, base + ".self", d, heads),
                Norm(ps, base + ".norm1", d),
                std::nullopt,
                nullptr,
                Norm(ps, base + ".norm2", d),
                FeedForward(ps, base + ".ff", d, 4 * d),
                Norm(ps, base + ".norm3", d),
            };
            if (flavored) {
                block.cross_step = interaction_->step;
            } else {
                block.cross.emplace(ps, base + ".cross", d, heads);
            }
            blocks_.push_back(std::move(block));
        }
    }

    DecoderState initial_state(const EncoderOutput&) const override {
        DecoderState s;
        s.cache_k.assign(blocks_.size(), Tensor());
        s.cache_v.assign(blocks_.size(), Tensor());
        return s;
    }

    std::pair<Tensor, DecoderState> step(const DecoderState& s, const Tensor& word_emb,
                                         const EncoderOutput& enc) const override {
        DecoderState next = s;
        ++next.step;
        Tensor x = reshape(word_emb, {1, d_});
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            const Block& block = blocks_[b];
            Tensor k_new = block.self.project_keys(x);
            Tensor v_new = block.self.project_values(x);
            Tensor keys = s.step == 0 ? k_new : concat(s.cache_k[b], k_new, 0);
            Tensor values = s.step == 0 ? v_new : concat(s.cache_v[b], v_new, 0);
            next.cache_k[b] = keys;
            next.cache_v[b] = values;
            Tensor sa = block.self.apply_projected(x, keys, values);
            x = block.norm1.apply(add(x, sa));
            Tensor ctx = cross_rows(block, x, enc);
            x = block.norm2.apply(add(x, ctx));
            x = block.norm3.apply(add(x, block.ff.apply(x)));
        }
        return {reshape(x, {d_}), next};
    }

    Tensor forward(const Tensor& tokens_emb, const EncoderOutput& enc) const override {
        Tensor x = tokens_emb;
        for (const Block& block : blocks_) {
            Tensor sa = block.self.apply(x, x, {}, /*causal=*/true);
            x = block.norm1.apply(add(x, sa));
            Tensor ctx = cross_rows(block, x, enc);
            x = block.norm2.apply(add(x, ctx));
            x = block.norm3.apply(add(x, block.ff.apply(x)));
        }
        return x;
    }

    int width() const override { return d_; }

private:
    struct Block {
        MultiHeadAttention self;
        Norm norm1;
        std::optional<MultiHeadAttention> cross;
        std::shared_ptr<StepAttention> cross_step;
        Norm norm2;
        FeedForward ff;
        Norm norm3;
    };

    Tensor cross_rows(const Block& block, const Tensor& x, const EncoderOutput& enc) const {
        if (block.cross) return block.cross->apply(x, enc.states, enc.mask, /*causal=*/false);
        const int t_len = x.dim(0);
        Tensor out;
        for (int t = 0; t < t_len; ++t) {
            Tensor c = block.cross_step->attend(row(x, t), enc.states, enc.states, enc.mask).context;
            Tensor r = reshape(c, {1, d_});
            out = t == 0 ? r : concat(out, r, 0);
        }
        return out;
    }

    std::vector<Block> blocks_;
    int d_;
    std::shared_ptr<InteractionModule> interaction_;
};

// ---------------------------------------------------------------------------
// Vocabulary projection head, optionally tied to the token embedding table.

class LogitsHead : public Module {
public:
    LogitsHead(ParamStore& ps, int d, int vocab)
        : proj_(ps, "head", d, vocab), tied_(false), vocab_(vocab) {}

    LogitsHead(ParamStore& ps, const Tensor& embedding_table)
        : table_(embedding_table), tied_(true), vocab_(embedding_table.dim(0)) {
        bias_ = ps.bias("head.b", vocab_);
    }

    Tensor project(const Tensor& hidden) const {  // d -> V
        if (tied_) return add(vec_matmul(hidden, transpose(table_)), bias_);
        return proj_.vec(hidden);
    }

    Tensor project_rows(const Tensor& hiddens) const {  // T x d -> T x V
        if (tied_) return add_row_bias(matmul(hiddens, transpose(table_)), bias_);
        return proj_.rows(hiddens);
    }

    int vocab_size() const { return vocab_; }

private:
    Affine proj_;
    Tensor table_, bias_;
    bool tied_;
    int vocab_;
};

}  // namespace xmodal
