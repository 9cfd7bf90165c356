// SPDX-License-Identifier: Apache-2.0
//
// Task wirings over the shared stages: captioning, vision-language
// pre-training objectives, VQA, cross-modal retrieval, VCR.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "xmodal/losses.hpp"
#include "xmodal/pipeline.hpp"

namespace xmodal {

// ---------------------------------------------------------------------------
// Captioning

inline EncoderOutput encode_batch_visual(const Pipeline& p, const Batch& batch, int b) {
    const int n = batch.true_regions(b);
    BoolVec mask(static_cast<std::size_t>(n), 1);
    return p.encode_visual(batch.example_features(b), mask, batch.edges[static_cast<std::size_t>(b)]);
}

// Teacher-forced logits for every example, stacked to B x (Lmax-1) x V with
// zero rows past each caption's end.
inline Tensor captioning_forward(const Pipeline& p, const Batch& batch) {
    const int v = p.vocab_size();
    const int t_max = batch.max_len - 1;
    Tensor stacked;
    for (int b = 0; b < batch.size; ++b) {
        EncoderOutput enc = encode_batch_visual(p, batch, b);
        std::vector<int> ids = batch.example_ids(b);
        std::vector<int> input(ids.begin(), ids.end() - 1);
        Tensor logits = p.caption_logits(enc, input);  // (len-1) x V
        if (logits.dim(0) < t_max) {
            logits = concat(logits, Tensor::zeros({t_max - logits.dim(0), v}), 0);
        }
        stacked = b == 0 ? logits : concat(stacked, logits, 0);
    }
    return reshape(stacked, {batch.size, t_max, v});
}

// Mean over examples of the per-example masked cross entropy.
inline Tensor captioning_loss(const Pipeline& p, const Batch& batch, double label_smoothing = 0.0) {
    Tensor total;
    for (int b = 0; b < batch.size; ++b) {
        EncoderOutput enc = encode_batch_visual(p, batch, b);
        std::vector<int> ids = batch.example_ids(b);
        std::vector<int> input(ids.begin(), ids.end() - 1);
        std::vector<int> targets(ids.begin() + 1, ids.end());
        Tensor logits = p.caption_logits(enc, input);
        Tensor loss = smoothed_cross_entropy(logits, targets, BoolVec(targets.size(), 1), label_smoothing);
        total = b == 0 ? loss : add(total, loss);
    }
    return scale(total, 1.0 / batch.size);
}

// ---------------------------------------------------------------------------
// Pre-training objectives (vlp task: two streams + co-attention)

namespace detail {

inline std::vector<int> content_positions(const std::vector<int>& ids) {
    std::vector<int> out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= kNumReserved) out.push_back(static_cast<int>(i));
    }
    return out;
}

inline const CoAttentionBlock& co_block(const Pipeline& p) {
    if (!p.interaction || !p.interaction->co) {
        throw UsageError("this objective needs a co_attention interaction module");
    }
    return *p.interaction->co;
}

}  // namespace detail

// Masked language modeling: corrupt ceil(rate * L) non-reserved positions
// (80% <unk>, 10% random token, 10% keep), encode bidirectionally, co-attend
// with the visual stream, and predict the original tokens at the corrupted
// positions. Zero corrupted positions gives loss 0.
inline Tensor mlm_loss(const Pipeline& p, const Batch& batch, double mask_rate, Rng& rng) {
    if (mask_rate < 0.0 || mask_rate >= 1.0) throw UsageError("mask_rate must be in [0, 1)");
    const int v = p.vocab_size();
    Tensor total = Tensor::zeros({1});
    int with_positions = 0;
    for (int b = 0; b < batch.size; ++b) {
        Rng ex_rng = rng.derive(static_cast<std::uint64_t>(b));
        std::vector<int> ids = batch.example_ids(b);
        std::vector<int> positions = detail::content_positions(ids);
        const int n_maskable = static_cast<int>(positions.size());
        const int k = static_cast<int>(std::ceil(mask_rate * n_maskable));
        if (k == 0) continue;
        ex_rng.shuffle(positions);
        positions.resize(static_cast<std::size_t>(k));
        std::sort(positions.begin(), positions.end());

        std::vector<int> corrupted = ids;
        std::vector<int> targets;
        for (int pos : positions) {
            targets.push_back(ids[static_cast<std::size_t>(pos)]);
            const double u = ex_rng.uniform();
            if (u < 0.8) {
                corrupted[static_cast<std::size_t>(pos)] = kUnkId;
            } else if (u < 0.9) {
                corrupted[static_cast<std::size_t>(pos)] = kNumReserved + static_cast<int>(ex_rng.below(
                                                               static_cast<std::uint64_t>(v - kNumReserved)));
            }  // else keep
        }

        EncoderOutput vis = encode_batch_visual(p, batch, b);
        EncoderOutput sent = p.encode_sentence_ids(corrupted, {});
        auto [sent_co, vis_co] = detail::co_block(p).apply(sent.states, vis.states, sent.mask, vis.mask);
        Tensor picked = embedding_lookup(sent_co, positions);
        Tensor logits = p.head->project_rows(picked);
        total = add(total, cross_entropy_loss(logits, targets, BoolVec(targets.size(), 1)));
        ++with_positions;
    }
    return with_positions == 0 ? Tensor::zeros({1}) : scale(total, 1.0 / batch.size);
}

// Masked sentence generation: corrupt one contiguous span of content tokens
// with <unk>, then reconstruct the full original sentence autoregressively,
// conditioned on the co-attended visual and corrupted-sentence states.
inline Tensor masked_sentence_generation_loss(const Pipeline& p, const Batch& batch, double span_rate,
                                              Rng& rng) {
    if (span_rate < 0.0 || span_rate >= 1.0) throw UsageError("span_rate must be in [0, 1)");
    Tensor total;
    for (int b = 0; b < batch.size; ++b) {
        Rng ex_rng = rng.derive(static_cast<std::uint64_t>(b));
        std::vector<int> ids = batch.example_ids(b);
        std::vector<int> positions = detail::content_positions(ids);
        const int n_content = static_cast<int>(positions.size());
        const int k = static_cast<int>(std::ceil(span_rate * n_content));
        std::vector<int> corrupted = ids;
        if (k > 0) {
            const int start = static_cast<int>(ex_rng.below(static_cast<std::uint64_t>(n_content - k + 1)));
            for (int i = start; i < start + k; ++i) {
                corrupted[static_cast<std::size_t>(positions[static_cast<std::size_t>(i)])] = kUnkId;
            }
        }

        EncoderOutput vis = encode_batch_visual(p, batch, b);
        EncoderOutput sent = p.encode_sentence_ids(corrupted, {});
        auto [sent_co, vis_co] = detail::co_block(p).apply(sent.states, vis.states, sent.mask, vis.mask);

        EncoderOutput conditioning;
        conditioning.states = concat(vis_co, sent_co, 0);
        conditioning.mask = vis.mask;
        conditioning.mask.insert(conditioning.mask.end(), sent.mask.begin(), sent.mask.end());
        conditioning = finalize_encoder_output(conditioning.states, conditioning.mask);

        std::vector<int> input(ids.begin(), ids.end() - 1);
        std::vector<int> targets(ids.begin() + 1, ids.end());
        Tensor logits = p.caption_logits(conditioning, input);
        Tensor loss = cross_entropy_loss(logits, targets, BoolVec(targets.size(), 1));
        total = b == 0 ? loss : add(total, loss);
    }
    return scale(total, 1.0 / batch.size);
}

// Symmetric cross entropy over a pooled-feature score matrix with the
// diagonal as targets in both directions.
inline Tensor vsm_loss_from_pooled(const Tensor& visual_rows, const Tensor& sentence_rows,
                                   double temperature) {
    if (visual_rows.dim(0) != sentence_rows.dim(0)) {
        throw ShapeError("vsm needs matching visual/sentence counts");
    }
    const int n = visual_rows.dim(0);
    Tensor scores = matmul(visual_rows, transpose(sentence_rows));
    if (temperature != 1.0) scores = scale(scores, 1.0 / temperature);

    std::vector<double> diag(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) diag[static_cast<std::size_t>(i) * n + i] = -1.0 / n;
    Tensor pick(std::vector<int>{n, n}, std::move(diag));
    Tensor loss_rows = sum(mul(log_softmax(scores, 1), pick));
    Tensor loss_cols = sum(mul(log_softmax(scores, 0), pick));
    return scale(add(loss_rows, loss_cols), 0.5);
}

inline Tensor visual_sentence_matching_loss(const Pipeline& p, const Batch& batch) {
    const int n = batch.size;
    Tensor v_rows, s_rows;
    for (int b = 0; b < n; ++b) {
        EncoderOutput vis = encode_batch_visual(p, batch, b);
        EncoderOutput sent = p.encode_sentence_ids(batch.example_ids(b), {});
        Tensor vr = reshape(vis.global, {1, p.d});
        Tensor sr = reshape(sent.global, {1, p.d});
        v_rows = b == 0 ? vr : concat(v_rows, vr, 0);
        s_rows = b == 0 ? sr : concat(s_rows, sr, 0);
    }
    return vsm_loss_from_pooled(v_rows, s_rows, p.retrieval_temperature);
}

// ---------------------------------------------------------------------------
// VQA

// Holistic image-question feature: [cross-modal context ; pooled question].
inline Tensor holistic_feature(const Pipeline& p, const EncoderOutput& vis, const EncoderOutput& sent) {
    if (p.interaction->kind == InteractionKind::CoAttention) {
        auto [sent_co, vis_co] = p.interaction->co->apply(sent.states, vis.states, sent.mask, vis.mask);
        EncoderOutput vis_pooled = finalize_encoder_output(vis_co, vis.mask);
        EncoderOutput sent_pooled = finalize_encoder_output(sent_co, sent.mask);
        return concat(vis_pooled.global, sent_pooled.global, 0);
    }
    Tensor ctx = p.interaction->step->attend(sent.global, vis.states, vis.states, vis.mask).context;
    return concat(ctx, sent.global, 0);
}

struct VqaPrediction {
    int answer = 0;
    std::vector<double> scores;  // simplex over answers
};

inline Tensor vqa_logits(const Pipeline& p, const VisualTokens& image, const std::vector<int>& question_ids) {
    if (!p.vqa_head) throw UsageError("pipeline has no vqa head (task is '" + p.task + "')");
    EncoderOutput vis = p.encode_visual(image);
    EncoderOutput sent = p.encode_sentence_ids(question_ids, {});
    return p.vqa_head->vec(holistic_feature(p, vis, sent));
}

inline VqaPrediction vqa_predict(const Pipeline& p, const VisualTokens& image,
                                 const std::vector<int>& question_ids) {
    NoTapeScope no_tape;
    Tensor probs = softmax(vqa_logits(p, image, question_ids));
    VqaPrediction out;
    out.scores = probs.values();
    out.answer = 0;
    for (std::size_t i = 1; i < out.scores.size(); ++i) {
        if (out.scores[i] > out.scores[static_cast<std::size_t>(out.answer)]) out.answer = static_cast<int>(i);
    }
    return out;
}

inline Tensor vqa_loss(const Pipeline& p, const Batch& batch) {
    Tensor total;
    for (int b = 0; b < batch.size; ++b) {
        EncoderOutput vis = encode_batch_visual(p, batch, b);
        EncoderOutput sent = p.encode_sentence_ids(batch.example_ids(b), {});
        Tensor logits = p.vqa_head->vec(holistic_feature(p, vis, sent));
        Tensor loss = cross_entropy_loss(reshape(logits, {1, logits.dim(0)}),
                                         {batch.answers[static_cast<std::size_t>(b)]}, {});
        total = b == 0 ? loss : add(total, loss);
    }
    return scale(total, 1.0 / batch.size);
}

// ---------------------------------------------------------------------------
// Cross-modal retrieval

struct RetrievalScores {
    int n_images = 0, n_captions = 0;
    std::vector<double> scores;  // row-major images x captions

    double at(int i, int j) const { return scores[static_cast<std::size_t>(i) * n_captions + j]; }

    // Fraction of rows whose true column (same index) ranks in the top k;
    // ties rank by lower column index.
    double recall_at_k(int k) const {
        int hit = 0;
        for (int i = 0; i < n_images; ++i) {
            int rank = 0;
            for (int j = 0; j < n_captions; ++j) {
                if (j == i) continue;
                if (at(i, j) > at(i, i) || (at(i, j) == at(i, i) && j < i)) ++rank;
            }
            if (rank < k) ++hit;
        }
        return static_cast<double>(hit) / n_images;
    }
};

inline RetrievalScores retrieval_scores(const Pipeline& p, const std::vector<VisualTokens>& images,
                                        const std::vector<TokenSequence>& captions) {
    if (images.empty() || captions.empty()) throw UsageError("retrieval needs nonempty image and caption lists");
    NoTapeScope no_tape;
    RetrievalScores out;
    out.n_images = static_cast<int>(images.size());
    out.n_captions = static_cast<int>(captions.size());
    std::vector<Tensor> vg, sg;
    for (const VisualTokens& v : images) vg.push_back(p.encode_visual(v).global);
    for (const TokenSequence& c : captions) sg.push_back(p.encode_sentence_ids(c.ids, c.mask).global);
    out.scores.resize(static_cast<std::size_t>(out.n_images) * out.n_captions);
    for (int i = 0; i < out.n_images; ++i) {
        for (int j = 0; j < out.n_captions; ++j) {
            double dot = 0.0;
            for (int x = 0; x < p.d; ++x) dot += vg[static_cast<std::size_t>(i)].values()[static_cast<std::size_t>(x)] *
                                                  sg[static_cast<std::size_t>(j)].values()[static_cast<std::size_t>(x)];
            out.scores[static_cast<std::size_t>(i) * out.n_captions + j] = dot;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// VCR: score each (question + choice) pair against the image.

struct VcrPrediction {
    int choice = 0;
    std::vector<double> scores;  // simplex over the 4 choices
};

inline std::vector<int> vcr_pair_ids(const std::vector<int>& question_ids, const std::vector<int>& choice_ids) {
    std::vector<int> ids = {kBosId};
    for (int id : question_ids)
        if (id >= kNumReserved) ids.push_back(id);
    for (int id : choice_ids)
        if (id >= kNumReserved) ids.push_back(id);
    ids.push_back(kEosId);
    return ids;
}

inline Tensor vcr_logits(const Pipeline& p, const VisualTokens& image, const std::vector<int>& question_ids,
                         const std::vector<std::vector<int>>& choices) {
    if (!p.vcr_head) throw UsageError("pipeline has no vcr head (task is '" + p.task + "')");
    if (choices.size() != 4) throw UsageError("vcr requires exactly 4 choices, got " + std::to_string(choices.size()));
    EncoderOutput vis = p.encode_visual(image);
    Tensor logits;
    bool first = true;
    for (const std::vector<int>& choice : choices) {
        std::vector<int> pair = vcr_pair_ids(question_ids, choice);
        EncoderOutput sent = p.encode_sentence_ids(pair, {});
        Tensor score = p.vcr_head->vec(holistic_feature(p, vis, sent));
        logits = first ? score : concat(logits, score, 0);
        first = false;
    }
    return logits;  // 4
}

inline VcrPrediction vcr_score(const Pipeline& p, const VisualTokens& image,
                               const std::vector<int>& question_ids,
                               const std::vector<std::vector<int>>& choices) {
    NoTapeScope no_tape;
    Tensor probs = softmax(vcr_logits(p, image, question_ids, choices));
    VcrPrediction out;
    out.scores = probs.values();
    out.choice = 0;
    for (std::size_t i = 1; i < out.scores.size(); ++i) {
        if (out.scores[i] > out.scores[static_cast<std::size_t>(out.choice)]) out.choice = static_cast<int>(i);
    }
    return out;
}

inline Tensor vcr_loss(const Pipeline& p, const Batch& batch) {
    Tensor total;
    for (int b = 0; b < batch.size; ++b) {
        const int n = batch.true_regions(b);
        BoolVec mask(static_cast<std::size_t>(n), 1);
        VisualTokens vt = make_visual_tokens(batch.example_features(b), batch.edges[static_cast<std::size_t>(b)]);
        Tensor logits = vcr_logits(p, vt, batch.example_ids(b), batch.choices[static_cast<std::size_t>(b)]);
        Tensor loss = cross_entropy_loss(reshape(logits, {1, 4}),
                                         {batch.correct_choice[static_cast<std::size_t>(b)]}, {});
        total = b == 0 ? loss : add(total, loss);
    }
    return scale(total, 1.0 / batch.size);
}

// ---------------------------------------------------------------------------
// VLP combined objective: weighted sum of MLM, MSG and VSM.

inline Tensor vlp_pretrain_step(const Pipeline& p, const Batch& batch, double w_mlm, double w_msg,
                                double w_vsm, Rng& rng) {
    if (w_mlm < 0 || w_msg < 0 || w_vsm < 0) throw UsageError("vlp objective weights must be >= 0");
    Tensor total = Tensor::zeros({1});
    if (w_mlm > 0) {
        Rng r = rng.derive("mlm");
        total = add(total, scale(mlm_loss(p, batch, p.vlp ? p.vlp->mask_rate : 0.3, r), w_mlm));
    }
    if (w_msg > 0) {
        Rng r = rng.derive("msg");
        total = add(total, scale(masked_sentence_generation_loss(p, batch, p.vlp ? p.vlp->span_rate : 0.3, r), w_msg));
    }
    if (w_vsm > 0) {
        total = add(total, scale(visual_sentence_matching_loss(p, batch), w_vsm));
    }
    return total;
}

}  // namespace xmodal
