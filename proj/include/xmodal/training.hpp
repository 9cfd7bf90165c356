// SPDX-License-Identifier: Apache-2.0
//
// Training stage: losses-to-gradients strategies (cross entropy, label
// smoothing, scheduled sampling, self-critical sequence training), the Adam
// optimizer, and the deterministic training loop.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xmodal/checkpoint.hpp"
#include "xmodal/metrics.hpp"
#include "xmodal/pipeline.hpp"
#include "xmodal/tasks.hpp"

namespace xmodal {

// ---------------------------------------------------------------------------
// Adam with optional global-norm gradient clipping.

struct OptimizerState {
    struct Moments {
        std::vector<double> m, v;
    };
    std::map<std::string, Moments> moments;
    long long t = 0;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip = 0.0;  // 0 disables clipping
};

inline void adam_step(ParamStore& params, OptimizerState& state, const AdamConfig& cfg) {
    for (const auto& [name, tensor] : params.all()) {
        for (double g : tensor.grad()) {
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
        }
    }
    double scale_factor = 1.0;
    if (cfg.clip > 0.0) {
        double sq = 0.0;
        for (const auto& [name, tensor] : params.all()) {
            for (double g : tensor.grad()) sq += g * g;
        }
        const double norm = std::sqrt(sq);
        if (norm > cfg.clip) scale_factor = cfg.clip / norm;
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (const auto& [name, tensor] : params.all()) {
        auto& mom = state.moments[name];
        if (mom.m.size() != tensor.size()) {
            mom.m.assign(tensor.size(), 0.0);
            mom.v.assign(tensor.size(), 0.0);
        }
        Tensor t = tensor;
        auto& vals = t.values_mut();
        const auto& grads = t.grad();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double g = grads[i] * scale_factor;
            mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g;
            mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            vals[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
        snap_to_f32(vals);
    }
}

// ---------------------------------------------------------------------------
// Scheduled sampling schedule: linear decay with a floor.

inline double scheduled_sampling_prob(long long epoch, double k, double p_min) {
    if (k < 0) throw UsageError("scheduled sampling k must be >= 0");
    if (p_min < 0 || p_min > 1) throw UsageError("scheduled sampling p_min must be in [0, 1]");
    return std::max(p_min, 1.0 - k * static_cast<double>(epoch));
}

// Unrolls the decoder feeding ground truth with probability p_tf, otherwise
// the model's own previous argmax. Coin flips come from a per-(step, example)
// stream owned by the caller.
inline Tensor scheduled_sampling_step(const Pipeline& p, const Batch& batch, double p_tf, Rng& rng) {
    if (p_tf < 0 || p_tf > 1) throw UsageError("p_tf must be in [0, 1]");
    const int v = p.vocab_size();
    Tensor total;
    for (int b = 0; b < batch.size; ++b) {
        Rng ex_rng = rng.derive(static_cast<std::uint64_t>(b));
        EncoderOutput enc = encode_batch_visual(p, batch, b);
        std::vector<int> ids = batch.example_ids(b);
        std::vector<int> targets(ids.begin() + 1, ids.end());
        const int t_len = static_cast<int>(targets.size());

        DecoderState state = p.decoder->initial_state(enc);
        int input_id = ids[0];  // <bos>
        Tensor logits_rows;
        int prev_argmax = -1;
        for (int t = 0; t < t_len; ++t) {
            if (t > 0) {
                const bool teacher = ex_rng.uniform() < p_tf;
                input_id = teacher ? ids[static_cast<std::size_t>(t)] : prev_argmax;
            }
            Tensor emb = p.tok_embed->embed_at(input_id, state.step);
            auto [h, s2] = p.decoder->step(state, emb, enc);
            state = s2;
            Tensor logits = p.head->project(h);
            // free-running argmax over selectable ids, lowest id on ties
            prev_argmax = -1;
            for (int id = 0; id < v; ++id) {
                if (!decode_selectable(id)) continue;
                if (prev_argmax < 0 ||
                    logits.values()[static_cast<std::size_t>(id)] > logits.values()[static_cast<std::size_t>(prev_argmax)]) {
                    prev_argmax = id;
                }
            }
            Tensor r = reshape(logits, {1, v});
            logits_rows = t == 0 ? r : concat(logits_rows, r, 0);
        }
        Tensor loss = cross_entropy_loss(logits_rows, targets, BoolVec(targets.size(), 1));
        total = b == 0 ? loss : add(total, loss);
    }
    return scale(total, 1.0 / batch.size);
}

// ---------------------------------------------------------------------------
// Rewards and SCST.

struct RewardFn {
    std::string kind = "cider";  // cider | bleu4
    CiderIdf idf;

    double operator()(const TokenList& candidate, const std::vector<TokenList>& refs) const {
        if (kind == "bleu4") return bleu4(candidate, refs);
        return cider_d(candidate, refs, idf);
    }
};

inline RewardFn make_reward(const std::string& kind, const std::vector<TokenList>& corpus_refs) {
    if (kind != "cider" && kind != "bleu4") {
        throw ConfigError("[training] reward must be cider or bleu4, got '" + kind + "'");
    }
    RewardFn fn;
    fn.kind = kind;
    if (kind == "cider") {
        std::vector<std::vector<TokenList>> per_image;
        per_image.reserve(corpus_refs.size());
        for (const TokenList& r : corpus_refs) per_image.push_back({r});
        fn.idf = build_cider_idf(per_image);
    }
    return fn;
}

struct ScstResult {
    Tensor loss;
    double reward_mean = 0.0;
};

using CaptionReward = std::function<double(const TokenList&, const std::vector<TokenList>&)>;

// Policy gradient with the greedy decode as the baseline. The sampled
// caption's summed log-probability is tape-recorded; rewards are not.
inline ScstResult scst_loss(const Pipeline& p, const Batch& batch, const CaptionReward& reward, Rng& rng,
                            int max_len) {
    Tensor total;
    double reward_sum = 0.0;
    for (int b = 0; b < batch.size; ++b) {
        Rng ex_rng = rng.derive(static_cast<std::uint64_t>(b));
        EncoderOutput enc = encode_batch_visual(p, batch, b);

        Pipeline::SampledCaption sampled = p.sample_caption(enc, max_len, ex_rng);

        TokenSequence greedy_seq;
        {
            NoTapeScope no_tape;
            greedy_seq = greedy_decode(p.scorer(enc), max_len);
        }

        std::vector<TokenList> refs = {Pipeline::content_ids(batch.example_ids(b))};
        const double r_sampled = reward(Pipeline::content_ids(sampled.ids), refs);
        const double r_greedy = reward(Pipeline::content_ids(greedy_seq.ids), refs);
        const double advantage = r_sampled - r_greedy;
        reward_sum += r_sampled;

        Tensor loss_b = scale(sampled.logp_sum, -advantage);
        total = b == 0 ? loss_b : add(total, loss_b);
    }
    return {scale(total, 1.0 / batch.size), reward_sum / batch.size};
}

// ---------------------------------------------------------------------------
// Strategy modules.

class CeStrategy : public TrainingStrategy {
public:
    TrainStepResult compute(Pipeline& p, const Batch& batch, TrainStepContext& ctx) override {
        if (p.task == "captioning") return {captioning_loss(p, batch, 0.0), std::nullopt};
        if (p.task == "vqa") return {vqa_loss(p, batch), std::nullopt};
        if (p.task == "vcr") return {vcr_loss(p, batch), std::nullopt};
        if (p.task == "retrieval") return {visual_sentence_matching_loss(p, batch), std::nullopt};
        if (p.task == "vlp") {
            Rng r = ctx.rng->derive("vlp");
            const VlpConfig vlp = p.vlp ? *p.vlp : VlpConfig{};
            return {vlp_pretrain_step(p, batch, vlp.w_mlm, vlp.w_msg, vlp.w_vsm, r), std::nullopt};
        }
        throw ConfigError("no training objective for task '" + p.task + "'");
    }
    std::string name() const override { return "ce"; }
};

class LabelSmoothingStrategy : public TrainingStrategy {
public:
    explicit LabelSmoothingStrategy(double epsilon) : epsilon_(epsilon) {
        if (epsilon < 0 || epsilon >= 1) throw ConfigError("[training] epsilon must be in [0, 1)");
    }

    TrainStepResult compute(Pipeline& p, const Batch& batch, TrainStepContext&) override {
        if (p.task != "captioning") {
            throw ConfigError("label_smoothing strategy requires the captioning task");
        }
        return {captioning_loss(p, batch, epsilon_), std::nullopt};
    }
    std::string name() const override { return "label_smoothing"; }

    double epsilon() const { return epsilon_; }

private:
    double epsilon_;
};

class ScheduledSamplingStrategy : public TrainingStrategy {
public:
    ScheduledSamplingStrategy(double k, double p_min) : k_(k), p_min_(p_min) {}

    TrainStepResult compute(Pipeline& p, const Batch& batch, TrainStepContext& ctx) override {
        if (p.task != "captioning") {
            throw ConfigError("scheduled_sampling strategy requires the captioning task");
        }
        ctx.teacher_forcing = scheduled_sampling_prob(ctx.epoch, k_, p_min_);
        Rng r = ctx.rng->derive("ss");
        return {scheduled_sampling_step(p, batch, ctx.teacher_forcing, r), std::nullopt};
    }
    std::string name() const override { return "scheduled_sampling"; }

    double k() const { return k_; }
    double p_min() const { return p_min_; }

private:
    double k_, p_min_;
};

class ScstStrategy : public TrainingStrategy {
public:
    ScstStrategy(std::string reward_kind, int max_len) : kind_(std::move(reward_kind)), max_len_(max_len) {}

    // idf built once from the training captions
    void prepare(const std::vector<TokenList>& corpus_refs) { reward_ = make_reward(kind_, corpus_refs); }
    bool prepared() const { return reward_.has_value(); }

    TrainStepResult compute(Pipeline& p, const Batch& batch, TrainStepContext& ctx) override {
        if (p.task != "captioning") throw ConfigError("scst strategy requires the captioning task");
        if (!reward_) throw UsageError("scst strategy used before prepare()");
        Rng r = ctx.rng->derive("scst");
        ScstResult res = scst_loss(p, batch, *reward_, r, max_len_);
        return {res.loss, res.reward_mean};
    }
    std::string name() const override { return "scst"; }

private:
    std::string kind_;
    int max_len_;
    std::optional<RewardFn> reward_;
};

// ---------------------------------------------------------------------------
// Training loop.

struct TrainItem {
    VisualTokens visual;
    TokenSequence tokens;  // caption (captioning/vlp/retrieval) or question (vqa/vcr)
    int answer = -1;
    std::vector<std::vector<int>> choices;
    int correct = -1;
    std::string id;
};

inline Batch make_batch(const std::vector<const TrainItem*>& items) {
    std::vector<CollateItem> collate_items;
    collate_items.reserve(items.size());
    for (const TrainItem* it : items) {
        collate_items.push_back({&it->visual, it->tokens, it->id});
    }
    Batch batch = collate(collate_items);
    for (const TrainItem* it : items) {
        batch.answers.push_back(it->answer);
        batch.choices.push_back(it->choices);
        batch.correct_choice.push_back(it->correct);
    }
    return batch;
}

struct TrainRecord {
    long long step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double p_tf = 1.0;
    std::optional<double> reward;
};

inline std::string format_record(const TrainRecord& r) {
    char buf[160];
    if (r.reward) {
        std::snprintf(buf, sizeof(buf), "%lld\t%.6f\t%.6g\t%.4f\t%.6f", r.step, r.loss, r.lr, r.p_tf, *r.reward);
    } else {
        std::snprintf(buf, sizeof(buf), "%lld\t%.6f\t%.6g\t%.4f", r.step, r.loss, r.lr, r.p_tf);
    }
    return std::string(buf);
}

struct TrainResult {
    std::vector<TrainRecord> records;
    std::string checkpoint_path;  // final checkpoint, empty if out_dir empty
};

// Deterministic loop: per-epoch shuffles and per-step RNG streams are pure
// functions of (seed, epoch) and (seed, step).
inline TrainResult train_loop(Pipeline& p, const std::vector<TrainItem>& dataset, const std::string& out_dir) {
    if (dataset.empty()) throw UsageError("train_loop requires a nonempty dataset");
    const PipelineConfig& cfg = p.cfg;
    AdamConfig adam;
    adam.lr = cfg.get_real("training", "lr", 5e-3);
    adam.clip = cfg.get_real("training", "clip", 0.0);
    const long long steps = cfg.get_int("training", "steps", 200);
    const int batch_size = static_cast<int>(cfg.get_int("training", "batch_size", 8));
    const long long save_every = cfg.get_int("training", "save_every", 0);
    if (steps < 1 || batch_size < 1) throw ConfigError("[training] steps and batch_size must be >= 1");

    if (auto* scst = dynamic_cast<ScstStrategy*>(p.strategy.get()); scst && !scst->prepared()) {
        std::vector<TokenList> refs;
        refs.reserve(dataset.size());
        for (const TrainItem& it : dataset) refs.push_back(Pipeline::content_ids(it.tokens.ids));
        scst->prepare(refs);
    }

    std::ofstream record_file;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        record_file.open(out_dir + "/train_records.tsv", std::ios::binary);
        if (!record_file) throw FormatError("cannot open training record file in " + out_dir);
    }

    OptimizerState opt;
    TrainResult result;
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    long long epoch = 0;
    std::size_t cursor = order.size();  // force an initial shuffle

    p.run->training = true;
    for (long long step = 1; step <= steps; ++step) {
        std::vector<const TrainItem*> items;
        items.reserve(static_cast<std::size_t>(batch_size));
        for (int i = 0; i < batch_size; ++i) {
            if (cursor == order.size()) {
                if (step > 1 || i > 0) ++epoch;
                Rng shuffle_rng = Rng(p.seed).derive("shuffle").derive(static_cast<std::uint64_t>(epoch));
                shuffle_rng.shuffle(order);
                cursor = 0;
            }
            items.push_back(&dataset[order[cursor++]]);
        }
        Batch batch = make_batch(items);

        Rng step_rng = Rng(p.seed).derive("step").derive(static_cast<std::uint64_t>(step));
        TrainStepContext ctx;
        ctx.step = step;
        ctx.epoch = epoch;
        ctx.rng = &step_rng;
        p.run->rng = &step_rng;

        double loss_value = 0.0;
        TrainStepResult res;
        try {
            Tape tape;
            TapeScope scope(tape);
            p.params.zero_grads();
            res = p.strategy->compute(p, batch, ctx);
            loss_value = res.loss.item();
            backward(res.loss, tape);
            adam_step(p.params, opt, adam);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (training step " + std::to_string(step) + ")");
        }

        TrainRecord record{step, loss_value, adam.lr, ctx.teacher_forcing, res.reward_mean};
        if (record_file) record_file << format_record(record) << "\n";
        result.records.push_back(record);
        p.trained_steps = step;

        if (!out_dir.empty() && save_every > 0 && step % save_every == 0) {
            save_checkpoint(p, out_dir + "/checkpoint_" + std::to_string(step) + ".xtns", step);
        }
    }
    p.run->training = false;
    p.run->rng = nullptr;

    if (!out_dir.empty()) {
        result.checkpoint_path = out_dir + "/checkpoint_final.xtns";
        save_checkpoint(p, result.checkpoint_path, steps);
    }
    return result;
}

}  // namespace xmodal
