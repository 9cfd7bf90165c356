// SPDX-License-Identifier: Apache-2.0
//
// Pipeline assembly: stage modules wired per config, parameter store, the
// decode adapters, and per-example forward paths shared by all tasks.

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "xmodal/config.hpp"
#include "xmodal/data.hpp"
#include "xmodal/decode.hpp"
#include "xmodal/decoders.hpp"
#include "xmodal/encoders.hpp"
#include "xmodal/interaction.hpp"
#include "xmodal/metrics.hpp"
#include "xmodal/nn.hpp"
#include "xmodal/params.hpp"
#include "xmodal/registry.hpp"
#include "xmodal/vocab.hpp"

namespace xmodal {

// Suppresses tape recording for inference paths inside a training step.
class NoTapeScope {
public:
    NoTapeScope() : prev_(Tape::current()) { Tape::current() = nullptr; }
    ~NoTapeScope() { Tape::current() = prev_; }
    NoTapeScope(const NoTapeScope&) = delete;
    NoTapeScope& operator=(const NoTapeScope&) = delete;

private:
    Tape* prev_;
};

// ---------------------------------------------------------------------------
// Stage modules that are configuration rather than parameters.

class Preprocessor : public Module {
public:
    Vocabulary vocab;
    int max_len = 16;      // tokenizer cap, includes <bos>/<eos>
    int feature_dim = 0;   // visual feature width d_v

    TokenSequence encode_sentence(const std::string& text) const {
        return tokenize(text, vocab, max_len);
    }
};

struct DecodeConfig : Module {
    std::string name = "greedy";  // greedy | beam
    int beam = 3;
    int max_len = 16;
    double alpha = 0.0;
};

struct VlpConfig : Module {
    double w_mlm = 1.0, w_msg = 1.0, w_vsm = 1.0;
    double mask_rate = 0.3;
    double span_rate = 0.3;
};

struct Pipeline;

struct TrainStepContext {
    long long step = 0;
    long long epoch = 0;
    Rng* rng = nullptr;           // deterministic per-step stream
    double teacher_forcing = 1.0; // scheduled-sampling probability for this step
};

struct TrainStepResult {
    Tensor loss;
    std::optional<double> reward_mean;
};

class TrainingStrategy : public Module {
public:
    virtual TrainStepResult compute(Pipeline& pipeline, const Batch& batch, TrainStepContext& ctx) = 0;
    virtual std::string name() const = 0;
};

// ---------------------------------------------------------------------------
// Build context handed to registered factories.

struct BuildContext {
    const PipelineConfig& cfg;
    ParamStore& params;
    std::shared_ptr<RunState> run;
    std::string prefix;  // parameter name prefix for the module being built
    int d = 0;           // model width
    int d_emb = 0;       // embedding width (== d)
    int feature_dim = 0;
    int vocab_size = 0;
    int max_positions = 0;
    std::shared_ptr<InteractionModule> interaction;  // set before decoders build
    std::shared_ptr<TokenEmbedder> tok_embed;        // set before decoders build
};

// ---------------------------------------------------------------------------

struct Pipeline {
    PipelineConfig cfg;
    std::uint64_t seed = 0;
    std::uint64_t model_hash = 0;
    std::string task;

    ParamStore params;
    std::shared_ptr<RunState> run = std::make_shared<RunState>();

    std::shared_ptr<Preprocessor> pre;
    std::shared_ptr<TokenEmbedder> tok_embed;
    std::shared_ptr<VisualEmbedder> vis_embed;
    std::shared_ptr<Encoder> encoder;       // visual stream
    std::shared_ptr<Encoder> sent_encoder;  // sentence stream (two-stream tasks)
    std::shared_ptr<InteractionModule> interaction;
    std::shared_ptr<DecoderCore> decoder;
    std::shared_ptr<LogitsHead> head;
    std::shared_ptr<DecodeConfig> decode_cfg;
    std::shared_ptr<TrainingStrategy> strategy;
    std::shared_ptr<VlpConfig> vlp;

    std::shared_ptr<Affine> vqa_head;  // [ctx; pooled question] -> answers
    std::shared_ptr<Affine> vcr_head;  // [ctx; pooled choice] -> scalar
    double retrieval_temperature = 1.0;

    int d = 0;
    long long trained_steps = 0;

    explicit Pipeline(std::uint64_t global_seed) : seed(global_seed), params(global_seed) {}

    int vocab_size() const { return pre->vocab.size(); }

    // ---- visual stream -----------------------------------------------------

    EncoderOutput encode_visual(const Tensor& features, const BoolVec& region_mask,
                                const std::vector<RelationEdge>& edges) const {
        Tensor x = vis_embed->embed(features);
        BoolVec mask = region_mask.empty() ? BoolVec(static_cast<std::size_t>(features.dim(0)), 1) : region_mask;
        EncoderOutput enc = encoder->encode(x, mask, edges);
        if (interaction->kind == InteractionKind::MeshedMemory) {
            Tensor enhanced = interaction->meshed->apply(enc.states, enc.mask);
            enc = finalize_encoder_output(interaction->meshed_norm.apply(add(enc.states, enhanced)), enc.mask);
        }
        return enc;
    }

    EncoderOutput encode_visual(const VisualTokens& v) const {
        return encode_visual(v.features, {}, v.edges);
    }

    // ---- sentence stream (two-stream tasks) --------------------------------

    EncoderOutput encode_sentence_ids(const std::vector<int>& ids, const BoolVec& mask) const {
        if (!sent_encoder) throw UsageError("pipeline has no sentence encoder for task " + task);
        Tensor emb = tok_embed->embed(ids);
        return sent_encoder->encode(emb, mask.empty() ? BoolVec(ids.size(), 1) : mask, {});
    }

    // ---- captioning --------------------------------------------------------

    // Teacher-forced hidden states and logits for one example.
    Tensor caption_logits(const EncoderOutput& enc, const std::vector<int>& input_ids) const {
        Tensor emb = tok_embed->embed(input_ids);
        Tensor hidden = decoder->forward(emb, enc);
        return head->project_rows(hidden);
    }

    // ---- decoding adapters --------------------------------------------------

    struct ScorerState {
        DecoderState dec;
        std::vector<double> logp;
    };

    // Step-model view over a fixed encoder output; inference only.
    struct Scorer {
        using State = ScorerState;

        const Pipeline* pipeline;
        EncoderOutput enc;

        int vocab_size() const { return pipeline->vocab_size(); }

        State start() const {
            NoTapeScope no_tape;
            return consume(pipeline->decoder->initial_state(enc), kBosId);
        }

        State advance(const State& s, int id) const {
            NoTapeScope no_tape;
            return consume(s.dec, id);
        }

        const std::vector<double>& logprobs(const State& s) const { return s.logp; }

    private:
        State consume(const DecoderState& d, int id) const {
            Tensor emb = pipeline->tok_embed->embed_at(id, d.step);
            auto [h, d2] = pipeline->decoder->step(d, emb, enc);
            Tensor lp = log_softmax(pipeline->head->project(h));
            return {d2, lp.values()};
        }
    };

    Scorer scorer(const EncoderOutput& enc) const { return Scorer{this, enc}; }

    TokenSequence greedy(const VisualTokens& visual, int max_len) const {
        NoTapeScope no_tape;
        return greedy_decode(scorer(encode_visual(visual)), max_len);
    }

    BeamResult beam(const VisualTokens& visual, int width, int max_len, double alpha) const {
        NoTapeScope no_tape;
        return beam_search(scorer(encode_visual(visual)), width, max_len, alpha);
    }

    // Decode with the configured strategy; beam_override > 0 forces a width.
    TokenSequence decode(const VisualTokens& visual, int beam_override = 0) const {
        const DecodeConfig& dc = *decode_cfg;
        const int width = beam_override > 0 ? beam_override : dc.beam;
        if (dc.name == "beam" || beam_override > 0) {
            return beam(visual, width, dc.max_len, dc.alpha).best;
        }
        return greedy(visual, dc.max_len);
    }

    // ---- sampling (policy-gradient path; records log-probs on the tape) ----

    struct SampledCaption {
        std::vector<int> ids;  // with <bos> and possibly trailing <eos>
        Tensor logp_sum;       // scalar, differentiable
    };

    SampledCaption sample_caption(const EncoderOutput& enc, int max_len, Rng& rng) const {
        const int v = vocab_size();
        BoolVec allowed(static_cast<std::size_t>(v), 1);
        allowed[kPadId] = allowed[kBosId] = allowed[kUnkId] = 0;

        SampledCaption out;
        out.ids = {kBosId};
        out.logp_sum = Tensor::zeros({1});
        DecoderState state = decoder->initial_state(enc);
        int prev = kBosId;
        for (int t = 0; t < max_len; ++t) {
            Tensor emb = tok_embed->embed_at(prev, state.step);
            auto [h, s2] = decoder->step(state, emb, enc);
            state = s2;
            Tensor lp = log_softmax(head->project(h), -1, &allowed);
            // sample from the masked distribution
            double u = rng.uniform();
            int chosen = -1;
            double acc = 0.0;
            for (int id = 0; id < v; ++id) {
                if (!allowed[static_cast<std::size_t>(id)]) continue;
                acc += std::exp(lp.values()[static_cast<std::size_t>(id)]);
                if (u < acc) {
                    chosen = id;
                    break;
                }
            }
            if (chosen < 0) {  // numerical tail: pick the last allowed id
                for (int id = v - 1; id >= 0; --id) {
                    if (allowed[static_cast<std::size_t>(id)]) {
                        chosen = id;
                        break;
                    }
                }
            }
            std::vector<double> pick(static_cast<std::size_t>(v), 0.0);
            pick[static_cast<std::size_t>(chosen)] = 1.0;
            out.logp_sum = add(out.logp_sum, sum(mul(lp, Tensor({v}, std::move(pick)))));
            out.ids.push_back(chosen);
            if (chosen == kEosId) break;
            prev = chosen;
        }
        return out;
    }

    // Content tokens (reserved ids stripped) of a decoded sequence.
    static std::vector<int> content_ids(const std::vector<int>& ids) {
        std::vector<int> out;
        for (int id : ids) {
            if (id == kEosId) break;
            if (id >= kNumReserved) out.push_back(id);
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Architecture hash: covers the sections and choices that determine
// parameter names and shapes, so checkpoints survive changes to training
// and decoding settings but never silent shape coercion.

inline std::uint64_t config_model_hash(const PipelineConfig& cfg) {
    std::string desc = "task=" + cfg.task + "\n";
    for (const std::string stage : {"encoder", "interaction", "decoder"}) {
        desc += stage + "=" + cfg.stage(stage) + "\n";
    }
    for (const std::string sec : {"decoder", "encoder", "interaction", "model", "vqa"}) {
        auto it = cfg.sections.find(sec);
        if (it == cfg.sections.end()) continue;
        desc += "[" + sec + "]\n";
        for (const auto& [key, value] : it->second) {
            desc += key + "=" + detail::render_scalar(value) + "\n";
        }
    }
    // From [data], only the keys that shape parameters (vocabulary and
    // feature width); split sizes and seeds may differ across phases.
    desc += "[data]\n";
    for (const std::string key : {"source", "noise_dims", "vocab", "visual_dim"}) {
        if (const ConfigValue* v = cfg.find("data", key)) {
            desc += key + "=" + detail::render_scalar(*v) + "\n";
        }
    }
    return fnv1a64(desc);
}

// ---------------------------------------------------------------------------
// build_pipeline

template <typename T>
std::shared_ptr<T> module_cast(std::shared_ptr<Module> m, const std::string& what) {
    auto t = std::dynamic_pointer_cast<T>(m);
    if (!t) throw RegistryError("module registered for " + what + " has the wrong type");
    return t;
}

namespace detail {

inline bool task_has_sentence_stream(const std::string& task) {
    return task == "vlp" || task == "vqa" || task == "vcr" || task == "retrieval";
}

inline bool task_has_decoder(const std::string& task) {
    return task == "captioning" || task == "vlp";
}

inline void validate_stage_combo(const PipelineConfig& cfg) {
    const std::string task = cfg.task;
    const std::string inter = cfg.stage("interaction");
    const std::string dec = cfg.stage("decoder");
    const bool recurrent = dec == "lstm" || dec == "gru";

    if (task == "captioning") {
        if (inter == "co_attention") {
            throw ConfigError("co_attention needs a two-stream task; captioning has a single stream");
        }
        if (inter == "top_down" && !recurrent) {
            throw ConfigError("top_down interaction requires a recurrent decoder (lstm or gru), got '" +
                              dec + "'");
        }
    }
    if (task == "vlp") {
        if (inter != "co_attention") {
            throw ConfigError("vlp task requires interaction = co_attention, got '" + inter + "'");
        }
        if (recurrent) {
            throw ConfigError("vlp task requires a transformer or conv decoder, got '" + dec + "'");
        }
    }
    if (task == "vqa" || task == "vcr") {
        if (inter != "attention" && inter != "x_linear" && inter != "co_attention") {
            throw ConfigError(task + " task requires interaction in {attention, x_linear, co_attention}, got '" +
                              inter + "'");
        }
    }
}

}  // namespace detail

inline std::shared_ptr<Pipeline> build_pipeline(const PipelineConfig& cfg, const ModuleRegistry& registry,
                                                std::uint64_t seed) {
    detail::validate_stage_combo(cfg);

    auto p = std::make_shared<Pipeline>(seed);
    p->cfg = cfg;
    p->task = cfg.task;
    p->model_hash = config_model_hash(cfg);

    const int enc_hidden = static_cast<int>(cfg.get_int("encoder", "hidden", 32));
    const int dec_hidden = static_cast<int>(cfg.get_int("decoder", "hidden", enc_hidden));
    if (enc_hidden != dec_hidden) {
        throw ConfigError("cross-stage dimension mismatch: [encoder] hidden=" + std::to_string(enc_hidden) +
                          " vs [decoder] hidden=" + std::to_string(dec_hidden) + " and no adapter exists");
    }
    const int embed_dim = static_cast<int>(cfg.get_int("model", "embed", enc_hidden));
    if (embed_dim != enc_hidden) {
        throw ConfigError("cross-stage dimension mismatch: [model] embed=" + std::to_string(embed_dim) +
                          " vs [encoder] hidden=" + std::to_string(enc_hidden));
    }
    p->d = enc_hidden;
    const int max_positions = static_cast<int>(cfg.get_int("model", "max_positions", 64));

    BuildContext ctx{cfg,       p->params, p->run, "", p->d, embed_dim, 0, 0,
                     max_positions, nullptr,  nullptr};

    ctx.prefix = "preprocess";
    p->pre = module_cast<Preprocessor>(registry.lookup("preprocess", cfg.stage("preprocess"))(ctx),
                                       "stage preprocess");
    ctx.vocab_size = p->pre->vocab.size();
    ctx.feature_dim = p->pre->feature_dim;

    p->tok_embed = std::make_shared<TokenEmbedder>(p->params, ctx.vocab_size, p->d, max_positions);
    p->vis_embed = std::make_shared<VisualEmbedder>(p->params, ctx.feature_dim, p->d, max_positions,
                                                    cfg.get_bool("model", "visual_norm", true),
                                                    cfg.get_bool("model", "visual_positions", true));
    ctx.tok_embed = p->tok_embed;

    ctx.prefix = "interaction";
    p->interaction = module_cast<InteractionModule>(
        registry.lookup("interaction", cfg.stage("interaction"))(ctx), "stage interaction");
    ctx.interaction = p->interaction;

    ctx.prefix = "encoder";
    p->encoder = module_cast<Encoder>(registry.lookup("encoder", cfg.stage("encoder"))(ctx), "stage encoder");
    if (detail::task_has_sentence_stream(p->task)) {
        ctx.prefix = "sent_encoder";
        p->sent_encoder =
            module_cast<Encoder>(registry.lookup("encoder", cfg.stage("encoder"))(ctx), "stage encoder");
    }

    if (detail::task_has_decoder(p->task)) {
        ctx.prefix = "decoder";
        p->decoder =
            module_cast<DecoderCore>(registry.lookup("decoder", cfg.stage("decoder"))(ctx), "stage decoder");
        if (cfg.get_bool("decoder", "tie_weights", false)) {
            p->head = std::make_shared<LogitsHead>(p->params, p->tok_embed->table);
        } else {
            p->head = std::make_shared<LogitsHead>(p->params, p->d, ctx.vocab_size);
        }
    }

    ctx.prefix = "decode";
    p->decode_cfg =
        module_cast<DecodeConfig>(registry.lookup("decode", cfg.stage("decode"))(ctx), "stage decode");

    ctx.prefix = "training";
    p->strategy = module_cast<TrainingStrategy>(registry.lookup("training", cfg.stage("training"))(ctx),
                                                "stage training");

    if (cfg.stage("pretraining") == "vlp") {
        ctx.prefix = "pretraining";
        p->vlp = module_cast<VlpConfig>(registry.lookup("pretraining", "vlp")(ctx), "stage pretraining");
    }

    if (p->task == "vqa") {
        const int n_answers = static_cast<int>(cfg.get_int("vqa", "n_answers", 3));
        if (n_answers < 2) throw ConfigError("[vqa] n_answers must be >= 2");
        p->vqa_head = std::make_shared<Affine>(p->params, "vqa.head", 2 * p->d, n_answers);
    }
    if (p->task == "vcr") {
        p->vcr_head = std::make_shared<Affine>(p->params, "vcr.head", 2 * p->d, 1);
    }
    p->retrieval_temperature = cfg.get_real("retrieval", "temperature", 1.0);
    return p;
}

}  // namespace xmodal
