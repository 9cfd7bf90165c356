// SPDX-License-Identifier: Apache-2.0
//
// Built-in module registrations and dataset resolution. default_registry()
// is populated once and read-only afterwards.

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "xmodal/pipeline.hpp"
#include "xmodal/training.hpp"

namespace xmodal {

// Closed-world vocabulary for shape-world: all template captions plus the
// question words, so every task shares one vocabulary.
inline Vocabulary shape_world_vocabulary() {
    std::vector<std::string> corpus;
    for (const std::string& c1 : shape_world_colors())
        for (const std::string& s1 : shape_world_shapes())
            for (const std::string& c2 : shape_world_colors())
                for (const std::string& s2 : shape_world_shapes())
                    corpus.push_back("a " + c1 + " " + s1 + " and a " + c2 + " " + s2);
    for (const std::string& s : shape_world_shapes()) corpus.push_back("what color is the " + s);
    return build_vocabulary(corpus, 1);
}

inline void register_builtin_modules(ModuleRegistry& r) {
    // ---- preprocess ----
    r.register_module("preprocess", "default", [](BuildContext& ctx) -> std::shared_ptr<Module> {
        auto pre = std::make_shared<Preprocessor>();
        pre->max_len = static_cast<int>(ctx.cfg.get_int("data", "max_len", 16));
        const std::string source = ctx.cfg.get_str("data", "source", "synthetic");
        if (source == "synthetic") {
            const int noise = static_cast<int>(ctx.cfg.get_int("data", "noise_dims", 2));
            pre->feature_dim = 6 + noise;
            pre->vocab = shape_world_vocabulary();
        } else if (source == "files") {
            const std::string vocab_path = ctx.cfg.get_str("data", "vocab", "");
            if (vocab_path.empty()) throw ConfigError("[data] vocab path required when source = files");
            pre->vocab = load_vocabulary(vocab_path);
            pre->feature_dim = static_cast<int>(ctx.cfg.get_int("data", "visual_dim", 0));
            if (pre->feature_dim <= 0) throw ConfigError("[data] visual_dim required when source = files");
        } else {
            throw ConfigError("[data] source must be synthetic or files, got '" + source + "'");
        }
        return pre;
    });

    // ---- encoders ----
    r.register_module("encoder", "lstm", [](BuildContext& ctx) -> std::shared_ptr<Module> {
        return std::make_shared<LstmEncoder>(ctx.params, ctx.prefix, ctx.d_emb, ctx.d);
    });
    r.register_module("encoder", "gcn", [](BuildContext& ctx) -> std::shared_ptr<Module> {
        const int layers = static_cast<int>(ctx.cfg.get_int("encoder", "layers", 1));
        const int relations = static_cast<int>(ctx.cfg.get_int("encoder", "relations", 4));
        return std::make_shared<GcnEncoder>(ctx.params, ctx.prefix, ctx.d_emb, ctx.d, layers, relations);
    });
    r.register_module("encoder", "conv", [](BuildContext& ctx) -> std::shared_ptr<Module> {
        const int layers = static_cast<int>(ctx.cfg.get_int("encoder", "layers", 1));
        const int kernel = static_cast<int>(ctx.cfg.get_int("encoder", "kernel", 3));
        return std::make_shared<ConvEncoder>(ctx.params, ctx.prefix, ctx.d, layers, kernel);
    });
    r.register_module("encoder", "self_attention", [](BuildContext& ctx) -> std::shared_ptr<Module> {
        const int layers = static_cast<int>(ctx.cfg.get_int("encoder", "layers", 1));
        const int heads = static_cast<int>(ctx.cfg.get_int("encoder", "heads", 4));
        const double drop = ctx.cfg.get_real("encoder", "dropout", 0.0);
        return std::make_shared<SelfAttentionEncoder>(ctx.params, ctx.prefix, ctx.d, layers, heads, drop, ctx.run);
    });

    // ---- interaction ----
    r.register_module("interaction", "attention", [](BuildContext& ctx) -> std::shared_ptr<Module> {
        auto m = std::make_shared<InteractionModule>();
        m->kind = InteractionKind::Additive;
        m->step = std::make_shared<AdditiveAttention>(ctx.params, "interaction.att", ctx.d, ctx.d, ctx.d);
        return m;
    });
    r.register_module("interaction", "x_linear", [](BuildContext& ctx) -> std::shared_ptr<Module> {
        auto m = std::make_shared<InteractionModule>();
        m->kind = InteractionKind::XLinear;
        m->step = std::make_shared<XLinearAttention>(ctx.params, "interaction.xlinear", ctx.d);
        return m;
    });
    r.register_module("interaction", "top_down", [](BuildContext& ctx) -> std::shared_ptr<Module> {
        auto m = std::make_shared<InteractionModule>();
        m->kind = InteractionKind::TopDown;
        m->top_down = std::make_shared<TopDownAttention>(ctx.params, "interaction.top_down", ctx.d, ctx.d_emb);
        return m;
    });
    r.register_module("interaction", "co_attention", [](BuildContext& ctx) -> std::shared_ptr<Module> {
        auto m = std::make_shared<InteractionModule>();
        m->kind = InteractionKind::CoAttention;
        const int heads = static_cast<int>(ctx.cfg.get_int("interaction", "heads", 4));
        const bool tied = ctx.cfg.get_bool("interaction", "tied", false);
        m->co = std::make_shared<CoAttentionBlock>(ctx.params, "interaction.co", ctx.d, heads, tied);
        return m;
    });
    r.register_module("interaction", "meshed_memory", [](BuildContext& ctx) -> std::shared_ptr<Module> {
        auto m = std::make_shared<InteractionModule>();
        m->kind = InteractionKind::MeshedMemory;
        const int heads = static_cast<int>(ctx.cfg.get_int("interaction", "heads", 4));
        const int slots = static_cast<int>(ctx.cfg.get_int("interaction", "memory_slots", 4));
        m->meshed = std::make_shared<MeshedMemoryAttention>(ctx.params, "interaction.meshed", ctx.d, heads, slots);
        m->meshed_norm = Norm(ctx.params, "interaction.meshed.norm", ctx.d);
        return m;
    });

    // ---- decoders ----
    auto recurrent_factory = [](RecurrentKind kind) {
        return [kind](BuildContext& ctx) -> std::shared_ptr<Module> {
            const int layers = static_cast<int>(ctx.cfg.get_int("decoder", "layers", 1));
            return std::make_shared<RecurrentDecoder>(ctx.params, ctx.prefix, kind, ctx.d_emb, ctx.d, layers,
                                                      ctx.interaction);
        };
    };
    r.register_module("decoder", "lstm", recurrent_factory(RecurrentKind::Lstm));
    r.register_module("decoder", "gru", recurrent_factory(RecurrentKind::Gru));
    r.register_module("decoder", "conv", [](BuildContext& ctx) -> std::shared_ptr<Module> {
        const int layers = static_cast<int>(ctx.cfg.get_int("decoder", "layers", 1));
        const int kernel = static_cast<int>(ctx.cfg.get_int("decoder", "kernel", 3));
        return std::make_shared<ConvDecoder>(ctx.params, ctx.prefix, ctx.d, layers, kernel);
    });
    r.register_module("decoder", "transformer", [](BuildContext& ctx) -> std::shared_ptr<Module> {
        const int layers = static_cast<int>(ctx.cfg.get_int("decoder", "layers", 1));
        const int heads = static_cast<int>(ctx.cfg.get_int("decoder", "heads", 4));
        return std::make_shared<TransformerDecoder>(ctx.params, ctx.prefix, ctx.d, layers, heads,
                                                    ctx.interaction);
    });

    // ---- decode strategies ----
    auto decode_factory = [](const std::string& name) {
        return [name](BuildContext& ctx) -> std::shared_ptr<Module> {
            auto d = std::make_shared<DecodeConfig>();
            d->name = name;
            d->beam = static_cast<int>(ctx.cfg.get_int("decode", "beam", 3));
            d->max_len = static_cast<int>(ctx.cfg.get_int("decode", "max_len", 16));
            d->alpha = ctx.cfg.get_real("decode", "alpha", 0.0);
            if (d->beam < 1) throw ConfigError("[decode] beam must be >= 1");
            if (d->max_len < 1) throw ConfigError("[decode] max_len must be >= 1");
            if (d->alpha < 0) throw ConfigError("[decode] alpha must be >= 0");
            return d;
        };
    };
    r.register_module("decode", "greedy", decode_factory("greedy"));
    r.register_module("decode", "beam", decode_factory("beam"));

    // ---- training strategies ----
    r.register_module("training", "ce", [](BuildContext&) -> std::shared_ptr<Module> {
        return std::make_shared<CeStrategy>();
    });
    r.register_module("training", "label_smoothing", [](BuildContext& ctx) -> std::shared_ptr<Module> {
        return std::make_shared<LabelSmoothingStrategy>(ctx.cfg.get_real("training", "epsilon", 0.1));
    });
    r.register_module("training", "scheduled_sampling", [](BuildContext& ctx) -> std::shared_ptr<Module> {
        return std::make_shared<ScheduledSamplingStrategy>(ctx.cfg.get_real("training", "ss_k", 0.05),
                                                           ctx.cfg.get_real("training", "ss_pmin", 0.25));
    });
    r.register_module("training", "scst", [](BuildContext& ctx) -> std::shared_ptr<Module> {
        return std::make_shared<ScstStrategy>(ctx.cfg.get_str("training", "reward", "cider"),
                                              static_cast<int>(ctx.cfg.get_int("decode", "max_len", 16)));
    });

    // ---- pre-training heads ----
    r.register_module("pretraining", "none", [](BuildContext&) -> std::shared_ptr<Module> {
        return std::make_shared<VlpConfig>();
    });
    r.register_module("pretraining", "vlp", [](BuildContext& ctx) -> std::shared_ptr<Module> {
        auto v = std::make_shared<VlpConfig>();
        v->w_mlm = ctx.cfg.get_real("vlp", "w_mlm", 1.0);
        v->w_msg = ctx.cfg.get_real("vlp", "w_msg", 1.0);
        v->w_vsm = ctx.cfg.get_real("vlp", "w_vsm", 1.0);
        v->mask_rate = ctx.cfg.get_real("vlp", "mask_rate", 0.3);
        v->span_rate = ctx.cfg.get_real("vlp", "span_rate", 0.3);
        if (v->w_mlm < 0 || v->w_msg < 0 || v->w_vsm < 0) throw ConfigError("[vlp] weights must be >= 0");
        return v;
    });
}

inline const ModuleRegistry& default_registry() {
    static const ModuleRegistry registry = [] {
        ModuleRegistry r;
        register_builtin_modules(r);
        return r;
    }();
    return registry;
}

// ---------------------------------------------------------------------------
// Dataset resolution per config.

inline std::vector<TrainItem> caption_items(const Pipeline& p, const std::vector<CaptionExample>& examples) {
    std::vector<TrainItem> items;
    items.reserve(examples.size());
    int i = 0;
    for (const CaptionExample& ex : examples) {
        TrainItem item;
        item.visual = ex.visual;
        item.tokens = p.pre->encode_sentence(ex.caption);
        item.id = std::to_string(i++);
        items.push_back(std::move(item));
    }
    return items;
}

inline std::vector<TrainItem> vqa_items(const Pipeline& p, const std::vector<VqaExample>& examples) {
    std::vector<TrainItem> items;
    items.reserve(examples.size());
    int i = 0;
    for (const VqaExample& ex : examples) {
        TrainItem item;
        item.visual = ex.visual;
        item.tokens = p.pre->encode_sentence(ex.question);
        item.answer = ex.answer;
        item.id = std::to_string(i++);
        items.push_back(std::move(item));
    }
    return items;
}

// Training split per the [data] section. `offset` keys pick disjoint splits
// from the same generator family.
inline std::vector<TrainItem> resolve_dataset(const Pipeline& p) {
    const PipelineConfig& cfg = p.cfg;
    const std::string source = cfg.get_str("data", "source", "synthetic");
    if (source == "synthetic") {
        const std::uint64_t data_seed = static_cast<std::uint64_t>(cfg.get_int("data", "seed", 7));
        const int n = static_cast<int>(cfg.get_int("data", "n", 32));
        const int regions = static_cast<int>(cfg.get_int("data", "regions", 3));
        const int noise = static_cast<int>(cfg.get_int("data", "noise_dims", 2));
        const double sigma = cfg.get_real("data", "sigma", 0.1);
        if (p.task == "vqa") {
            return vqa_items(p, make_synthetic_vqa(data_seed, n, std::min(regions, 3), noise, sigma));
        }
        if (p.task == "retrieval") {
            return caption_items(p, make_synthetic_dataset_distinct(data_seed, n, regions, noise, sigma));
        }
        return caption_items(p, make_synthetic_dataset(data_seed, n, regions, noise, sigma));
    }
    if (source == "files") {
        const std::string captions_path = cfg.get_str("data", "captions", "");
        const std::string features_dir = cfg.get_str("data", "features", "");
        if (captions_path.empty() || features_dir.empty()) {
            throw ConfigError("[data] captions and features paths required when source = files");
        }
        std::vector<TrainItem> items;
        for (const CaptionRecord& rec : load_captions(captions_path)) {
            TrainItem item;
            item.visual = load_visual_features(features_dir + "/" + rec.id + ".xtns");
            item.tokens = p.pre->encode_sentence(rec.caption);
            item.id = rec.id;
            items.push_back(std::move(item));
        }
        if (items.empty()) throw FormatError("caption file " + captions_path + " holds no examples");
        return items;
    }
    throw ConfigError("[data] source must be synthetic or files, got '" + source + "'");
}

}  // namespace xmodal
