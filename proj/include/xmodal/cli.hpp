// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the xmodal binary. Exit codes: 0 success,
// 1 usage, 2 config/input problem, 3 numeric failure.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "xmodal/builtins.hpp"
#include "xmodal/parallel.hpp"

namespace xmodal {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumeric = 3;

namespace detail {

inline int classify_exception(const std::exception& e, std::ostream& err) {
    err << "error: " << e.what() << "\n";
    if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
    if (dynamic_cast<const UsageError*>(&e)) return kExitUsage;
    return kExitInput;
}

inline PipelineConfig load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config(text);
}

struct EvalExample {
    std::string id;
    VisualTokens visual;
    TokenList reference;
};

// Evaluation split: synthetic held-out examples per [data] eval keys, or the
// files layout under `dir` (captions.tsv + features/<id>.xtns).
inline std::vector<EvalExample> load_eval_split(const Pipeline& p, const std::string& dir) {
    std::vector<EvalExample> out;
    if (!dir.empty()) {
        std::vector<CaptionRecord> records = load_captions(dir + "/captions.tsv");
        for (const CaptionRecord& rec : records) {
            EvalExample ex;
            ex.id = rec.id;
            ex.visual = load_visual_features(dir + "/features/" + rec.id + ".xtns");
            ex.reference = Pipeline::content_ids(p.pre->encode_sentence(rec.caption).ids);
            out.push_back(std::move(ex));
        }
        if (out.empty()) throw FormatError("no evaluation examples under " + dir);
        return out;
    }
    const PipelineConfig& cfg = p.cfg;
    if (cfg.get_str("data", "source", "synthetic") != "synthetic") {
        throw ConfigError("--data dir is required when [data] source = files");
    }
    const std::uint64_t eval_seed =
        static_cast<std::uint64_t>(cfg.get_int("data", "eval_seed", cfg.get_int("data", "seed", 7) + 1));
    const int n = static_cast<int>(cfg.get_int("data", "eval_n", 64));
    const int regions = static_cast<int>(cfg.get_int("data", "regions", 3));
    const int noise = static_cast<int>(cfg.get_int("data", "noise_dims", 2));
    const double sigma = cfg.get_real("data", "sigma", 0.1);
    int i = 0;
    for (CaptionExample& ex : make_synthetic_dataset(eval_seed, n, regions, noise, sigma)) {
        EvalExample e;
        e.id = std::to_string(i++);
        e.visual = std::move(ex.visual);
        e.reference = Pipeline::content_ids(p.pre->encode_sentence(ex.caption).ids);
        out.push_back(std::move(e));
    }
    return out;
}

struct MetricReport {
    double bleu = 0.0, rouge = 0.0, cider = 0.0;
};

inline MetricReport score_candidates(const std::vector<TokenList>& candidates,
                                     const std::vector<TokenList>& references) {
    std::vector<std::vector<TokenList>> per_image;
    per_image.reserve(references.size());
    for (const TokenList& r : references) per_image.push_back({r});
    const CiderIdf idf = build_cider_idf(per_image);

    std::vector<double> b(candidates.size()), r(candidates.size()), c(candidates.size());
    parallel_for(candidates.size(), [&](std::size_t i) {
        const std::vector<TokenList> refs = {references[i]};
        b[i] = bleu4(candidates[i], refs);
        r[i] = rouge_l(candidates[i], refs);
        c[i] = cider_d(candidates[i], refs, idf);
    });
    MetricReport rep;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        rep.bleu += b[i];
        rep.rouge += r[i];
        rep.cider += c[i];
    }
    const double n = static_cast<double>(candidates.size());
    rep.bleu /= n;
    rep.rouge /= n;
    rep.cider /= n;
    return rep;
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct PreprocessArgs {
    std::string corpus;
    std::string out_dir;
    int min_freq = 1;
};

inline int cmd_preprocess(const PreprocessArgs& args, std::ostream& out = std::cout,
                          std::ostream& err = std::cerr) {
    try {
        if (args.corpus.empty() || args.out_dir.empty()) throw UsageError("--corpus and --out are required");
        if (args.min_freq < 1) throw UsageError("--min-freq must be >= 1");
        std::vector<CaptionRecord> records = load_captions(args.corpus);
        if (records.empty()) throw FormatError("corpus " + args.corpus + " holds no captions");
        std::vector<std::string> sentences;
        sentences.reserve(records.size());
        for (const CaptionRecord& r : records) sentences.push_back(r.caption);
        Vocabulary vocab = build_vocabulary(sentences, args.min_freq);

        std::filesystem::create_directories(args.out_dir);
        save_vocabulary(args.out_dir + "/vocab.txt", vocab);

        std::ofstream tok(args.out_dir + "/captions.tok.tsv", std::ios::binary);
        if (!tok) throw FormatError("cannot write tokenized captions in " + args.out_dir);
        for (const CaptionRecord& r : records) {
            TokenSequence seq = tokenize(r.caption, vocab, 1 << 20);
            tok << r.id;
            for (std::size_t i = 0; i < seq.ids.size(); ++i) tok << (i ? " " : "\t") << seq.ids[i];
            tok << "\n";
        }
        out << "vocab size " << vocab.size() << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        return detail::classify_exception(e, err);
    }
}

struct TrainArgs {
    std::string config;
    std::string out_dir;
    long long seed = 1;
    std::string init_ckpt;  // optional warm start
};

inline int cmd_train(const TrainArgs& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    try {
        if (args.config.empty() || args.out_dir.empty()) throw UsageError("--config and --out are required");
        PipelineConfig cfg = detail::load_config_file(args.config);
        auto pipeline = build_pipeline(cfg, default_registry(), static_cast<std::uint64_t>(args.seed));
        if (!args.init_ckpt.empty()) load_checkpoint(*pipeline, args.init_ckpt);
        std::vector<TrainItem> dataset = resolve_dataset(*pipeline);
        TrainResult result = train_loop(*pipeline, dataset, args.out_dir);
        out << "trained " << result.records.size() << " steps; final loss "
            << (result.records.empty() ? 0.0 : result.records.back().loss) << "\n";
        out << "checkpoint " << result.checkpoint_path << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        return detail::classify_exception(e, err);
    }
}

struct EvalArgs {
    std::string config;
    std::string ckpt;
    std::string data_dir;      // optional; synthetic split when empty
    std::string captions_file; // optional: score these captions instead of decoding
};

inline int cmd_eval(const EvalArgs& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    try {
        if (args.config.empty()) throw UsageError("--config is required");
        PipelineConfig cfg = detail::load_config_file(args.config);
        auto pipeline = build_pipeline(cfg, default_registry(), 1);
        std::vector<detail::EvalExample> split = detail::load_eval_split(*pipeline, args.data_dir);

        std::vector<TokenList> candidates(split.size()), references(split.size());
        for (std::size_t i = 0; i < split.size(); ++i) references[i] = split[i].reference;

        if (!args.captions_file.empty()) {
            std::map<std::string, std::string> by_id;
            for (const CaptionRecord& r : load_captions(args.captions_file)) by_id[r.id] = r.caption;
            for (std::size_t i = 0; i < split.size(); ++i) {
                auto it = by_id.find(split[i].id);
                if (it == by_id.end()) throw FormatError("caption file is missing id " + split[i].id);
                candidates[i] = Pipeline::content_ids(pipeline->pre->encode_sentence(it->second).ids);
            }
        } else {
            if (args.ckpt.empty()) throw UsageError("--ckpt is required unless --captions is given");
            load_checkpoint(*pipeline, args.ckpt);
            for (std::size_t i = 0; i < split.size(); ++i) {
                candidates[i] = Pipeline::content_ids(pipeline->decode(split[i].visual).ids);
            }
        }

        detail::MetricReport rep = detail::score_candidates(candidates, references);
        char line[64];
        std::snprintf(line, sizeof(line), "BLEU4 %.4f", rep.bleu);
        out << line << "\n";
        std::snprintf(line, sizeof(line), "ROUGEL %.4f", rep.rouge);
        out << line << "\n";
        std::snprintf(line, sizeof(line), "CIDEr %.4f", rep.cider);
        out << line << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        return detail::classify_exception(e, err);
    }
}

struct InferArgs {
    std::string config;
    std::string ckpt;
    std::vector<std::string> inputs;  // features files
    int beam = 0;                     // 0 = use config
};

inline int cmd_infer(const InferArgs& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    try {
        if (args.config.empty() || args.ckpt.empty() || args.inputs.empty()) {
            throw UsageError("--config, --ckpt and at least one --input are required");
        }
        if (args.beam < 0) throw UsageError("--beam must be >= 1");
        PipelineConfig cfg = detail::load_config_file(args.config);
        auto pipeline = build_pipeline(cfg, default_registry(), 1);
        load_checkpoint(*pipeline, args.ckpt);
        for (const std::string& path : args.inputs) {
            VisualTokens visual = load_visual_features(path);
            TokenSequence seq = pipeline->decode(visual, args.beam);
            out << detokenize(seq.ids, pipeline->pre->vocab) << "\n";
        }
        return kExitOk;
    } catch (const std::exception& e) {
        return detail::classify_exception(e, err);
    }
}

}  // namespace xmodal
