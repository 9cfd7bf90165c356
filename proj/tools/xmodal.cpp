// SPDX-License-Identifier: Apache-2.0
//
// xmodal command-line tool: preprocess, train, eval, infer.

#include <CLI11.hpp>

#include "xmodal/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"config-driven cross-modal encoder-decoder toolkit"};
    app.require_subcommand(1);

    xmodal::PreprocessArgs pre;
    CLI::App* cmd_pre = app.add_subcommand("preprocess", "build vocabulary and tokenized captions");
    cmd_pre->add_option("--corpus", pre.corpus, "caption file (id<TAB>caption lines)")->required();
    cmd_pre->add_option("--out", pre.out_dir, "output directory")->required();
    cmd_pre->add_option("--min-freq", pre.min_freq, "minimum token frequency");

    xmodal::TrainArgs train;
    CLI::App* cmd_train = app.add_subcommand("train", "train a pipeline from a config");
    cmd_train->add_option("--config", train.config, "pipeline config file")->required();
    cmd_train->add_option("--out", train.out_dir, "output directory")->required();
    cmd_train->add_option("--seed", train.seed, "global seed");
    cmd_train->add_option("--init-ckpt", train.init_ckpt, "checkpoint to warm-start from");

    xmodal::EvalArgs eval;
    CLI::App* cmd_eval = app.add_subcommand("eval", "decode an eval split and print metrics");
    cmd_eval->add_option("--config", eval.config, "pipeline config file")->required();
    cmd_eval->add_option("--ckpt", eval.ckpt, "checkpoint to evaluate");
    cmd_eval->add_option("--data", eval.data_dir, "eval data dir (captions.tsv + features/)");
    cmd_eval->add_option("--captions", eval.captions_file, "score this caption file instead of decoding");

    xmodal::InferArgs infer;
    CLI::App* cmd_infer = app.add_subcommand("infer", "caption feature files");
    cmd_infer->add_option("--config", infer.config, "pipeline config file")->required();
    cmd_infer->add_option("--ckpt", infer.ckpt, "checkpoint to load")->required();
    cmd_infer->add_option("--input", infer.inputs, "XTNS features file (repeatable)")->required();
    cmd_infer->add_option("--beam", infer.beam, "beam width override (1 = greedy)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? xmodal::kExitOk : xmodal::kExitUsage;
    }

    if (cmd_pre->parsed()) return xmodal::cmd_preprocess(pre);
    if (cmd_train->parsed()) return xmodal::cmd_train(train);
    if (cmd_eval->parsed()) return xmodal::cmd_eval(eval);
    if (cmd_infer->parsed()) return xmodal::cmd_infer(infer);
    return xmodal::kExitUsage;
}
