// diffseg: pipeline driver. Subcommands cover the full run in order:
// synth -> pretrain -> dfgt -> train -> eval -> report. Every stage is
// deterministic given (--config, --seed); artifacts carry content hashes so
// a stage refuses inputs built under a different configuration.
//
// Exit codes: 0 success, 1 usage, 2 validation (bad config, missing or stale
// upstream artifact), 3 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include "diffseg/pipeline.hpp"

namespace {

std::vector<int> parse_blocks(const std::string& text) {
    std::string s;
    for (char c : text)
        if (c != '{' && c != '}' && c != ' ') s.push_back(c);
    std::vector<int> blocks;
    if (s.empty() || s == "none") return blocks;
    size_t start = 0;
    while (start <= s.size()) {
        size_t comma = s.find(',', start);
        std::string tok = s.substr(start, comma == std::string::npos ? comma : comma - start);
        if (!tok.empty() && (tok[0] == 'B' || tok[0] == 'b')) tok.erase(0, 1);
        try {
            size_t used = 0;
            int v = std::stoi(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            blocks.push_back(v);
        } catch (const std::exception&) {
            throw diffseg::validation_error("--blocks: cannot parse '" + text +
                                            "'; expected e.g. \"1,2,3\" or \"B1,B2,B3\"");
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return blocks;
}

struct cli_options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> method;
    std::optional<std::string> blocks;
    std::optional<std::string> out;
};

void add_common_flags(CLI::App* sub, cli_options& o) {
    sub->add_option("--config", o.config_path, "run configuration file (JSON)")
        ->required();
    sub->add_option("--seed", o.seed,
                    "override the global seed (pass the same value to every stage)");
    sub->add_option("--method", o.method, "override the DF-GT optimizer parameterization")
        ->check(CLI::IsMember({"raw", "transrob", "fourier", "expg"}));
    sub->add_option("--blocks", o.blocks,
                    "override the bridged decoder blocks, e.g. \"1,2,3\" or \"none\"");
    sub->add_option("--out", o.out, "override this stage's output directory");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"diagnosis-first multi-rater segmentation pipeline"};
    app.name("diffseg");
    app.require_subcommand(1);

    cli_options o;
    CLI::App* cmd_synth = app.add_subcommand("synth", "generate the synthetic dataset");
    CLI::App* cmd_pretrain =
        app.add_subcommand("pretrain", "train and freeze the diagnosis classifier");
    CLI::App* cmd_dfgt =
        app.add_subcommand("dfgt", "optimize expertness maps and fuse the rater labels");
    CLI::App* cmd_train = app.add_subcommand("train", "train the segmentation network");
    CLI::App* cmd_eval = app.add_subcommand("eval", "score predictions and fusion strategies");
    CLI::App* cmd_report = app.add_subcommand("report", "render plots and a run summary");
    for (CLI::App* sub :
         {cmd_synth, cmd_pretrain, cmd_dfgt, cmd_train, cmd_eval, cmd_report})
        add_common_flags(sub, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        diffseg::run_config cfg = diffseg::load_run_config(o.config_path);
        if (o.seed) {
            cfg.seed = *o.seed;
            cfg.reseed();
        }
        if (o.method) cfg.dfgt.method = diffseg::dfgt_method_from_string(*o.method);
        if (o.blocks) cfg.seg_connected = parse_blocks(*o.blocks);
        if (o.out) {
            if (cmd_synth->parsed()) cfg.dataset_dir = *o.out;
            if (cmd_pretrain->parsed() || cmd_train->parsed()) cfg.checkpoint_dir = *o.out;
            if (cmd_dfgt->parsed()) cfg.dfgt_dir = *o.out;
            if (cmd_eval->parsed() || cmd_report->parsed()) cfg.report_dir = *o.out;
        }

        if (cmd_synth->parsed()) {
            diffseg::synth_result r = diffseg::run_synth(cfg);
            std::printf("synth: wrote %s\n", cfg.dataset_dir.c_str());
            std::printf("  train %d samples (%d positive)\n", r.train_count, r.train_positives);
            std::printf("  val   %d samples (%d positive)\n", r.val_count, r.val_positives);
            std::printf("  test  %d samples (%d positive)\n", r.test_count, r.test_positives);
        } else if (cmd_pretrain->parsed()) {
            diffseg::train_history h = diffseg::run_pretrain(cfg);
            std::printf("pretrain: %zu epochs, final loss %.6f; checkpoint in %s\n",
                        h.records.size(), h.records.empty() ? 0.0 : h.records.back().mean_loss,
                        cfg.checkpoint_dir.c_str());
        } else if (cmd_dfgt->parsed()) {
            diffseg::dfgt_result r = diffseg::run_dfgt(cfg);
            std::printf("dfgt (%s): train descent %.3f (%zu failed)",
                        diffseg::to_string(cfg.dfgt.method).c_str(),
                        diffseg::descent_fraction(r.train), r.train.failed.size());
            if (cfg.eval.split != "train")
                std::printf(", %s descent %.3f (%zu failed)", cfg.eval.split.c_str(),
                            diffseg::descent_fraction(r.eval), r.eval.failed.size());
            std::printf("; labels in %s\n", cfg.dfgt_dir.c_str());
        } else if (cmd_train->parsed()) {
            diffseg::train_history h = diffseg::run_train(cfg);
            if (h.records.empty())
                std::printf("train: 0 epochs requested; checkpoint in %s\n",
                            cfg.checkpoint_dir.c_str());
            else
                std::printf("train: %zu epochs, loss %.6f -> %.6f; checkpoint in %s\n",
                            h.records.size(), h.records.front().mean_loss,
                            h.records.back().mean_loss, cfg.checkpoint_dir.c_str());
        } else if (cmd_eval->parsed()) {
            diffseg::run_eval(cfg);
            std::printf("eval: report written to %s\n",
                        diffseg::eval_report_path(cfg).string().c_str());
        } else if (cmd_report->parsed()) {
            diffseg::run_report(cfg);
            std::printf("report: summary and plots written to %s\n", cfg.report_dir.c_str());
        }
        return 0;
    } catch (const diffseg::validation_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const diffseg::format_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
