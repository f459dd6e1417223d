#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "sprobe/errors.hpp"
#include "sprobe/experiment.hpp"
#include "sprobe/runtime.hpp"

namespace {

struct CommonArgs {
    std::string config;
    std::string out;
    std::size_t threads = 1;
    std::uint64_t seed_offset = 0;
    bool force = false;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config, "experiment config (JSON)")->required();
    cmd->add_option("--out", args.out, "output directory (overrides output_dir)");
    cmd->add_option("--threads", args.threads, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--seed-offset", args.seed_offset, "added to every split and model seed");
    cmd->add_flag("--force", args.force, "recompute stages whose outputs are up to date");
    cmd->add_flag("--quiet", args.quiet, "suppress progress output");
}

int run(const std::string& command, const CommonArgs& args) {
    sprobe::ExperimentConfig cfg = sprobe::load_config(args.config);
    cfg.apply_seed_offset(args.seed_offset);
    if (!args.out.empty()) cfg.output_dir = args.out;

    sprobe::RunOptions opts;
    opts.threads = args.threads;
    opts.force = args.force;
    if (!args.quiet) opts.log = [](const std::string& msg) { std::cerr << msg << std::endl; };

    sprobe::Pipeline pipeline(std::move(cfg), opts);
    if (command == "gen") {
        pipeline.gen();
    } else if (command == "train") {
        pipeline.train();
    } else if (command == "attribute") {
        pipeline.attribute();
    } else if (command == "analyze") {
        pipeline.analyze();
    } else if (command == "report") {
        pipeline.report();
    } else {
        const sprobe::RunRecord rec = pipeline.run_all();
        std::cout << rec.run_id << ' ' << pipeline.out().string() << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    sprobe::tune_allocator();

    CLI::App app{"salience-probe: shortcut-learning and attribution experiments"};
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", sprobe::tool_version());

    CommonArgs args;
    const std::pair<const char*, const char*> commands[] = {
        {"gen", "generate corpora, splits and manifests"},
        {"train", "train one model per setting x split x model seed"},
        {"attribute", "compute attribution maps and metrics.csv"},
        {"analyze", "R^2, summaries, histograms and AUROC transfer"},
        {"report", "render report.md"},
        {"run-all", "gen, train, attribute, analyze and report"},
    };
    for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help), args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return run(command, args);
    } catch (const sprobe::Error& e) {
        std::cerr << "salience-probe " << command << ": " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "salience-probe " << command << ": " << e.what() << '\n';
        return 1;
    }
}
