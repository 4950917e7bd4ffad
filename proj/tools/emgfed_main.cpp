// Experiment runner: synth -> open-loop -> closed-loop -> attack -> analyze,
// each stage deterministic and idempotent for a given (config, seed).
#include <CLI11.hpp>
#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "emgfed/errors.hpp"
#include "emgfed/experiment.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int workers = 0;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "flat key = value config file");
    cmd->add_option("--out", flags.out_dir, "output directory (overrides config)");
    cmd->add_option("--seed", flags.seed, "root seed (overrides config)")
        ->each([&flags](const std::string&) { flags.seed_set = true; });
    cmd->add_option("--workers", flags.workers, "worker threads (overrides config)");
}

emgfed::ExperimentConfig resolve(const CommonFlags& flags) {
    emgfed::ExperimentConfig cfg;
    if (!flags.config_path.empty()) cfg = emgfed::load_config(flags.config_path);
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (flags.seed_set) cfg.seed = flags.seed;
    if (flags.workers > 0) cfg.workers = flags.workers;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"emgfed: federated EMG decoder adaptation simulation"};
    app.require_subcommand(1);
    app.footer("Config keys:\n" + emgfed::config_keys_help());

    CommonFlags flags;
    struct Stage {
        const char* name;
        const char* desc;
        void (*run)(const emgfed::ExperimentConfig&);
    };
    const Stage stages[] = {
        {"synth", "synthesize subject sessions", emgfed::cmd_synth},
        {"open-loop", "run Local/FedAvg/Per-FedAvg over the session cohort", emgfed::cmd_open_loop},
        {"closed-loop", "run simulated-user trials (Local/SeqPerFedAvg/Static)",
         emgfed::cmd_closed_loop},
        {"attack", "decoder-weight linkage attack (LOOCV subject identification)",
         emgfed::cmd_attack},
        {"analyze", "convergence and PCA CSVs from recorded decoder snapshots",
         emgfed::cmd_analyze},
        {"all", "full pipeline: synth, open-loop, closed-loop, attack, analyze", emgfed::cmd_all},
    };
    for (const auto& stage : stages) {
        CLI::App* cmd = app.add_subcommand(stage.name, stage.desc);
        add_common(cmd, flags);
        cmd->callback([&flags, &stage] { stage.run(resolve(flags)); });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const emgfed::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
