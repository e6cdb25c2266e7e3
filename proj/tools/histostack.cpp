// histostack: serial-section reconstruction, template mapping and evaluation.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "histostack/pipeline.hpp"

using namespace histostack;

int main(int argc, char** argv) {
    CLI::App app{"Serial-section histology reconstruction and registration"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string output_dir;
    bool dry_run = false;
    app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "random seed (overrides the config)");
    app.add_option("--threads", threads, "worker threads (overrides the config and HISTOSTACK_THREADS)")
        ->check(CLI::PositiveNumber);
    app.add_option("--output-dir", output_dir, "output directory (overrides the config)");
    app.add_flag("--dry-run", dry_run, "validate the configuration and exit without writing");

    const char* names[][2] = {
        {"reconstruct", "backlit reconstruction against blockface, then each ISH stack"},
        {"map-template", "3D affine + deformable mapping of the reconstruction to the template"},
        {"evaluate", "Dice and landmark agreement reports"},
        {"phantom", "write a synthetic phantom data set with ground truth"},
        {"segment-import", "bring 2D segmentation masks into template space"},
    };
    for (const auto& n : names) app.add_subcommand(n[0], n[1])->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? exit_ok : exit_error;
    }

    PipelineConfig config;
    try {
        if (!config_path.empty()) config = load_config(config_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_error;
    }
    if (seed) config.seed = *seed;
    if (threads) config.threads = *threads;
    if (!output_dir.empty()) config.output_dir = output_dir;
    config = resolve(std::move(config));

    const Command command = parse_command(app.get_subcommands().front()->get_name());
    return run_command(command, config, {dry_run}, std::cerr);
}
