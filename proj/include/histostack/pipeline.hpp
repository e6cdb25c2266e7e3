#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "histostack/affine_registration.hpp"
#include "histostack/deformable_registration.hpp"
#include "histostack/phantom.hpp"
#include "histostack/preprocess.hpp"
#include "histostack/stack_recon.hpp"

namespace histostack {

enum ExitCode : int { exit_ok = 0, exit_error = 1, exit_warnings = 2 };

// Template the phantom command writes next to the stacks: the truth volume
// seen through a similarity plus an optional sinusoidal warp.
struct TemplateSynthesis {
    double scale = 1.0;
    double rotation_deg = 0.0;  // about z, through the volume centre
    double warp_amplitude_voxels = 0.0;
    double warp_period_voxels = 32.0;
};

// Template = truth volume seen through a similarity about the volume centre,
// followed by a sinusoidal field. Maps template points to truth points.
TransformChain template_truth_chain(const Geometry<3>& grid, const TemplateSynthesis& t);

struct DicePairConfig {
    std::string name;  // report row label, e.g. "model vs gt*"
    std::filesystem::path predicted;  // mask manifests
    std::filesystem::path truth;
};

struct PipelineConfig {
    std::uint64_t seed = 1;
    int threads = 0;  // 0: HISTOSTACK_THREADS or hardware concurrency
    std::filesystem::path output_dir = "histostack_out";

    // Inputs. Empty entries fall back to the files the previous subcommand wrote.
    std::filesystem::path blockface_manifest;
    std::filesystem::path backlit_manifest;
    std::vector<std::filesystem::path> ish_manifests;
    std::filesystem::path template_volume;
    std::filesystem::path template_landmarks;
    std::filesystem::path reconstruction_dir;
    std::filesystem::path mask_manifest;
    std::string mask_gene;

    bool preprocess = false;
    PreprocessConfig preprocess_config;

    int bins = 64;
    ReconParams recon;
    AffineRegParams template_affine = default_template_affine();
    DeformableRegParams template_deformable;

    PhantomSpec phantom;
    TemplateSynthesis phantom_template;

    std::vector<DicePairConfig> dice;
    std::filesystem::path manual_landmarks;
    std::filesystem::path auto_landmarks;

    static AffineRegParams default_template_affine();
};

// Unknown keys are errors. Relative paths resolve against base_dir.
PipelineConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);

// Every field, with threads resolved; reloading it reproduces the run.
std::string config_to_json(const PipelineConfig& config);

// Fills defaults derived from output_dir and resolves the thread count.
PipelineConfig resolve(PipelineConfig config);

enum class Command { reconstruct, map_template, evaluate, phantom, segment_import };
Command parse_command(const std::string& name);
std::string to_string(Command command);

// Throws std::runtime_error naming the first missing input of the command.
void validate_inputs(const PipelineConfig& config, Command command);

struct RunOptions {
    bool dry_run = false;
};

// Runs one subcommand on a resolved config. Messages go to `log`; the return
// value is an ExitCode. Hard errors are reported and mapped to exit_error.
int run_command(Command command, const PipelineConfig& config, const RunOptions& options, std::ostream& log);

// Output layout below output_dir: phantom/, reconstruction/, template_space/,
// reports/ and one <command>.resolved_config.json per run.
std::filesystem::path resolved_config_path(const PipelineConfig& config, Command command);
std::filesystem::path section_chain_path(const std::filesystem::path& dir, int index);

}  // namespace histostack
