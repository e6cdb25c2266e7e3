#include <doctest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>

#include "histostack/io.hpp"
#include "histostack/metrics.hpp"
#include "histostack/pipeline.hpp"
#include "histostack/warp.hpp"
#include "support.hpp"

#ifndef HISTOSTACK_CLI
#error "HISTOSTACK_CLI must name the command-line binary"
#endif

using namespace histostack;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
    int status = -1;
    std::string output;
};

CliResult cli(const fs::path& cwd, const std::string& args) {
    const fs::path log = cwd / "cli_output.txt";
    const std::string cmd = "cd '" + cwd.string() + "' && '" + std::string(HISTOSTACK_CLI) + "' " + args + " > '" +
                            log.string() + "' 2>&1";
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, testing::slurp(log)};
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

json read_json(const fs::path& p) { return json::parse(testing::slurp(p)); }

// Every regular file under dir, relative path -> bytes.
std::map<std::string, std::string> tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = testing::slurp(e.path());
    return out;
}

const json kPhantom = {{"seed", 7},
                       {"phantom",
                        {{"dims", {64, 64, 32}},
                         {"spacing_um", {20, 20, 50}},
                         {"template", {{"scale", 1.05}, {"rotation_deg", 3.0}, {"warp_amplitude_voxels", 1.0}}}}}};

// One phantom run through every subcommand, shared by the cases below.
struct EndToEnd {
    fs::path dir = testing::scratch_dir("pipeline_e2e");
    fs::path config = dir / "out" / "phantom" / "pipeline.json";
    CliResult phantom, reconstruct, map_template, segment_import;
    EndToEnd() {
        write_json(dir / "small.json", kPhantom);
        phantom = cli(dir, "--config small.json --output-dir out phantom");
        reconstruct = cli(dir, "--config out/phantom/pipeline.json --threads 2 reconstruct");
        map_template = cli(dir, "--config out/phantom/pipeline.json map-template");
        segment_import = cli(dir, "--config out/phantom/pipeline.json segment-import");
    }
};

const EndToEnd& e2e() {
    static const EndToEnd r;
    return r;
}

}  // namespace

TEST_CASE("config parsing") {
    SUBCASE("round trip through json") {
        PipelineConfig c;
        c.seed = 99;
        c.recon.sigma = 2.5;
        c.recon.schedule.phases[2].weights = {0.0, 1.0, 0.5};
        c.dice.push_back({"model vs gt*", "/a/pred.json", "/a/truth.json"});
        const std::string once = config_to_json(c);
        CHECK(config_to_json(parse_config(once)) == once);
        CHECK(parse_config(once).recon.schedule.phases[2].weights[2] == 0.5);
    }
    SUBCASE("unknown keys are errors") {
        CHECK_THROWS_WITH(parse_config(R"({"sede": 3})"), doctest::Contains("sede"));
        CHECK_THROWS_WITH(parse_config(R"({"reconstruction": {"affine": {"level": 3}}})"), doctest::Contains("level"));
        CHECK_THROWS(parse_config("{not json"));
    }
    SUBCASE("relative paths resolve against the config directory") {
        const auto c = parse_config(R"({"inputs": {"blockface_manifest": "bf/m.json"}})", "/data/run");
        CHECK(c.blockface_manifest == fs::path("/data/run/bf/m.json"));
    }
    SUBCASE("resolve fills defaults") {
        PipelineConfig c;
        c.output_dir = "/tmp/x";
        c.threads = 0;
        const auto r = resolve(c);
        CHECK(r.threads >= 1);
        CHECK(r.recon.threads == r.threads);
        CHECK(r.reconstruction_dir == fs::path("/tmp/x/reconstruction"));
        CHECK(r.template_affine.max_iterations == 1000);
    }
    SUBCASE("command names") {
        CHECK(parse_command("map-template") == Command::map_template);
        CHECK(to_string(Command::segment_import) == "segment-import");
        CHECK_THROWS(parse_command("train"));
    }
}

TEST_CASE("command line basics") {
    const auto dir = testing::scratch_dir("pipeline_cli");
    SUBCASE("a subcommand is required") {
        CHECK(cli(dir, "").status != 0);
        CHECK(cli(dir, "--help").status == 0);
    }
    SUBCASE("dry run validates and writes nothing") {
        write_json(dir / "small.json", kPhantom);
        const auto r = cli(dir, "--config small.json --output-dir dry --dry-run phantom");
        CHECK(r.status == 0);
        CHECK_FALSE(fs::exists(dir / "dry"));
    }
    SUBCASE("missing blockface manifest names the path") {
        write_json(dir / "bad.json", {{"inputs", {{"blockface_manifest", "nowhere/bf.json"}, {"backlit_manifest", "bl.json"}}}});
        const auto r = cli(dir, "--config bad.json --output-dir bad reconstruct");
        CHECK(r.status == 1);
        CHECK(r.output.find("nowhere/bf.json") != std::string::npos);
    }
    SUBCASE("missing reconstruction for map-template") {
        write_json(dir / "nomap.json", {{"inputs", {{"template_volume", "t.json"}}}});
        CHECK(cli(dir, "--config nomap.json --output-dir nomap map-template").status == 1);
    }
}

TEST_CASE("end-to-end phantom run") {
    const auto& r = e2e();
    const fs::path out = r.dir / "out";
    REQUIRE(r.phantom.status == 0);
    CHECK(r.reconstruct.status == 0);
    CHECK(r.map_template.status == 0);
    CHECK(r.segment_import.status == 0);

    SUBCASE("declared outputs exist") {
        for (const char* p : {"phantom.resolved_config.json", "reconstruct.resolved_config.json", "reconstruction/backlit.json",
                              "reconstruction/backlit.raw", "reconstruction/iteration_log.jsonl",
                              "reconstruction/backlit/section_0000.chain.json", "reconstruction/phantom/volume.json",
                              "reconstruction/phantom/iteration_log.jsonl", "reconstruction/summary.json",
                              "template_space/chain.json", "template_space/backlit.json", "template_space/phantom.json",
                              "template_space/mapping.json", "template_space/auto_landmarks.csv",
                              "template_space/phantom_masks.json", "reconstruction/phantom/masks.json"})
            CHECK_MESSAGE(fs::exists(out / p), p);
        const json resolved = read_json(out / "reconstruct.resolved_config.json");
        CHECK(resolved["seed"] == 7);
        CHECK(resolved["threads"] == 2);
    }
    SUBCASE("iteration log lines") {
        std::ifstream in(out / "reconstruction" / "iteration_log.jsonl");
        std::string line;
        int n = 0;
        while (std::getline(in, line)) {
            const json e = json::parse(line);
            CHECK(e.contains("objective_before"));
            CHECK(e["objective_after"].get<double>() <= e["objective_before"].get<double>());
            ++n;
        }
        CHECK(n == 7 * 32);
    }
    SUBCASE("template deformable stage improves NMI") {
        const json m = read_json(out / "template_space" / "mapping.json");
        CHECK(m["nmi_full"].get<double>() > m["nmi_affine"].get<double>());
        CHECK(m["min_jacobian"].get<double>() > 0.0);
    }
    SUBCASE("imported ground-truth masks agree with the truth in template space") {
        const Image3D truth = read_volume(out / "phantom" / "truth" / "expression.json");
        const Image3D templ = read_volume(out / "phantom" / "template" / "volume.json");
        Mask<3> truth_mask(truth.size());
        for (std::size_t i = 0; i < truth.count(); ++i) truth_mask.bits()[i] = truth.values()[i] > 0.5;
        const TransformChain chain = read_chain(out / "template_space" / "chain.json");
        const Mask<3> expect = warp_mask<3>(truth_mask, truth.geometry(), chain, templ.geometry());
        const Image3D got = read_volume(out / "template_space" / "phantom_masks.json");
        Mask<3> got_mask(got.size());
        for (std::size_t i = 0; i < got.count(); ++i) got_mask.bits()[i] = got.values()[i] > 0.5;
        const double d = dice<3>(got_mask, expect);
        MESSAGE("template-space Dice " << d);
        CHECK(expect.popcount() > 0);
        CHECK(d >= 0.9);
    }
    SUBCASE("evaluate: identical mask sets score 1 with SD 0") {
        json c = read_json(r.config);
        c["evaluate"] = {{"dice", {{{"name", "gt vs gt"}, {"predicted", "masks.json"}, {"truth", "masks.json"}}}}};
        write_json(out / "phantom" / "eval_same.json", c);
        const auto res = cli(r.dir, "--config out/phantom/eval_same.json evaluate");
        CHECK(res.status == 0);
        const json rows = read_json(out / "reports" / "dice_report.json");
        CHECK(rows[0]["mean"] == 1.0);
        CHECK(rows[0]["sd"] == 0.0);
        CHECK(testing::slurp(out / "reports" / "dice_report.txt") == "gt vs gt: mean 1.0000, SD 0.0000\n");
    }
    SUBCASE("evaluate: mismatched dimensions warn and exit 2") {
        const fs::path d = r.dir / "small_masks";
        fs::create_directories(d);
        StackManifest m = read_manifest(out / "phantom" / "masks.json");
        for (auto& e : m.sections) {
            e.path = "m" + std::to_string(e.index) + ".png";
            write_mask_png(d / e.path, Mask<2>({8, 8}));
        }
        write_manifest(d / "masks.json", m);
        json c = read_json(r.config);
        c["evaluate"] = {{"dice", {{{"name", "bad"}, {"predicted", (d / "masks.json").string()}, {"truth", "masks.json"}}}}};
        write_json(out / "phantom" / "eval_bad.json", c);
        const auto res = cli(r.dir, "--config out/phantom/eval_bad.json evaluate");
        CHECK(res.status == 2);
        CHECK(res.output.find("excluded") != std::string::npos);
    }
    SUBCASE("evaluate: landmark report") {
        const auto res = cli(r.dir, "--config out/phantom/pipeline.json evaluate");
        CHECK(res.status == 0);
        CHECK(read_json(out / "reports" / "landmark_report.json").size() == 14);
    }
}

TEST_CASE("segment-import") {
    const auto& r = e2e();
    const fs::path out = r.dir / "out";
    REQUIRE(r.segment_import.status == 0);
    const StackManifest gt = read_manifest(out / "phantom" / "masks.json");
    const Geometry<2> plane = read_image(gt.resolve(gt.sections[0]), gt.spacing_um).image.geometry();

    auto variant = [&](const std::string& name, auto make) {
        const fs::path d = r.dir / name;
        fs::create_directories(d);
        StackManifest m = gt;
        std::vector<ManifestEntry> kept;
        for (auto e : m.sections) {
            const auto mask = make(e.index);
            if (!mask) continue;
            e.path = "m" + std::to_string(e.index) + ".png";
            write_mask_png(d / e.path, *mask);
            kept.push_back(e);
        }
        m.sections = kept;
        write_manifest(d / "masks.json", m);
        json c = read_json(r.config);
        c["inputs"]["mask_manifest"] = (d / "masks.json").string();
        c["output_dir"] = (d / "out").string();
        c["inputs"]["reconstruction_dir"] = (out / "reconstruction").string();
        fs::create_directories(d / "out" / "template_space");
        fs::copy(out / "template_space", d / "out" / "template_space", fs::copy_options::recursive | fs::copy_options::overwrite_existing);
        // Next to pipeline.json so its relative inputs still resolve.
        write_json(out / "phantom" / (name + ".json"), c);
        return cli(r.dir, "--config out/phantom/" + name + ".json segment-import");
    };

    SUBCASE("all-zero masks give an all-zero volume") {
        const auto res = variant("zero_masks", [&](int) { return std::optional<Mask<2>>(Mask<2>({plane.size[0], plane.size[1]})); });
        CHECK(res.status == 0);
        const Image3D v = read_volume(r.dir / "zero_masks" / "out" / "template_space" / "phantom_masks.json");
        CHECK(std::all_of(v.values().begin(), v.values().end(), [](double x) { return x == 0.0; }));
    }
    SUBCASE("a missing slice mask is a hard error") {
        const auto res = variant("missing_mask", [&](int i) {
            return i == 5 ? std::nullopt : std::optional<Mask<2>>(Mask<2>({plane.size[0], plane.size[1]}));
        });
        CHECK(res.status == 1);
        CHECK(res.output.find("no mask for ISH sections: 5") != std::string::npos);
    }
    SUBCASE("dimension mismatch lists the offending slices") {
        const auto res = variant("bad_dims", [&](int i) {
            return std::optional<Mask<2>>(i == 3 || i == 9 ? Mask<2>({10, 10}) : Mask<2>({plane.size[0], plane.size[1]}));
        });
        CHECK(res.status == 1);
        CHECK(res.output.find("3, 9") != std::string::npos);
    }
}

TEST_CASE("same seed phantoms are byte-identical") {
    const auto dir = testing::scratch_dir("pipeline_seed");
    write_json(dir / "small.json", kPhantom);
    REQUIRE(cli(dir, "--config small.json --output-dir a phantom").status == 0);
    REQUIRE(cli(dir, "--config small.json --output-dir b --threads 3 phantom").status == 0);
    const auto a = tree(dir / "a" / "phantom"), b = tree(dir / "b" / "phantom");
    CHECK(a.size() > 100);
    CHECK(a == b);
}
