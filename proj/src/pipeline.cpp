#include "histostack/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "histostack/io.hpp"
#include "histostack/landmarks.hpp"
#include "histostack/metrics.hpp"
#include "histostack/parallel.hpp"
#include "histostack/warp.hpp"

namespace histostack {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Reads optional keys from one JSON object and rejects the ones nobody asked for.
class Section {
public:
    Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw std::invalid_argument("config: '" + where_ + "' must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        used_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw std::invalid_argument("config: " + where_ + "." + key + ": " + e.what());
        }
    }

    bool has(const char* key) {
        used_.insert(key);
        return j_.contains(key);
    }
    const json& at(const char* key) const { return j_.at(key); }
    std::string where(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

    void done() const {
        for (const auto& item : j_.items())
            if (!used_.count(item.key()))
                throw std::invalid_argument("config: unknown key '" + (where_.empty() ? "" : where_ + ".") + item.key() + "'");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> used_;
};

fs::path resolved(const fs::path& base, const std::string& p) {
    if (p.empty()) return {};
    const fs::path path(p);
    return (path.is_absolute() || base.empty()) ? path : (base / path).lexically_normal();
}

void read_path(Section& s, const char* key, fs::path& out, const fs::path& base) {
    std::string p;
    s.get(key, p);
    if (!p.empty()) out = resolved(base, p);
}

void read_affine(Section s, AffineRegParams& a) {
    std::string dof = to_string(a.dof);
    s.get("levels", a.levels);
    s.get("max_iterations", a.max_iterations);
    s.get("tolerance", a.tolerance);
    s.get("rotation_scale", a.rotation_scale);
    s.get("log_scale_scale", a.log_scale_scale);
    s.get("shear_scale", a.shear_scale);
    s.get("translation_scale_um", a.translation_scale_um);
    s.get("dof", dof);
    s.get("grid_search", a.grid_search);
    s.get("min_overlap", a.min_overlap);
    s.done();
    a.dof = parse_dof(dof);
}

json affine_json(const AffineRegParams& a) {
    return {{"levels", a.levels},
            {"max_iterations", a.max_iterations},
            {"tolerance", a.tolerance},
            {"rotation_scale", a.rotation_scale},
            {"log_scale_scale", a.log_scale_scale},
            {"shear_scale", a.shear_scale},
            {"translation_scale_um", a.translation_scale_um},
            {"dof", to_string(a.dof)},
            {"grid_search", a.grid_search},
            {"min_overlap", a.min_overlap}};
}

void read_deformable(Section s, DeformableRegParams& d) {
    s.get("levels", d.levels);
    s.get("iterations", d.iterations);
    s.get("sigma_fluid", d.sigma_fluid);
    s.get("sigma_diffusion", d.sigma_diffusion);
    s.get("max_step_voxels", d.max_step_voxels);
    s.get("convergence_voxels", d.convergence_voxels);
    s.get("max_halvings", d.max_halvings);
    s.done();
}

json deformable_json(const DeformableRegParams& d) {
    return {{"levels", d.levels},
            {"iterations", d.iterations},
            {"sigma_fluid", d.sigma_fluid},
            {"sigma_diffusion", d.sigma_diffusion},
            {"max_step_voxels", d.max_step_voxels},
            {"convergence_voxels", d.convergence_voxels},
            {"max_halvings", d.max_halvings}};
}

IterationSchedule read_schedule(const json& j) {
    if (!j.is_array()) throw std::invalid_argument("config: reconstruction.schedule must be an array");
    IterationSchedule sched;
    for (std::size_t k = 0; k < j.size(); ++k) {
        Section s(j[k], "reconstruction.schedule[" + std::to_string(k) + "]");
        Phase p;
        std::string kind = to_string(p.kind), tk = "previous";
        s.get("first", p.first_iteration);
        s.get("last", p.last_iteration);
        s.get("kind", kind);
        s.get("weights", p.weights);
        s.get("tk", tk);
        s.get("frozen_at", p.frozen_at);
        s.done();
        p.kind = parse_phase_kind(kind);
        if (tk == "previous")
            p.tk = TkPolicy::previous;
        else if (tk == "frozen")
            p.tk = TkPolicy::frozen;
        else
            throw std::invalid_argument("config: tk must be 'previous' or 'frozen'");
        sched.phases.push_back(p);
    }
    return sched;
}

json schedule_json(const IterationSchedule& s) {
    json a = json::array();
    for (const auto& p : s.phases)
        a.push_back({{"first", p.first_iteration},
                     {"last", p.last_iteration},
                     {"kind", to_string(p.kind)},
                     {"weights", p.weights},
                     {"tk", p.tk == TkPolicy::previous ? "previous" : "frozen"},
                     {"frozen_at", p.frozen_at}});
    return a;
}

void read_phantom(Section s, PhantomSpec& p, TemplateSynthesis& t) {
    s.get("dims", p.dims);
    s.get("spacing_um", p.spacing_um);
    s.get("structures", p.structures);
    s.get("max_translation_px", p.max_translation_px);
    s.get("max_rotation_deg", p.max_rotation_deg);
    s.get("max_shear", p.max_shear);
    s.get("warp_amplitude_px", p.warp_amplitude_px);
    s.get("warp_period_px", p.warp_period_px);
    s.get("ish_max_translation_px", p.ish_max_translation_px);
    s.get("ish_max_rotation_deg", p.ish_max_rotation_deg);
    s.get("ish_warp_amplitude_px", p.ish_warp_amplitude_px);
    s.get("ish_gamma", p.ish_gamma);
    s.get("ish_contrast_jitter", p.ish_contrast_jitter);
    s.get("expression_blobs", p.expression_blobs);
    s.get("annotators", p.annotators);
    s.get("annotator_jitter_um", p.annotator_jitter_um);
    if (s.has("template")) {
        Section ts(s.at("template"), s.where("template"));
        ts.get("scale", t.scale);
        ts.get("rotation_deg", t.rotation_deg);
        ts.get("warp_amplitude_voxels", t.warp_amplitude_voxels);
        ts.get("warp_period_voxels", t.warp_period_voxels);
        ts.done();
    }
    s.done();
}

json phantom_json(const PhantomSpec& p, const TemplateSynthesis& t) {
    return {{"dims", p.dims},
            {"spacing_um", p.spacing_um},
            {"structures", p.structures},
            {"max_translation_px", p.max_translation_px},
            {"max_rotation_deg", p.max_rotation_deg},
            {"max_shear", p.max_shear},
            {"warp_amplitude_px", p.warp_amplitude_px},
            {"warp_period_px", p.warp_period_px},
            {"ish_max_translation_px", p.ish_max_translation_px},
            {"ish_max_rotation_deg", p.ish_max_rotation_deg},
            {"ish_warp_amplitude_px", p.ish_warp_amplitude_px},
            {"ish_gamma", p.ish_gamma},
            {"ish_contrast_jitter", p.ish_contrast_jitter},
            {"expression_blobs", p.expression_blobs},
            {"annotators", p.annotators},
            {"annotator_jitter_um", p.annotator_jitter_um},
            {"template",
             {{"scale", t.scale},
              {"rotation_deg", t.rotation_deg},
              {"warp_amplitude_voxels", t.warp_amplitude_voxels},
              {"warp_period_voxels", t.warp_period_voxels}}}};
}

std::string path_string(const fs::path& p) { return p.generic_string(); }

void require_file(const fs::path& p, const std::string& what) {
    if (p.empty()) throw std::runtime_error(what + " is not configured");
    if (!fs::exists(p)) throw std::runtime_error(what + " not found: " + p.string());
}

std::string gene_name(const StackManifest& m, std::size_t k) {
    return m.gene.empty() ? "ish" + std::to_string(k) : m.gene;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// Images of one modality from a manifest, optionally preprocessed.
SectionStack load_stack(const StackManifest& m, Modality modality, const PipelineConfig& config) {
    SectionStack s;
    s.slice_thickness_um = m.slice_thickness_um;
    for (const auto& e : m.entries(modality)) {
        auto loaded = read_image(m.resolve(e), m.spacing_um, m.invert);
        s.indices.push_back(e.index);
        s.images.push_back(config.preprocess ? preprocess_section(loaded.image, config.preprocess_config)
                                             : std::move(loaded.image));
    }
    if (s.images.empty())
        throw std::runtime_error("manifest has no " + to_string(modality) + " sections");
    return s;
}

void write_log(const fs::path& path, const std::vector<IterationLogEntry>& log) {
    std::string text;
    for (const auto& e : log) text += to_json_line(e) + "\n";
    write_text(path, text);
}

void warn(std::ostream& log, std::vector<std::string>& warnings, const std::string& msg) {
    log << "warning: " << msg << "\n";
    warnings.push_back(msg);
}

int cmd_phantom(const PipelineConfig& config, std::ostream& log) {
    PhantomSpec spec = config.phantom;
    spec.seed = config.seed;
    const Phantom ph = generate_phantom(spec);
    const fs::path dir = config.output_dir / "phantom";
    for (const char* sub : {"blockface", "backlit", "ish", "masks", "truth", "template"})
        fs::create_directories(dir / sub);

    StackManifest bf, bl, ish, masks;
    for (auto* m : {&bf, &bl, &ish, &masks}) {
        m->spacing_um = {spec.spacing_um[0], spec.spacing_um[1]};
        m->slice_thickness_um = ph.slice_thickness_um;
        m->bit_depth = 16;
    }
    ish.gene = masks.gene = "phantom";
    masks.bit_depth = 8;
    char name[64];
    for (std::size_t j = 0; j < ph.blockface.size(); ++j) {
        const int idx = static_cast<int>(j);
        std::snprintf(name, sizeof name, "%04d.png", idx);
        write_png(dir / "blockface" / name, ph.blockface[j], 16);
        write_png(dir / "backlit" / name, ph.backlit[j], 16);
        write_png(dir / "ish" / name, ph.ish[j], 16);
        write_mask_png(dir / "masks" / name, ph.ish_masks[j]);
        bf.sections.push_back({idx, Modality::blockface, fs::path("blockface") / name});
        bl.sections.push_back({idx, Modality::backlit, fs::path("backlit") / name});
        ish.sections.push_back({idx, Modality::ish, fs::path("ish") / name});
        masks.sections.push_back({idx, Modality::mask, fs::path("masks") / name});
        write_chain(section_chain_path(dir / "truth" / "backlit", idx), ph.backlit_truth[j]);
        write_chain(section_chain_path(dir / "truth" / "ish", idx), ph.ish_truth[j]);
    }
    write_manifest(dir / "blockface.json", bf);
    write_manifest(dir / "backlit.json", bl);
    write_manifest(dir / "ish.json", ish);
    write_manifest(dir / "masks.json", masks);

    const Image3D& vol = ph.truth_volume.volume;
    write_volume(dir / "truth" / "volume.json", vol);
    write_mask_volume(dir / "truth" / "expression.json", ph.truth_volume.expression, vol.spacing());
    write_landmarks_csv(dir / "truth" / "landmarks.csv", {ph.landmarks});

    // Template and its landmarks; annotations are the template landmarks carried
    // into volume space, plus each annotator's jitter.
    const TransformChain to_truth = template_truth_chain(vol.geometry(), config.phantom_template);
    write_volume(dir / "template" / "volume.json", warp_image<3>(vol, to_truth, vol.geometry()));
    write_chain(dir / "template" / "truth_chain.json", to_truth);
    const LandmarkSet templ = canonical_landmarks(vol.geometry(), "template");
    write_landmarks_csv(dir / "template" / "landmarks.csv", {templ});
    std::vector<LandmarkSet> annotations;
    for (const auto& a : ph.annotations) {
        LandmarkSet s = templ;
        s.annotator = a.annotator;
        for (std::size_t l = 0; l < s.landmarks.size(); ++l)
            for (std::size_t q = 0; q < s.landmarks[l].points.size(); ++q) {
                const Point base = to_truth.apply(s.landmarks[l].points[q]);
                for (int d = 0; d < 3; ++d)
                    s.landmarks[l].points[q][d] =
                        base[d] + a.landmarks[l].points[q][d] - ph.landmarks.landmarks[l].points[q][d];
            }
        annotations.push_back(std::move(s));
    }
    write_landmarks_csv(dir / "annotations.csv", annotations);

    // A config that runs the remaining subcommands on this phantom.
    PipelineConfig next = config;
    next.output_dir = "..";
    next.blockface_manifest = "blockface.json";
    next.backlit_manifest = "backlit.json";
    next.ish_manifests = {"ish.json"};
    next.template_volume = "template/volume.json";
    next.template_landmarks = "template/landmarks.csv";
    next.reconstruction_dir.clear();
    next.mask_manifest = "masks.json";
    next.mask_gene = "phantom";
    next.manual_landmarks = annotations.size() >= 2 ? fs::path("annotations.csv") : fs::path();
    next.auto_landmarks.clear();
    next.threads = 0;
    write_text(dir / "pipeline.json", config_to_json(next));
    log << "phantom: " << ph.blockface.size() << " sections written to " << dir.string() << "\n";
    return exit_ok;
}

struct ReconOutputs {
    fs::path dir;
    fs::path volume() const { return dir / "backlit.json"; }
    fs::path gene_dir(const std::string& gene) const { return dir / gene; }
};

int cmd_reconstruct(const PipelineConfig& config, std::ostream& log) {
    const StackManifest bfm = read_manifest(config.blockface_manifest);
    const StackManifest blm = read_manifest(config.backlit_manifest);
    const SectionStack bf = load_stack(bfm, Modality::blockface, config);
    const SectionStack bl = load_stack(blm, Modality::backlit, config);
    std::vector<StackManifest> ishm;
    for (const auto& p : config.ish_manifests) ishm.push_back(read_manifest(p));

    const ReconOutputs out{config.reconstruction_dir};
    fs::create_directories(out.dir / "backlit");
    std::vector<std::string> warnings;

    const ReconstructionState st = reconstruct_backlit(bl, bf, config.recon);
    for (const auto& w : st.warnings) warn(log, warnings, "backlit: " + w);
    write_volume(out.volume(), st.stack);
    for (std::size_t j = 0; j < st.chains.size(); ++j)
        write_chain(section_chain_path(out.dir / "backlit", st.indices[j]), st.chains[j]);
    write_log(out.dir / "iteration_log.jsonl", st.log);
    log << "reconstruct: backlit stack of " << st.chains.size() << " sections, " << st.iteration + 1 << " iterations\n";

    json summary;
    summary["backlit"] = {{"sections", st.indices}, {"flagged", st.flagged}, {"min_jacobian", st.min_jacobian}};
    summary["genes"] = json::object();
    const Geometry<2> grid = bf.images.front().geometry();
    for (std::size_t k = 0; k < ishm.size(); ++k) {
        const std::string gene = gene_name(ishm[k], k);
        const SectionStack ish = load_stack(ishm[k], Modality::ish, config);
        const IshReconstruction r = reconstruct_ish(ish, bl, st, grid, config.recon);
        for (const auto& w : r.warnings) warn(log, warnings, gene + ": " + w);
        const fs::path gdir = out.gene_dir(gene);
        fs::create_directories(gdir);
        write_volume(gdir / "volume.json", r.stack);
        for (std::size_t j = 0; j < r.chains.size(); ++j) write_chain(section_chain_path(gdir, ish.indices[j]), r.chains[j]);
        write_log(gdir / "iteration_log.jsonl", r.log);
        summary["genes"][gene] = {{"sections", ish.indices}, {"flagged", r.flagged}, {"min_jacobian", r.min_jacobian}};
        log << "reconstruct: gene " << gene << ", " << ish.indices.size() << " sections\n";
    }
    summary["warnings"] = warnings;
    write_text(out.dir / "summary.json", dump(summary));
    return warnings.empty() ? exit_ok : exit_warnings;
}

std::vector<std::string> recon_genes(const PipelineConfig& config) {
    std::vector<std::string> genes;
    for (std::size_t k = 0; k < config.ish_manifests.size(); ++k)
        genes.push_back(gene_name(read_manifest(config.ish_manifests[k]), k));
    return genes;
}

int cmd_map_template(const PipelineConfig& config, std::ostream& log) {
    const ReconOutputs rec{config.reconstruction_dir};
    const Image3D recon = read_volume(rec.volume());
    const Image3D templ = read_volume(config.template_volume);
    const TemplateMapping m = map_to_template(recon, templ, config.template_affine, config.template_deformable);
    std::vector<std::string> warnings;
    if (!m.deformable_kept) warn(log, warnings, "deformable template stage did not improve NMI; identity field kept");

    const fs::path dir = config.output_dir / "template_space";
    fs::create_directories(dir);
    write_chain(dir / "chain.json", m.chain);
    write_volume(dir / "backlit.json", warp_image<3>(recon, m.chain, templ.geometry()));
    for (const auto& gene : recon_genes(config)) {
        const fs::path v = rec.gene_dir(gene) / "volume.json";
        if (!fs::exists(v)) throw std::runtime_error("reconstruction of gene " + gene + " not found: " + v.string());
        write_volume(dir / (gene + ".json"), warp_image<3>(read_volume(v), m.chain, templ.geometry()));
    }
    json summary = {{"nmi_affine", m.nmi_affine},
                    {"nmi_full", m.nmi_full},
                    {"deformable_kept", m.deformable_kept},
                    {"min_jacobian", m.min_jacobian}};

    if (!config.template_landmarks.empty()) {
        const auto sets = read_landmarks_csv(config.template_landmarks);
        if (sets.empty()) throw std::runtime_error("no landmarks in " + config.template_landmarks.string());
        const Geometry<3> bounds = recon.geometry();
        auto mapped = map_landmarks(sets.front(), m.chain, MapDirection::forward, &bounds);
        mapped.set.annotator = "auto";
        for (const auto& name : mapped.out_of_bounds)
            warn(log, warnings, "landmark '" + name + "' maps outside the reconstruction");
        write_landmarks_csv(dir / "auto_landmarks.csv", {mapped.set});
        summary["landmarks_out_of_bounds"] = mapped.out_of_bounds;
    }
    write_text(dir / "mapping.json", dump(summary));
    char buf[128];
    std::snprintf(buf, sizeof buf, "map-template: NMI affine %.6f, full %.6f\n", m.nmi_affine, m.nmi_full);
    log << buf;
    return warnings.empty() ? exit_ok : exit_warnings;
}

int cmd_segment_import(const PipelineConfig& config, std::ostream& log) {
    const StackManifest masks = read_manifest(config.mask_manifest);
    const std::string gene = config.mask_gene.empty() ? masks.gene : config.mask_gene;
    const StackManifest* ishm = nullptr;
    std::vector<StackManifest> all;
    for (const auto& p : config.ish_manifests) all.push_back(read_manifest(p));
    for (std::size_t k = 0; k < all.size(); ++k)
        if (gene_name(all[k], k) == gene) ishm = &all[k];
    if (!ishm) throw std::runtime_error("no ISH manifest for gene '" + gene + "'");

    std::map<int, fs::path> mask_of;
    for (const auto& e : masks.entries(Modality::mask)) mask_of[e.index] = masks.resolve(e);
    std::vector<int> missing, mismatched;
    std::vector<std::pair<int, Mask<2>>> loaded;
    std::vector<Geometry<2>> grids;
    for (const auto& e : ishm->entries(Modality::ish)) {
        const auto it = mask_of.find(e.index);
        if (it == mask_of.end()) {
            missing.push_back(e.index);
            continue;
        }
        const auto img = read_image(ishm->resolve(e), ishm->spacing_um, ishm->invert);
        Mask<2> mk = read_mask_png(it->second);
        if (mk.size() != img.image.size()) mismatched.push_back(e.index);
        grids.push_back(img.image.geometry());
        loaded.emplace_back(e.index, std::move(mk));
    }
    auto list = [](const std::vector<int>& v) {
        std::string s;
        for (int i : v) s += (s.empty() ? "" : ", ") + std::to_string(i);
        return s;
    };
    if (!missing.empty()) throw std::runtime_error("no mask for ISH sections: " + list(missing));
    if (!mismatched.empty()) throw std::runtime_error("mask dimensions differ from the ISH sections: " + list(mismatched));

    const ReconOutputs rec{config.reconstruction_dir};
    const fs::path tchain = config.output_dir / "template_space" / "chain.json";
    require_file(tchain, "template chain (run map-template first)");
    const Geometry<3> recon_grid = read_volume(rec.volume()).geometry();
    const Geometry<3> templ_grid = read_volume(config.template_volume).geometry();
    const Geometry<2> plane{{recon_grid.size[0], recon_grid.size[1]}, {recon_grid.spacing[0], recon_grid.spacing[1]}};
    if (static_cast<int>(loaded.size()) != recon_grid.size[2])
        throw std::runtime_error("gene " + gene + " has " + std::to_string(loaded.size()) +
                                 " sections but the reconstruction has " + std::to_string(recon_grid.size[2]));

    std::vector<Mask<2>> warped(loaded.size());
    parallel_for(loaded.size(), config.threads, [&](std::size_t j) {
        const TransformChain chain = read_chain(section_chain_path(rec.gene_dir(gene), loaded[j].first));
        warped[j] = warp_mask<2>(loaded[j].second, grids[j], chain, plane);
    });
    Mask<3> volume({recon_grid.size[0], recon_grid.size[1], recon_grid.size[2]});
    const std::size_t per_slice = plane.count();
    for (std::size_t j = 0; j < warped.size(); ++j)
        std::copy(warped[j].bits().begin(), warped[j].bits().end(), volume.bits().begin() + j * per_slice);
    write_mask_volume(rec.gene_dir(gene) / "masks.json", volume, recon_grid.spacing);

    const Mask<3> in_template = warp_mask<3>(volume, recon_grid, read_chain(tchain), templ_grid);
    const fs::path out = config.output_dir / "template_space" / (gene + "_masks.json");
    write_mask_volume(out, in_template, templ_grid.spacing);
    log << "segment-import: " << loaded.size() << " masks of gene " << gene << " written to " << out.string() << "\n";
    return exit_ok;
}

int cmd_evaluate(const PipelineConfig& config, std::ostream& log) {
    std::vector<std::string> warnings;
    const fs::path dir = config.output_dir / "reports";
    fs::create_directories(dir);
    bool any = false;
    if (!config.dice.empty()) {
        any = true;
        json rows = json::array();
        std::string text;
        for (const auto& pair : config.dice) {
            const StackManifest pm = read_manifest(pair.predicted);
            const StackManifest tm = read_manifest(pair.truth);
            std::map<int, fs::path> truth;
            for (const auto& e : tm.entries(Modality::mask)) truth[e.index] = tm.resolve(e);
            std::vector<double> scores;
            for (const auto& e : pm.entries(Modality::mask)) {
                const auto it = truth.find(e.index);
                if (it == truth.end()) {
                    warn(log, warnings, pair.name + ": section " + std::to_string(e.index) + " has no truth mask");
                    continue;
                }
                const Mask<2> a = read_mask_png(pm.resolve(e));
                const Mask<2> b = read_mask_png(it->second);
                if (a.size() != b.size()) {
                    warn(log, warnings, pair.name + ": section " + std::to_string(e.index) + " mask dimensions differ; excluded");
                    continue;
                }
                scores.push_back(dice<2>(a, b));
            }
            const DiceSummary s = summarize_dice(pair.name, scores);
            rows.push_back({{"name", s.name}, {"mean", s.mean}, {"sd", s.sd}});
            text += format_dice_row(s) + "\n";
        }
        write_text(dir / "dice_report.json", dump(rows));
        write_text(dir / "dice_report.txt", text);
        log << text;
    }
    if (!config.manual_landmarks.empty()) {
        any = true;
        const auto manual = read_landmarks_csv(config.manual_landmarks);
        const auto automatic = read_landmarks_csv(config.auto_landmarks);
        if (automatic.size() != 1) throw std::runtime_error("automatic landmark file must hold exactly one set");
        const DisplacementReport r = agreement_report(manual, automatic.front());
        write_text(dir / "landmark_report.json", report_json(r));
        write_text(dir / "landmark_report.txt", report_table(r));
        log << report_table(r);
    }
    if (!any) throw std::runtime_error("nothing to evaluate: configure evaluate.dice or evaluate.manual_landmarks");
    return warnings.empty() ? exit_ok : exit_warnings;
}

}  // namespace

TransformChain template_truth_chain(const Geometry<3>& g, const TemplateSynthesis& t) {
    const double th = t.rotation_deg * std::numbers::pi / 180.0;
    Matrix3 l = identity_matrix();
    l[0][0] = t.scale * std::cos(th);
    l[0][1] = -t.scale * std::sin(th);
    l[1][0] = t.scale * std::sin(th);
    l[1][1] = t.scale * std::cos(th);
    l[2][2] = t.scale;
    Point c{};
    for (int d = 0; d < 3; ++d) c[d] = 0.5 * (g.size[d] - 1) * g.spacing[d];
    TransformChain chain(3);
    chain.append(Affine(3, l, {0, 0, 0}, c));
    if (t.warp_amplitude_voxels != 0.0) {
        std::vector<std::vector<double>> comp(3, std::vector<double>(g.count()));
        const double k = 2.0 * std::numbers::pi / t.warp_period_voxels;
        for (int z = 0; z < g.size[2]; ++z)
            for (int y = 0; y < g.size[1]; ++y)
                for (int x = 0; x < g.size[0]; ++x) {
                    const std::size_t i = g.index(x, y, z);
                    comp[0][i] = t.warp_amplitude_voxels * g.spacing[0] * std::sin(k * y + 0.3);
                    comp[1][i] = t.warp_amplitude_voxels * g.spacing[1] * std::sin(k * z + 1.0);
                    comp[2][i] = t.warp_amplitude_voxels * g.spacing[2] * std::sin(k * x + 2.0);
                }
        chain.append(DisplacementField(3, {g.size[0], g.size[1], g.size[2]}, {g.spacing[0], g.spacing[1], g.spacing[2]},
                                       std::move(comp)));
    }
    return chain;
}

AffineRegParams PipelineConfig::default_template_affine() {
    AffineRegParams a;
    a.max_iterations = 1000;
    return a;
}

PipelineConfig parse_config(const std::string& json_text, const fs::path& base_dir) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    PipelineConfig c;
    Section top(j, "");
    top.get("seed", c.seed);
    top.get("threads", c.threads);
    read_path(top, "output_dir", c.output_dir, base_dir);
    top.get("bins", c.bins);
    if (top.has("inputs")) {
        Section s(top.at("inputs"), "inputs");
        read_path(s, "blockface_manifest", c.blockface_manifest, base_dir);
        read_path(s, "backlit_manifest", c.backlit_manifest, base_dir);
        std::vector<std::string> ish;
        s.get("ish_manifests", ish);
        for (const auto& p : ish) c.ish_manifests.push_back(resolved(base_dir, p));
        read_path(s, "template_volume", c.template_volume, base_dir);
        read_path(s, "template_landmarks", c.template_landmarks, base_dir);
        read_path(s, "reconstruction_dir", c.reconstruction_dir, base_dir);
        read_path(s, "mask_manifest", c.mask_manifest, base_dir);
        s.get("mask_gene", c.mask_gene);
        s.done();
    }
    if (top.has("preprocess")) {
        Section s(top.at("preprocess"), "preprocess");
        auto& p = c.preprocess_config;
        s.get("enabled", c.preprocess);
        s.get("downscale_factor", p.downscale_factor);
        s.get("median_radius", p.median_radius);
        s.get("morphology_radius", p.morphology_radius);
        s.get("max_passes", p.max_passes);
        s.done();
    }
    if (top.has("reconstruction")) {
        Section s(top.at("reconstruction"), "reconstruction");
        if (s.has("schedule")) c.recon.schedule = read_schedule(s.at("schedule"));
        s.get("sigma", c.recon.sigma);
        if (s.has("affine")) read_affine(Section(s.at("affine"), "reconstruction.affine"), c.recon.affine);
        if (s.has("deformable"))
            read_deformable(Section(s.at("deformable"), "reconstruction.deformable"), c.recon.deformable);
        s.get("ish_deformable_iterations", c.recon.ish_deformable_iterations);
        s.get("ish_weights", c.recon.ish_weights);
        s.done();
    }
    if (top.has("template")) {
        Section s(top.at("template"), "template");
        if (s.has("affine")) read_affine(Section(s.at("affine"), "template.affine"), c.template_affine);
        if (s.has("deformable")) read_deformable(Section(s.at("deformable"), "template.deformable"), c.template_deformable);
        s.done();
    }
    if (top.has("phantom")) read_phantom(Section(top.at("phantom"), "phantom"), c.phantom, c.phantom_template);
    if (top.has("evaluate")) {
        Section s(top.at("evaluate"), "evaluate");
        if (s.has("dice")) {
            const json& d = s.at("dice");
            if (!d.is_array()) throw std::invalid_argument("config: evaluate.dice must be an array");
            for (std::size_t k = 0; k < d.size(); ++k) {
                Section r(d[k], "evaluate.dice[" + std::to_string(k) + "]");
                DicePairConfig pair;
                r.get("name", pair.name);
                read_path(r, "predicted", pair.predicted, base_dir);
                read_path(r, "truth", pair.truth, base_dir);
                r.done();
                c.dice.push_back(pair);
            }
        }
        read_path(s, "manual_landmarks", c.manual_landmarks, base_dir);
        read_path(s, "auto_landmarks", c.auto_landmarks, base_dir);
        s.done();
    }
    top.done();
    return c;
}

PipelineConfig load_config(const fs::path& path) {
    fs::path base = path.parent_path();
    if (base.empty()) base = ".";
    return parse_config(read_text(path), base);
}

std::string config_to_json(const PipelineConfig& c) {
    json ish = json::array();
    for (const auto& p : c.ish_manifests) ish.push_back(path_string(p));
    json dice = json::array();
    for (const auto& d : c.dice)
        dice.push_back({{"name", d.name}, {"predicted", path_string(d.predicted)}, {"truth", path_string(d.truth)}});
    const auto& p = c.preprocess_config;
    json j = {
        {"seed", c.seed},
        {"threads", c.threads},
        {"output_dir", path_string(c.output_dir)},
        {"bins", c.bins},
        {"inputs",
         {{"blockface_manifest", path_string(c.blockface_manifest)},
          {"backlit_manifest", path_string(c.backlit_manifest)},
          {"ish_manifests", ish},
          {"template_volume", path_string(c.template_volume)},
          {"template_landmarks", path_string(c.template_landmarks)},
          {"reconstruction_dir", path_string(c.reconstruction_dir)},
          {"mask_manifest", path_string(c.mask_manifest)},
          {"mask_gene", c.mask_gene}}},
        {"preprocess",
         {{"enabled", c.preprocess},
          {"downscale_factor", p.downscale_factor},
          {"median_radius", p.median_radius},
          {"morphology_radius", p.morphology_radius},
          {"max_passes", p.max_passes}}},
        {"reconstruction",
         {{"schedule", schedule_json(c.recon.schedule)},
          {"sigma", c.recon.sigma},
          {"affine", affine_json(c.recon.affine)},
          {"deformable", deformable_json(c.recon.deformable)},
          {"ish_deformable_iterations", c.recon.ish_deformable_iterations},
          {"ish_weights", c.recon.ish_weights}}},
        {"template", {{"affine", affine_json(c.template_affine)}, {"deformable", deformable_json(c.template_deformable)}}},
        {"phantom", phantom_json(c.phantom, c.phantom_template)},
        {"evaluate",
         {{"dice", dice},
          {"manual_landmarks", path_string(c.manual_landmarks)},
          {"auto_landmarks", path_string(c.auto_landmarks)}}},
    };
    return dump(j);
}

PipelineConfig resolve(PipelineConfig c) {
    if (c.threads <= 0) c.threads = default_thread_count();
    c.recon.threads = c.threads;
    c.recon.affine.bins = c.bins;
    c.template_affine.bins = c.bins;
    if (c.reconstruction_dir.empty()) c.reconstruction_dir = c.output_dir / "reconstruction";
    if (c.auto_landmarks.empty() && !c.manual_landmarks.empty())
        c.auto_landmarks = c.output_dir / "template_space" / "auto_landmarks.csv";
    return c;
}

Command parse_command(const std::string& name) {
    if (name == "reconstruct") return Command::reconstruct;
    if (name == "map-template") return Command::map_template;
    if (name == "evaluate") return Command::evaluate;
    if (name == "phantom") return Command::phantom;
    if (name == "segment-import") return Command::segment_import;
    throw std::invalid_argument("unknown command '" + name + "'");
}

std::string to_string(Command command) {
    switch (command) {
        case Command::reconstruct: return "reconstruct";
        case Command::map_template: return "map-template";
        case Command::evaluate: return "evaluate";
        case Command::phantom: return "phantom";
        case Command::segment_import: return "segment-import";
    }
    return "reconstruct";
}

fs::path resolved_config_path(const PipelineConfig& config, Command command) {
    return config.output_dir / (to_string(command) + ".resolved_config.json");
}

fs::path section_chain_path(const fs::path& dir, int index) {
    char name[64];
    std::snprintf(name, sizeof name, "section_%04d.chain.json", index);
    return dir / name;
}

void validate_inputs(const PipelineConfig& c, Command command) {
    if (c.bins < 2) throw std::invalid_argument("bins must be >= 2");
    if (c.threads < 1) throw std::invalid_argument("thread count must be >= 1");
    c.recon.schedule.validate();
    c.recon.deformable.validate();
    c.template_deformable.validate();
    if (!(c.recon.sigma >= 0.0)) throw std::invalid_argument("smoothing sigma must be >= 0");
    switch (command) {
        case Command::phantom:
            c.phantom.validate();
            if (!(c.phantom_template.scale > 0.0) || !(c.phantom_template.warp_period_voxels > 0.0))
                throw std::invalid_argument("phantom template scale and warp period must be positive");
            break;
        case Command::reconstruct:
            require_file(c.blockface_manifest, "blockface manifest");
            require_file(c.backlit_manifest, "backlit manifest");
            for (const auto& p : c.ish_manifests) require_file(p, "ISH manifest");
            break;
        case Command::map_template:
            require_file(c.reconstruction_dir / "backlit.json", "backlit reconstruction");
            require_file(c.template_volume, "template volume");
            if (!c.template_landmarks.empty()) require_file(c.template_landmarks, "template landmarks");
            break;
        case Command::segment_import:
            require_file(c.mask_manifest, "mask manifest");
            require_file(c.reconstruction_dir / "backlit.json", "backlit reconstruction");
            require_file(c.template_volume, "template volume");
            for (const auto& p : c.ish_manifests) require_file(p, "ISH manifest");
            break;
        case Command::evaluate:
            for (const auto& d : c.dice) {
                require_file(d.predicted, "predicted mask manifest");
                require_file(d.truth, "truth mask manifest");
            }
            if (!c.manual_landmarks.empty()) {
                require_file(c.manual_landmarks, "manual landmarks");
                require_file(c.auto_landmarks, "automatic landmarks");
            }
            break;
    }
}

int run_command(Command command, const PipelineConfig& config, const RunOptions& options, std::ostream& log) {
    try {
        validate_inputs(config, command);
        if (options.dry_run) {
            log << to_string(command) << ": configuration valid (dry run, nothing written)\n";
            return exit_ok;
        }
        fs::create_directories(config.output_dir);
        write_text(resolved_config_path(config, command), config_to_json(config));
        switch (command) {
            case Command::phantom: return cmd_phantom(config, log);
            case Command::reconstruct: return cmd_reconstruct(config, log);
            case Command::map_template: return cmd_map_template(config, log);
            case Command::segment_import: return cmd_segment_import(config, log);
            case Command::evaluate: return cmd_evaluate(config, log);
        }
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
    }
    return exit_error;
}

}  // namespace histostack
