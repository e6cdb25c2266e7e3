#include "histostack/stack_recon.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "histostack/metrics.hpp"
#include "histostack/parallel.hpp"
#include "histostack/warp.hpp"

namespace histostack {

std::string to_string(PhaseKind kind) {
    switch (kind) {
        case PhaseKind::reference_affine: return "reference_affine";
        case PhaseKind::affine: return "affine";
        case PhaseKind::deformable: return "deformable";
    }
    return "affine";
}

PhaseKind parse_phase_kind(const std::string& s) {
    if (s == "reference_affine") return PhaseKind::reference_affine;
    if (s == "affine") return PhaseKind::affine;
    if (s == "deformable") return PhaseKind::deformable;
    throw std::invalid_argument("unknown phase kind '" + s + "'");
}

IterationSchedule IterationSchedule::standard() {
    IterationSchedule s;
    s.phases = {
        {0, 0, PhaseKind::reference_affine, {0.0, 0.0, 0.0}, TkPolicy::previous, 0},
        {1, 2, PhaseKind::affine, {1.0, 0.5, 0.5}, TkPolicy::previous, 0},
        {3, 6, PhaseKind::deformable, {0.0, 1.0, 0.25}, TkPolicy::frozen, 2},
    };
    return s;
}

void IterationSchedule::validate() const {
    if (phases.empty()) throw std::invalid_argument("schedule has no phases");
    const auto& p0 = phases.front();
    if (p0.kind != PhaseKind::reference_affine || p0.first_iteration != 0 || p0.last_iteration != 0)
        throw std::invalid_argument("schedule must start with a single reference_affine iteration 0");
    int next = 0;
    for (std::size_t k = 0; k < phases.size(); ++k) {
        const auto& p = phases[k];
        if (p.first_iteration != next || p.last_iteration < p.first_iteration)
            throw std::invalid_argument("schedule iteration ranges must be contiguous from 0");
        if (k > 0) {
            if (p.kind == PhaseKind::reference_affine)
                throw std::invalid_argument("only iteration 0 may register against the reference");
            double sum = 0.0;
            for (double w : p.weights) {
                if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("schedule weights must be >= 0");
                sum += w;
            }
            if (sum <= 0.0) throw std::invalid_argument("schedule weights must not all be zero");
            if (p.tk == TkPolicy::frozen && (p.frozen_at < 0 || p.frozen_at >= p.first_iteration))
                throw std::invalid_argument("frozen Tk must refer to an earlier iteration");
        }
        next = p.last_iteration + 1;
    }
}

int IterationSchedule::iterations() const { return phases.empty() ? 0 : phases.back().last_iteration + 1; }

const Phase& IterationSchedule::phase_of(int iteration) const {
    for (const auto& p : phases)
        if (iteration >= p.first_iteration && iteration <= p.last_iteration) return p;
    throw std::out_of_range("iteration outside the schedule");
}

std::string to_json_line(const IterationLogEntry& e) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "{\"iteration\": %d, \"slice\": %d, \"phase\": \"%s\", \"objective_before\": %.17g, "
                  "\"objective_after\": %.17g}",
                  e.iteration, e.slice, e.phase.c_str(), e.objective_before, e.objective_after);
    return buf;
}

void SectionStack::validate() const {
    if (images.empty()) throw std::invalid_argument("section stack is empty");
    if (indices.size() != images.size()) throw std::invalid_argument("section stack indices and images differ in count");
    for (std::size_t k = 1; k < indices.size(); ++k)
        if (indices[k] <= indices[k - 1]) throw std::invalid_argument("section indices must be strictly increasing");
    for (const auto& im : images)
        if (im.geometry() != images.front().geometry()) throw std::invalid_argument("sections must share one grid");
    if (!(slice_thickness_um > 0.0)) throw std::invalid_argument("slice thickness must be positive");
}

WeightedTargets<2> slice_targets(const Image3D& stack, const Image3D& smoothed, int j,
                                 const std::array<double, 3>& weights) {
    const int depth = stack.depth();
    const auto [a, b, c] = weights;
    WeightedTargets<2> t;
    const bool has_prev = j > 0, has_next = j + 1 < depth;
    const double total = a + b + 2.0 * c;
    const double kept = a + b + c * (has_prev + has_next);
    const double scale = kept > 0.0 ? total / kept : 1.0;
    t.push_back({slice(smoothed, j), a * scale});
    t.push_back({slice(stack, j), b * scale});
    if (has_prev) t.push_back({slice(stack, j - 1), c * scale});
    if (has_next) t.push_back({slice(stack, j + 1), c * scale});
    return t;
}

Image3D render_stack(const std::vector<Image2D>& sections, const std::vector<TransformChain>& chains,
                     const Geometry<2>& out_grid, double slice_thickness_um, int threads) {
    if (sections.size() != chains.size()) throw std::invalid_argument("one chain per section is required");
    std::vector<Image2D> warped(sections.size());
    parallel_for(sections.size(), threads,
                 [&](std::size_t j) { warped[j] = warp_image<2>(sections[j], chains[j], out_grid); });
    return stack_slices(warped, slice_thickness_um);
}

namespace {

struct SliceOutcome {
    TransformChain chain{2};
    double before = 0.0;
    double after = 0.0;
    double min_jacobian = 1.0;
    bool failed = false;
    std::string message;
};

// One multi-term step for one slice: T acts after tk.
SliceOutcome multiterm_step(const Image2D& section, const TransformChain& tk, const WeightedTargets<2>& targets,
                            PhaseKind kind, const ReconParams& params) {
    SliceOutcome out;
    try {
        if (kind == PhaseKind::affine) {
            const auto r = register_affine_multiterm(section, tk, targets, params.affine);
            out.before = r.initial_objective;
            out.after = r.objective;
            out.chain = compose(TransformChain(r.transform), tk);
        } else {
            const Transform zero = DisplacementField::zero<2>(section.geometry());
            out.before = eval_multiterm(section, zero, tk, targets, params.affine.bins);
            const auto r = register_deformable_multiterm(section, tk, targets, params.deformable);
            out.min_jacobian = jacobian_min_det(r.field);
            out.after = eval_multiterm(section, r.field, tk, targets, params.affine.bins);
            // NMI is the reported objective; keep the identity field when demons did not improve it.
            if (out.after > out.before) {
                out.after = out.before;
                out.chain = compose(TransformChain(std::get<DisplacementField>(zero)), tk);
            } else {
                out.chain = compose(TransformChain(r.field), tk);
            }
        }
    } catch (const std::exception& e) {
        out.failed = true;
        out.message = e.what();
        out.chain = tk;
        out.after = out.before;
    }
    return out;
}

}  // namespace

ReconstructionState reconstruct_backlit(const SectionStack& backlit, const SectionStack& blockface,
                                        const ReconParams& params) {
    backlit.validate();
    blockface.validate();
    params.schedule.validate();
    if (!(params.sigma >= 0.0)) throw std::invalid_argument("smoothing sigma must be >= 0");
    for (int idx : backlit.indices)
        if (std::find(blockface.indices.begin(), blockface.indices.end(), idx) == blockface.indices.end())
            throw std::invalid_argument("no blockface section for backlit section " + std::to_string(idx));

    const std::size_t n = backlit.images.size();
    const Geometry<2> grid = blockface.images.front().geometry();
    ReconstructionState st;
    st.indices = backlit.indices;
    st.objective_history.assign(n, {});
    st.min_jacobian.assign(n, 1.0);
    std::vector<std::uint8_t> flagged(n, 0);

    for (int i = 0; i < params.schedule.iterations(); ++i) {
        const Phase& phase = params.schedule.phase_of(i);
        std::vector<SliceOutcome> out(n);
        if (phase.kind == PhaseKind::reference_affine) {
            parallel_for(n, params.threads, [&](std::size_t j) {
                const std::size_t k = static_cast<std::size_t>(
                    std::find(blockface.indices.begin(), blockface.indices.end(), backlit.indices[j]) -
                    blockface.indices.begin());
                const Image2D& bl = backlit.images[j];
                const Image2D& bf = blockface.images[k];
                try {
                    const Affine init = center_of_mass_init<2>(bl, bf);
                    const auto r = register_affine<2>(bl, bf, params.affine, init);
                    out[j].before = r.initial_objective;
                    out[j].after = r.objective;
                    out[j].chain = TransformChain(r.transform);
                } catch (const std::exception& e) {
                    out[j].failed = true;
                    out[j].message = e.what();
                    out[j].chain = TransformChain(Affine::identity(2));
                }
            });
        } else {
            parallel_for(n, params.threads, [&](std::size_t j) {
                const TransformChain& tk =
                    phase.tk == TkPolicy::previous ? st.chains[j] : st.history[phase.frozen_at][j];
                const auto targets = slice_targets(st.stack, st.smoothed, static_cast<int>(j), phase.weights);
                out[j] = multiterm_step(backlit.images[j], tk, targets, phase.kind, params);
            });
        }

        st.chains.clear();
        for (std::size_t j = 0; j < n; ++j) {
            st.chains.push_back(out[j].chain);
            st.objective_history[j].push_back(out[j].after);
            st.min_jacobian[j] = std::min(st.min_jacobian[j], out[j].min_jacobian);
            st.log.push_back({i, backlit.indices[j], to_string(phase.kind), out[j].before, out[j].after});
            if (out[j].failed) {
                flagged[j] = 1;
                st.warnings.push_back("iteration " + std::to_string(i) + ", section " +
                                      std::to_string(backlit.indices[j]) + ": " + out[j].message +
                                      " (identity fallback)");
            }
        }
        st.history.push_back(st.chains);
        st.stack = render_stack(backlit.images, st.chains, grid, backlit.slice_thickness_um, params.threads);
        st.smoothed = gaussian_smooth_3d(st.stack, params.sigma);
        st.iteration = i;
    }
    for (std::size_t j = 0; j < n; ++j)
        if (flagged[j]) st.flagged.push_back(backlit.indices[j]);
    return st;
}

IshReconstruction reconstruct_ish(const SectionStack& ish, const SectionStack& backlit, const ReconstructionState& recon,
                                  const Geometry<2>& out_grid, const ReconParams& params) {
    ish.validate();
    backlit.validate();
    std::vector<int> missing;
    std::vector<std::size_t> bl_of(ish.indices.size());
    for (std::size_t j = 0; j < ish.indices.size(); ++j) {
        const auto it = std::find(recon.indices.begin(), recon.indices.end(), ish.indices[j]);
        if (it == recon.indices.end()) {
            missing.push_back(ish.indices[j]);
            continue;
        }
        bl_of[j] = static_cast<std::size_t>(it - recon.indices.begin());
        if (std::find(backlit.indices.begin(), backlit.indices.end(), ish.indices[j]) == backlit.indices.end())
            missing.push_back(ish.indices[j]);
    }
    if (!missing.empty()) {
        std::string list;
        for (int m : missing) list += (list.empty() ? "" : ", ") + std::to_string(m);
        throw std::invalid_argument("ISH sections without a backlit counterpart: " + list);
    }
    if (params.ish_deformable_iterations < 0) throw std::invalid_argument("ISH iteration count must be >= 0");

    const std::size_t n = ish.images.size();
    IshReconstruction r;
    r.stage1.assign(n, Affine::identity(2));
    r.min_jacobian.assign(n, 1.0);
    std::vector<TransformChain> base(n, TransformChain(2));
    std::vector<SliceOutcome> out(n);
    std::vector<std::uint8_t> flagged(n, 0);

    parallel_for(n, params.threads, [&](std::size_t j) {
        const std::size_t k = bl_of[j];
        const auto pos = static_cast<std::size_t>(
            std::find(backlit.indices.begin(), backlit.indices.end(), ish.indices[j]) - backlit.indices.begin());
        try {
            const Affine init = center_of_mass_init<2>(ish.images[j], backlit.images[pos]);
            const auto a = register_affine<2>(ish.images[j], backlit.images[pos], params.affine, init);
            r.stage1[j] = a.transform;
            out[j].before = a.initial_objective;
            out[j].after = a.objective;
        } catch (const std::exception& e) {
            out[j].failed = true;
            out[j].message = e.what();
        }
        base[j] = compose(TransformChain(r.stage1[j]), recon.chains[k]);
    });
    auto record = [&](int iteration, const std::string& phase) {
        for (std::size_t j = 0; j < n; ++j) {
            r.log.push_back({iteration, ish.indices[j], phase, out[j].before, out[j].after});
            r.min_jacobian[j] = std::min(r.min_jacobian[j], out[j].min_jacobian);
            if (out[j].failed) {
                flagged[j] = 1;
                r.warnings.push_back("ISH iteration " + std::to_string(iteration) + ", section " +
                                     std::to_string(ish.indices[j]) + ": " + out[j].message + " (identity fallback)");
            }
        }
    };
    record(0, "ish_affine");
    r.chains = base;
    r.stack = render_stack(ish.images, r.chains, out_grid, ish.slice_thickness_um, params.threads);

    // Tk stays at the stage-1 chain; targets are the ISH counterparts.
    for (int i = 1; i <= params.ish_deformable_iterations; ++i) {
        const Image3D smoothed = gaussian_smooth_3d(r.stack, params.sigma);
        out.assign(n, SliceOutcome{});
        parallel_for(n, params.threads, [&](std::size_t j) {
            const auto targets = slice_targets(r.stack, smoothed, static_cast<int>(j), params.ish_weights);
            out[j] = multiterm_step(ish.images[j], base[j], targets, PhaseKind::deformable, params);
        });
        for (std::size_t j = 0; j < n; ++j) r.chains[j] = out[j].chain;
        record(i, "ish_deformable");
        r.stack = render_stack(ish.images, r.chains, out_grid, ish.slice_thickness_um, params.threads);
    }
    for (std::size_t j = 0; j < n; ++j)
        if (flagged[j]) r.flagged.push_back(ish.indices[j]);
    return r;
}

TemplateMapping map_to_template(const Image3D& recon, const Image3D& templ, const AffineRegParams& affine,
                                const DeformableRegParams& deformable) {
    const Affine init = center_of_mass_init<3>(recon, templ);
    const auto a = register_affine<3>(recon, templ, affine, init);
    const TransformChain affine_chain(a.transform);
    const auto d = register_deformable<3>(recon, templ, deformable, affine_chain);

    auto score = [&](const TransformChain& chain) {
        const auto w = warp_with_support<3>(recon, chain, templ.geometry());
        return nmi(w.image.values(), templ.values(), w.support, affine.bins);
    };
    TemplateMapping m;
    m.nmi_affine = score(affine_chain);
    m.chain = compose(TransformChain(d.field), affine_chain);
    m.nmi_full = score(m.chain);
    m.min_jacobian = jacobian_min_det(d.field);
    if (!(m.nmi_full > m.nmi_affine)) {
        m.deformable_kept = false;
        m.chain = compose(TransformChain(DisplacementField::zero<3>(recon.geometry())), affine_chain);
        m.nmi_full = m.nmi_affine;
        m.min_jacobian = 1.0;
    }
    return m;
}

}  // namespace histostack
