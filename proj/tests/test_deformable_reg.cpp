#include <doctest.h>

#include <cmath>

#include "histostack/deformable_registration.hpp"
#include "histostack/phantom.hpp"
#include "histostack/warp.hpp"
#include "support.hpp"

using namespace histostack;

namespace {

Image2D textured(int n = 96) { return testing::blob_image(n, n, 1.0, 8); }

// fixed(x) = moving(x + u(x)) for a sinusoidal u.
Image2D sinusoid_warped(const Image2D& moving, double amplitude_px, double period_px) {
    return warp_image<2>(moving, TransformChain(sinusoidal_field(moving.geometry(), amplitude_px, period_px, 0.3, 1.1)));
}

}  // namespace

TEST_CASE("parameter validation") {
    DeformableRegParams p;
    CHECK_NOTHROW(p.validate());
    p.sigma_fluid = -1;
    CHECK_THROWS(p.validate());
    p = {};
    p.max_step_voxels = 0;
    CHECK_THROWS(p.validate());
    p = {};
    p.levels = 0;
    CHECK_THROWS(p.validate());
}

TEST_CASE("identical images give a near-zero field") {
    const Image2D img = textured();
    const auto r = register_deformable<2>(img, img, {}, TransformChain(2));
    CHECK(r.field.max_magnitude() / img.spacing()[0] < 0.05);
    CHECK(jacobian_min_det(r.field) > 0.0);
}

TEST_CASE("zero iterations give the identity field") {
    const Image2D img = textured();
    DeformableRegParams p;
    p.iterations = 0;
    const auto r = register_deformable<2>(img, sinusoid_warped(img, 3, 32), p, TransformChain(2));
    CHECK(r.field.max_magnitude() == 0.0);
}

TEST_CASE("sinusoidal warp recovery") {
    const Image2D moving = textured(128);
    const Image2D fixed = sinusoid_warped(moving, 3.0, 32.0);
    const auto r = register_deformable<2>(moving, fixed, {}, TransformChain(2));
    const Image2D out = warp_image<2>(moving, TransformChain(r.field));
    const double before = testing::mse(moving, fixed), after = testing::mse(out, fixed);
    MESSAGE("MSE " << before << " -> " << after);
    CHECK(after <= 0.2 * before);
    CHECK(jacobian_min_det(r.field) > 0.0);

    SUBCASE("energy never increases within a level") {
        REQUIRE(r.energy.size() == r.energy_level.size());
        for (std::size_t k = 1; k < r.energy.size(); ++k)
            if (r.energy_level[k] == r.energy_level[k - 1]) CHECK(r.energy[k] <= r.energy[k - 1]);
    }
}

TEST_CASE("weak inverse consistency on a phantom slice") {
    PhantomSpec spec;
    spec.dims = {96, 96, 40};
    spec.spacing_um = {10, 10, 50};
    const PhantomVolume pv = phantom_volume(spec);
    const Image2D a = slice(pv.volume, 20);
    const Image2D b = warp_image<2>(a, TransformChain(sinusoidal_field(a.geometry(), 2.0, 48.0, 0.3, 1.1)));
    const auto ab = register_deformable<2>(a, b, {}, TransformChain(2));
    const auto ba = register_deformable<2>(b, a, {}, TransformChain(2));
    // b(x) = a(ab(x)) = b(ba(ab(x))), so ba o ab should be near the identity.
    // Measured over tissue; the background carries no signal for either field.
    const Image2D support = slice(pv.support, 20);
    const auto g = a.geometry();
    double residual = 0.0, mab = 0.0, mba = 0.0;
    for (std::size_t i = 0; i < g.count(); ++i) {
        if (support.values()[i] < 0.5) continue;
        const Point p = node_position<2>(g, i);
        residual += testing::distance(ba.field.apply(ab.field.apply(p)), p);
        mab += testing::distance(ab.field.apply(p), p);
        mba += testing::distance(ba.field.apply(p), p);
    }
    MESSAGE("composition residual " << residual / mab << " of the forward field");
    CHECK(residual < 0.2 * mab);
    CHECK(residual < 0.2 * mba);
}

TEST_CASE("multi-term demons") {
    const Image2D moving = textured(96);
    const Image2D target = sinusoid_warped(moving, 2.0, 32.0);
    const Image2D other = testing::blob_image(96, 96, 1.0, 77);
    const TransformChain tk(2);
    const auto single = register_deformable<2>(moving, target, {}, tk);

    SUBCASE("identical targets behave like one target") {
        const auto multi = register_deformable_multiterm(moving, tk, {{target, 0.0}, {target, 1.0}, {target, 0.25}, {target, 0.25}}, {});
        CHECK(multi.field.rms_difference(single.field) < 1e-6);
    }
    SUBCASE("weights (0, 1, 0, 0) reduce to the second target") {
        const auto multi = register_deformable_multiterm(moving, tk, {{other, 0.0}, {target, 1.0}, {other, 0.0}, {other, 0.0}}, {});
        CHECK(multi.field.rms_difference(single.field) < 1e-9);
    }
    SUBCASE("a zero-weight first term contributes no force") {
        const Image2D flat(moving.geometry(), 0.5);
        const auto a = register_deformable_multiterm(moving, tk, {{flat, 0.0}, {target, 1.0}, {other, 0.25}}, {});
        const auto b = register_deformable_multiterm(moving, tk, {{other, 0.0}, {target, 1.0}, {other, 0.25}}, {});
        CHECK(a.field == b.field);
    }
    SUBCASE("errors") {
        CHECK_THROWS(register_deformable_multiterm(moving, tk, {}, {}));
        CHECK_THROWS(register_deformable_multiterm(moving, tk, {{target, 0.0}}, {}));
        CHECK_THROWS(register_deformable_multiterm(moving, TransformChain(3), {{target, 1.0}}, {}));
        CHECK_THROWS(register_deformable<2>(Image2D(moving.geometry(), 0.2), target, {}, tk));
    }
}

TEST_CASE("phantom slice against ground-truth neighbours") {
    PhantomSpec spec;
    spec.dims = {96, 96, 40};
    spec.spacing_um = {10, 10, 50};
    const PhantomVolume pv = phantom_volume(spec);
    const int j = 18;
    const Geometry<2> g{{96, 96}, {10, 10}};
    const DisplacementField warp = sinusoidal_field(g, 2.5, 40.0, 0.4, 1.3);
    const Image2D truth = slice(pv.volume, j);
    // perturbed(x) = truth(x + w(x)); the recovered field should undo it.
    const Image2D perturbed = warp_image<2>(truth, TransformChain(warp));
    const auto r = register_deformable_multiterm(
        perturbed, TransformChain(2), {{truth, 0.0}, {truth, 1.0}, {slice(pv.volume, j - 1), 0.25}, {slice(pv.volume, j + 1), 0.25}}, {});
    // Expected: chain(x) = perturbed coordinate of truth point x, i.e. w^-1 applied to x.
    const DisplacementField inv = invert_field(warp);
    double err = 0.0;
    int n = 0;
    for (int y = 0; y < 96; ++y)
        for (int x = 0; x < 96; ++x) {
            if (slice(pv.support, j)(x, y) < 0.5) continue;
            const Point p{x * 10.0, y * 10.0, 0};
            err += testing::distance(r.field.apply(p), inv.apply(p)) / 10.0;
            ++n;
        }
    err /= n;
    MESSAGE("mean displacement error " << err << " px");
    CHECK(err < 1.5);
    CHECK(jacobian_min_det(r.field) > 0.0);
}

TEST_CASE("unsmoothed updates that fold raise a diffeomorphism error") {
    // Pixel noise with no regularisation gives neighbouring steps of opposite sign.
    Rng rng(5);
    const Geometry<2> g{{48, 48}, {1, 1}};
    Image2D a(g, 0.0), b(g, 0.0);
    for (std::size_t i = 0; i < g.count(); ++i) {
        a.values()[i] = rng.uniform();
        b.values()[i] = rng.uniform();
    }
    DeformableRegParams p;
    p.levels = 1;
    p.sigma_fluid = 0.0;
    p.sigma_diffusion = 0.0;
    p.max_halvings = 0;
    p.max_step_voxels = 10.0;
    CHECK_THROWS_WITH(register_deformable<2>(a, b, p, TransformChain(2)), "diffeomorphism violated");
}
