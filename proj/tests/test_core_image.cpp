#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "histostack/image.hpp"
#include "histostack/preprocess.hpp"
#include "support.hpp"

using namespace histostack;

namespace {

Image2D constant_image(int w, int h, double v) { return Image2D(Geometry<2>{{w, h}, {1.0, 1.0}}, v); }

}  // namespace

TEST_CASE("image construction validates intensities and geometry") {
    Geometry<2> g{{2, 2}, {1.0, 1.0}};
    CHECK_THROWS(Image2D(g, std::vector<double>{0.0, 0.5, 1.5, 0.0}));
    CHECK_THROWS(Image2D(g, std::vector<double>{0.0, NAN, 0.5, 0.0}));
    CHECK_THROWS(Image2D(g, std::vector<double>{0.0, 0.5}));
    CHECK_THROWS(Image2D(Geometry<2>{{2, 2}, {0.0, 1.0}}));
    CHECK_NOTHROW(Image2D(g, std::vector<double>{0.0, 0.5, 1.0, 0.25}));
}

TEST_CASE("bilinear sampling") {
    Image2D img(Geometry<2>{{3, 2}, {1.0, 1.0}}, std::vector<double>{0.1, 0.3, 0.9, 0.2, 0.4, 0.6});
    SUBCASE("grid point returns the stored value") {
        CHECK(sample_bilinear(img, 2, 0) == 0.9);
        CHECK(sample_bilinear(img, 1, 1) == 0.4);
    }
    SUBCASE("midpoint is the mean") {
        Image2D flat(Geometry<2>{{2, 2}, {1.0, 1.0}}, std::vector<double>{0.2, 0.8, 0.2, 0.8});
        CHECK(sample_bilinear(flat, 0.5, 0.0) == doctest::Approx((0.2 + 0.8) / 2).epsilon(1e-15));
        CHECK(sample_bilinear(flat, 0.5, 0.5) == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("outside the grid is background") {
        CHECK(sample_bilinear(img, -5, -5) == 0.0);
        CHECK(sample_bilinear(img, 2.5, 0) == 0.0);
    }
    SUBCASE("trilinear analogue") {
        Image3D vol(Geometry<3>{{2, 2, 2}, {1, 1, 1}}, std::vector<double>{0, 0, 0, 0, 1, 1, 1, 1});
        CHECK(sample_trilinear(vol, 0.5, 0.5, 0.25) == doctest::Approx(0.25));
        CHECK(sample_trilinear(vol, 1, 1, 1) == 1.0);
        CHECK(sample_trilinear(vol, -5, 0, 0) == 0.0);
    }
}

TEST_CASE("gaussian_smooth_3d") {
    Image3D vol(Geometry<3>{{15, 15, 15}, {1, 1, 1}});
    vol(7, 7, 7) = 1.0;
    SUBCASE("sigma 0 is the identity") { CHECK(gaussian_smooth_3d(vol, 0.0) == vol); }
    SUBCASE("negative sigma is rejected") { CHECK_THROWS(gaussian_smooth_3d(vol, -1.0)); }
    SUBCASE("impulse response matches a dense convolution") {
        // Oracle kernel: exp(-k^2/2) for |k| <= 4, normalised; dense triple sum.
        std::vector<double> k1(9);
        double norm = 0.0;
        for (int k = -4; k <= 4; ++k) norm += k1[k + 4] = std::exp(-0.5 * k * k);
        for (auto& v : k1) v /= norm;
        const Image3D out = gaussian_smooth_3d(vol, 1.0);
        double worst = 0.0;
        for (int z = 0; z < 15; ++z)
            for (int y = 0; y < 15; ++y)
                for (int x = 0; x < 15; ++x) {
                    double expect = 0.0;
                    for (int dz = -4; dz <= 4; ++dz)
                        for (int dy = -4; dy <= 4; ++dy)
                            for (int dx = -4; dx <= 4; ++dx)
                                if (x - dx == 7 && y - dy == 7 && z - dz == 7)
                                    expect += k1[dx + 4] * k1[dy + 4] * k1[dz + 4];
                    worst = std::max(worst, std::abs(out(x, y, z) - expect));
                }
        CHECK(worst < 1e-6);
    }
    SUBCASE("interior impulse keeps its mass") {
        const Image3D out = gaussian_smooth_3d(vol, 1.5);
        double mass = 0.0;
        for (double v : out.values()) mass += v;
        CHECK(mass == doctest::Approx(1.0).epsilon(0.01));
    }
    SUBCASE("default pipeline width stays in range") {
        const Image3D out = gaussian_smooth_3d(vol, 3.0);
        for (double v : out.values()) CHECK((v >= 0.0 && v <= 1.0));
    }
}

TEST_CASE("pyramid") {
    const Image2D img = testing::blob_image(64, 64);
    CHECK(pyramid(img, 1).size() == 1);
    CHECK(pyramid(img, 1).front() == img);
    const auto levels = pyramid(img, 3);
    REQUIRE(levels.size() == 3);
    CHECK(levels[0].width() == 64);
    CHECK(levels[1].width() == 32);
    CHECK(levels[2].width() == 16);
    CHECK(levels[2].spacing()[0] == doctest::Approx(4.0));

    for (const auto& l : pyramid(constant_image(64, 64, 0.37), 3))
        for (double v : l.values()) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));

    CHECK_THROWS(pyramid(img, 5));
    CHECK_THROWS(pyramid(img, 0));
}

TEST_CASE("preprocess_section") {
    PreprocessConfig cfg;
    SUBCASE("constant image stays constant") {
        cfg.downscale_factor = 2;
        const Image2D out = preprocess_section(constant_image(40, 30, 0.6), cfg);
        CHECK(out.width() == 20);
        for (double v : out.values()) CHECK(v == doctest::Approx(0.6).epsilon(1e-12));
    }
    SUBCASE("downscale by two halves the size and doubles the spacing") {
        cfg.downscale_factor = 2;
        const Image2D out = preprocess_section(testing::blob_image(100, 100), cfg);
        CHECK(out.width() == 50);
        CHECK(out.height() == 50);
        CHECK(out.spacing()[0] == 2.0);
        CHECK(out.spacing()[1] == 2.0);
        const Image2D area = downscale_area(constant_image(4, 4, 0.5), 2);
        CHECK(area(1, 1) == 0.5);
    }
    SUBCASE("factor larger than the image is an error") {
        cfg.downscale_factor = 8;
        CHECK_THROWS(preprocess_section(constant_image(4, 4, 0.5), cfg));
    }
    SUBCASE("isolated bright pixel removed; median agrees with a brute-force oracle") {
        Image2D img = testing::blob_image(32, 32);
        img(5, 5) = 1.0;
        const Image2D med = median_filter(img, 1);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                std::vector<double> w;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx)
                        w.push_back(img(std::clamp(x + dx, 0, 31), std::clamp(y + dy, 0, 31)));
                std::sort(w.begin(), w.end());
                CHECK(med(x, y) == w[4]);
            }
        CHECK(preprocess_section(img, cfg)(5, 5) < 0.5);
    }
    SUBCASE("idempotent on its own output") {
        Image2D img = testing::blob_image(48, 48);
        Rng rng(11);
        for (int k = 0; k < 30; ++k) img(static_cast<int>(rng.uniform() * 48), static_cast<int>(rng.uniform() * 48)) = 1.0;
        const Image2D once = preprocess_section(img, cfg);
        CHECK(preprocess_section(once, cfg) == once);
        for (double v : once.values()) CHECK((v >= 0.0 && v <= 1.0));
    }
    SUBCASE("morphology on masks") {
        SegmentationMask2D m({9, 9});
        m(4, 4) = 1;
        CHECK(binary_open(m, 1).popcount() == 0);
        CHECK(binary_dilate(m, 1).popcount() > 1);
    }
}

TEST_CASE("slices and stacks") {
    Image3D vol = testing::blob_volume(16);
    std::vector<Image2D> slices;
    for (int z = 0; z < 16; ++z) slices.push_back(slice(vol, z));
    CHECK(stack_slices(slices, 1.0) == vol);
    CHECK(center_of_mass<2>(constant_image(5, 3, 0.5))[0] == doctest::Approx(2.0));
}
