#include <doctest.h>

#include <png.h>
#include <tiffio.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "histostack/io.hpp"
#include "histostack/phantom.hpp"
#include "support.hpp"

using namespace histostack;
namespace fs = std::filesystem;

namespace {

void write_rgb_png(const fs::path& path, int w, int h, const std::vector<std::uint8_t>& rgb) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = w;
    img.height = h;
    img.format = PNG_FORMAT_RGB;
    REQUIRE(png_image_write_to_file(&img, path.string().c_str(), 0, rgb.data(), 0, nullptr));
}

void write_gray16_tiff(const fs::path& path, int w, int h, const std::vector<std::uint16_t>& v) {
    TIFF* t = TIFFOpen(path.string().c_str(), "w");
    REQUIRE(t);
    TIFFSetField(t, TIFFTAG_IMAGEWIDTH, w);
    TIFFSetField(t, TIFFTAG_IMAGELENGTH, h);
    TIFFSetField(t, TIFFTAG_BITSPERSAMPLE, 16);
    TIFFSetField(t, TIFFTAG_SAMPLESPERPIXEL, 1);
    TIFFSetField(t, TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_MINISBLACK);
    TIFFSetField(t, TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
    for (int y = 0; y < h; ++y) {
        std::vector<std::uint16_t> row(v.begin() + y * w, v.begin() + (y + 1) * w);
        TIFFWriteScanline(t, row.data(), y, 0);
    }
    TIFFClose(t);
}

double max_abs_diff(const Image2D& a, const Image2D& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.count(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    return m;
}

}  // namespace

TEST_CASE("png sections") {
    const auto dir = testing::scratch_dir("io_png");
    const Image2D img = testing::blob_image(37, 23, 5.0, 3);
    SUBCASE("16-bit round trip") {
        write_png(dir / "a.png", img, 16);
        const auto r = read_image(dir / "a.png", {5.0, 5.0});
        CHECK(r.bit_depth == 16);
        CHECK(r.image.geometry() == img.geometry());
        CHECK(max_abs_diff(r.image, img) <= 0.5 / 65535.0 + 1e-12);
    }
    SUBCASE("8-bit round trip and inversion") {
        write_png(dir / "b.png", img, 8);
        const auto r = read_image(dir / "b.png", {5.0, 5.0});
        CHECK(r.bit_depth == 8);
        CHECK(max_abs_diff(r.image, img) <= 0.5 / 255.0 + 1e-12);
        const auto inv = read_image(dir / "b.png", {5.0, 5.0}, true);
        for (std::size_t i = 0; i < img.count(); ++i) CHECK(inv.image.values()[i] == doctest::Approx(1.0 - r.image.values()[i]));
    }
    SUBCASE("colour converts to optical density") {
        write_rgb_png(dir / "c.png", 3, 1, {255, 255, 255, 0, 0, 0, 16, 16, 16});
        const auto r = read_image(dir / "c.png", {1.0, 1.0});
        CHECK(r.image(0, 0) == 0.0);
        CHECK(r.image(1, 0) == doctest::Approx(1.0));
        CHECK(r.image(2, 0) == doctest::Approx(-std::log10(16.0 / 255.0) / std::log10(255.0)));
    }
    SUBCASE("errors") {
        CHECK_THROWS(read_image(dir / "missing.png", {1, 1}));
        CHECK_THROWS(read_image(dir / "a.bmp", {1, 1}));
        std::ofstream(dir / "junk.png") << "not a png";
        CHECK_THROWS(read_image(dir / "junk.png", {1, 1}));
    }
}

TEST_CASE("tiff sections") {
    const auto dir = testing::scratch_dir("io_tiff");
    std::vector<std::uint16_t> v(12);
    for (int i = 0; i < 12; ++i) v[i] = static_cast<std::uint16_t>(i * 5000);
    write_gray16_tiff(dir / "a.tif", 4, 3, v);
    const auto r = read_image(dir / "a.tif", {2.0, 3.0});
    CHECK(r.bit_depth == 16);
    CHECK(r.image.spacing()[1] == 3.0);
    CHECK(r.image(1, 2) == doctest::Approx(9 * 5000 / 65535.0));
}

TEST_CASE("masks") {
    const auto dir = testing::scratch_dir("io_mask");
    Mask<2> m({9, 7});
    m(1, 1) = 1;
    m(8, 6) = 1;
    write_mask_png(dir / "m.png", m);
    CHECK(read_mask_png(dir / "m.png") == m);
}

TEST_CASE("manifests") {
    const auto dir = testing::scratch_dir("io_manifest");
    StackManifest m;
    m.spacing_um = {20, 20};
    m.slice_thickness_um = 50;
    m.gene = "Fezf2";
    m.sections = {{0, Modality::backlit, "bl/0000.png"}, {1, Modality::backlit, "bl/0001.png"}, {1, Modality::ish, "ish/0001.png"}};
    write_manifest(dir / "m.json", m);
    const StackManifest r = read_manifest(dir / "m.json");
    CHECK(r.gene == "Fezf2");
    CHECK(r.slice_thickness_um == 50);
    CHECK(r.entries(Modality::backlit).size() == 2);
    CHECK(r.resolve(r.entries(Modality::ish)[0]) == dir / "ish/0001.png");
    CHECK(parse_modality(to_string(Modality::mask)) == Modality::mask);
    CHECK_THROWS(parse_modality("xray"));

    SUBCASE("ISH without backlit counterpart") {
        StackManifest bad = m;
        bad.sections.push_back({5, Modality::ish, "ish/0005.png"});
        CHECK_THROWS_WITH(bad.validate(), doctest::Contains("5"));
    }
    SUBCASE("non-increasing indices") {
        StackManifest bad = m;
        bad.sections.push_back({0, Modality::backlit, "x.png"});
        CHECK_THROWS(bad.validate());
    }
    SUBCASE("malformed json") {
        std::ofstream(dir / "bad.json") << "{\"sections\": 3}";
        CHECK_THROWS(read_manifest(dir / "bad.json"));
        CHECK_THROWS(read_manifest(dir / "absent.json"));
    }
}

TEST_CASE("volumes, transforms and chains round trip") {
    const auto dir = testing::scratch_dir("io_transforms");
    SUBCASE("volume") {
        PhantomSpec s;
        s.dims = {32, 33, 34};
        const Image3D v = phantom_volume(s).volume;
        write_volume(dir / "v.json", v);
        const Image3D r = read_volume(dir / "v.json");
        CHECK(r.geometry() == v.geometry());
        double m = 0.0;
        for (std::size_t i = 0; i < v.count(); ++i) m = std::max(m, std::abs(r.values()[i] - v.values()[i]));
        CHECK(m < 1e-7);
        CHECK(fs::file_size(dir / "v.raw") == v.count() * 4);
    }
    SUBCASE("affine is exact") {
        const Affine a(3, {{{1.1, 0.01, -0.2}, {0.3, 0.9, 0.1}, {0.0, 0.05, 1.0}}}, {1.0 / 3.0, -2.5, 7}, {10, 20, 30});
        write_affine(dir / "a.affine", a);
        CHECK(read_affine(dir / "a.affine") == a);
    }
    SUBCASE("field at float precision") {
        const DisplacementField f = sinusoidal_field({{20, 16}, {3, 3}}, 2.0, 10.0, 0.1, 0.2);
        write_field(dir / "f.json", f);
        const DisplacementField r = read_field(dir / "f.json");
        CHECK(r.rms_difference(f) < 1e-5);
        CHECK(r.dims() == f.dims());
        CHECK(r.spacing() == f.spacing());
    }
    SUBCASE("chain keeps order and dimension") {
        TransformChain c(Affine::rotation_2d(0.2, {5, 5, 0}));
        c.append(sinusoidal_field({{20, 16}, {3, 3}}, 1.0, 12.0, 0.0, 0.0));
        c.append(Affine::translation(2, {4, -1, 0}));
        write_chain(dir / "c.chain.json", c);
        const TransformChain r = read_chain(dir / "c.chain.json");
        REQUIRE(r.elements().size() == 3);
        CHECK(r.dim() == 2);
        CHECK(testing::distance(r.apply({13, 7, 0}), c.apply({13, 7, 0})) < 1e-4);
        write_chain(dir / "empty.chain.json", TransformChain(3));
        CHECK(read_chain(dir / "empty.chain.json").dim() == 3);
    }
}
