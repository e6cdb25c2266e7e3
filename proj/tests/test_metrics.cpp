#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "histostack/metrics.hpp"
#include "histostack/warp.hpp"
#include "support.hpp"

using namespace histostack;

#ifndef HISTOSTACK_FIXTURE_DIR
#error "HISTOSTACK_FIXTURE_DIR must point at tests/fixtures"
#endif

namespace {

Image2D from_values(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Image2D(Geometry<2>{{n, 1}, {1.0, 1.0}}, std::move(v));
}

std::vector<double> unit(std::size_t dim, std::size_t axis) {
    std::vector<double> v(dim, 0.0);
    v[axis] = 1.0;
    return v;
}

std::vector<std::vector<double>> random_vectors(Rng& rng, std::size_t n, std::size_t dim) {
    std::vector<std::vector<double>> v(n, std::vector<double>(dim));
    for (auto& row : v)
        for (auto& x : row) x = rng.normal();
    return v;
}

// Direct summation of the per-anchor loss over k != i.
double oracle_loss(const std::vector<std::vector<double>>& z, double tau) {
    auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
        double ab = 0, aa = 0, bb = 0;
        for (std::size_t k = 0; k < a.size(); ++k) {
            ab += a[k] * b[k];
            aa += a[k] * a[k];
            bb += b[k] * b[k];
        }
        return ab / std::sqrt(aa * bb);
    };
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        double denom = 0.0;
        for (std::size_t k = 0; k < z.size(); ++k)
            if (k != i) denom += std::exp(cosine(z[i], z[k]) / tau);
        total += -std::log(std::exp(cosine(z[i], z[i ^ 1U]) / tau) / denom);
    }
    return total / static_cast<double>(z.size());
}

}  // namespace

TEST_CASE("nmi examples") {
    const Image2D a = from_values({0, 0, 1, 1});
    CHECK(nmi<2>(a, from_values({1, 1, 0, 0}), 2) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(nmi<2>(a, from_values({0, 1, 0, 1}), 2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(nmi<2>(a, from_values({0.5, 0.5, 0.5, 0.5}), 2), DegenerateEntropyError);
    try {
        nmi<2>(from_values({0.3, 0.3}), from_values({0, 1}), 2);
    } catch (const DegenerateEntropyError& e) {
        CHECK(std::string(e.what()) == "degenerate entropy");
    }
}

TEST_CASE("nmi properties") {
    const Image2D a = testing::blob_image(48, 48, 1.0, 1);
    const Image2D b = testing::blob_image(48, 48, 1.0, 2);
    CHECK(std::abs(nmi<2>(a, a) - 2.0) < 1e-12);
    CHECK(std::abs(nmi<2>(a, b) - nmi<2>(b, a)) < 1e-12);
    const double ab = nmi<2>(a, b);
    CHECK(ab > 1.0);
    CHECK(ab <= 2.0);

    SUBCASE("invariant under a bijective relabelling of bins") {
        const int bins = 64;
        std::vector<int> perm(bins);
        std::iota(perm.begin(), perm.end(), 0);
        Rng rng(7);
        for (int k = bins - 1; k > 0; --k) std::swap(perm[k], perm[rng.next() % (k + 1)]);
        std::vector<double> relabelled(a.count());
        for (std::size_t i = 0; i < a.count(); ++i)
            relabelled[i] = (perm[intensity_bin(a.values()[i], bins)] + 0.5) / bins;
        const Image2D ar(a.geometry(), relabelled);
        CHECK(std::abs(nmi<2>(ar, b) - ab) < 1e-12);
    }
    SUBCASE("peaked at alignment") {
        const Image2D shifted = warp_image<2>(a, TransformChain(Affine::translation(2, {2.0, 1.0, 0})));
        CHECK(nmi<2>(a, shifted) < nmi<2>(a, a));
    }
    SUBCASE("support restricts the histogram") {
        std::vector<std::uint8_t> support(a.count(), 1);
        CHECK(nmi(a.values(), b.values(), support) == doctest::Approx(ab).epsilon(1e-14));
        JointHistogram h(64);
        for (std::size_t i = 0; i < a.count(); ++i) h.add(a.values()[i], b.values()[i]);
        CHECK(h.total() == a.count());
        CHECK(h.nmi() == doctest::Approx(ab).epsilon(1e-14));
    }
}

TEST_CASE("dice") {
    Mask<2> a({4, 1}, std::vector<std::uint8_t>{1, 1, 0, 0});
    Mask<2> b({4, 1}, std::vector<std::uint8_t>{0, 1, 1, 0});
    Mask<2> c({4, 1}, std::vector<std::uint8_t>{0, 0, 1, 1});
    CHECK(dice<2>(a, a) == 1.0);
    CHECK(dice<2>(a, c) == 0.0);
    CHECK(dice<2>(a, b) == 0.5);
    CHECK(dice<2>(Mask<2>({4, 1}), Mask<2>({4, 1})) == 1.0);
    CHECK_THROWS(dice<2>(a, Mask<2>({2, 2})));

    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        Mask<2> x({13, 11}), y({13, 11});
        const double px = rng.uniform(), py = rng.uniform();
        for (auto& v : x.bits()) v = rng.uniform() < px;
        for (auto& v : y.bits()) v = rng.uniform() < py;
        std::size_t inter = 0, nx = 0, ny = 0;
        for (std::size_t i = 0; i < x.count(); ++i) {
            inter += x.bits()[i] && y.bits()[i];
            nx += x.bits()[i];
            ny += y.bits()[i];
        }
        const double expect = nx + ny == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(nx + ny);
        CHECK(dice<2>(x, y) == expect);
        CHECK(dice<2>(y, x) == dice<2>(x, y));
    }
}

TEST_CASE("dice report rows") {
    const std::vector<double> scores{0.2, 0.5, 0.9, 0.4};
    const DiceSummary s = summarize_dice("model vs gt*", scores);
    const double mean = 0.5;
    double ss = 0.0;
    for (double v : scores) ss += (v - mean) * (v - mean);
    CHECK(s.mean == doctest::Approx(mean));
    CHECK(s.sd == doctest::Approx(std::sqrt(ss / 3.0)));
    CHECK(s.count == 4);

    DiceSummary row{"model vs gt*", 0.4948, 0.2512, 10};
    CHECK(format_dice_row(row) == "model vs gt*: mean 0.4948, SD 0.2512");
    const std::vector<double> same{1.0, 1.0, 1.0};
    CHECK(summarize_dice("x", same).sd == 0.0);
}

TEST_CASE("info_nce examples") {
    SUBCASE("one pair: numerator equals denominator") {
        const FeatureBatch b({{1, 2, 3}, {0.5, -1, 2}}, 0.7);
        const auto r = info_nce(b);
        CHECK(r.loss == 0.0);
        CHECK(r.negatives_per_anchor == 0);
    }
    SUBCASE("two pairs, identical positives, orthogonal otherwise") {
        const FeatureBatch b({unit(4, 0), unit(4, 0), unit(4, 1), unit(4, 1)}, 1.0);
        const double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
        const auto r = info_nce(b);
        for (double l : r.per_anchor) CHECK(std::abs(l - expect) < 1e-10);
        CHECK(std::abs(r.loss - oracle_loss(b.vectors(), 1.0)) < 1e-10);
    }
    SUBCASE("sixteen pairs give thirty negatives per anchor") {
        Rng rng(1);
        const FeatureBatch b(random_vectors(rng, 32, 8), 0.5);
        const auto r = info_nce(b);
        CHECK(b.size() == 32);
        CHECK(r.negatives_per_anchor == 30);
        CHECK(std::abs(r.loss - oracle_loss(b.vectors(), 0.5)) < 1e-10);
    }
    SUBCASE("near-orthogonal high-dimensional vectors approach ln 31") {
        Rng rng(2);
        const FeatureBatch b(random_vectors(rng, 32, 4096), 1.0);
        CHECK(std::abs(info_nce(b).loss - std::log(31.0)) < 0.2);
    }
    SUBCASE("invalid batches") {
        CHECK_THROWS(FeatureBatch({{1, 0}, {0, 1}}, 0.0));
        CHECK_THROWS(FeatureBatch({{1, 0}, {0, 0}}, 1.0));
        CHECK_THROWS(FeatureBatch({{1, 0}, {0, 1}, {1, 1}}, 1.0));
        CHECK_THROWS(FeatureBatch({}, 1.0));
    }
}

TEST_CASE("info_nce invariances and gradient") {
    Rng rng(3);
    auto v = random_vectors(rng, 12, 6);
    const double base = info_nce(FeatureBatch(v, 0.3)).loss;

    auto scaled = v;
    for (auto& x : scaled[4]) x *= 7.5;
    CHECK(std::abs(info_nce(FeatureBatch(scaled, 0.3)).loss - base) < 1e-9);

    // Common rotation in the (0, 1) plane.
    auto rotated = v;
    const double c = std::cos(0.7), s = std::sin(0.7);
    for (auto& row : rotated) {
        const double x = row[0], y = row[1];
        row[0] = c * x - s * y;
        row[1] = s * x + c * y;
    }
    CHECK(std::abs(info_nce(FeatureBatch(rotated, 0.3)).loss - base) < 1e-9);

    const auto grad = info_nce_gradient(FeatureBatch(v, 0.3));
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i)
        for (std::size_t k = 0; k < v[i].size(); ++k) {
            auto p = v, m = v;
            p[i][k] += h;
            m[i][k] -= h;
            const double fd = (info_nce(FeatureBatch(p, 0.3)).loss - info_nce(FeatureBatch(m, 0.3)).loss) / (2 * h);
            worst = std::max(worst, std::abs(fd - grad[i][k]));
        }
    CHECK(worst < 1e-5);
}

TEST_CASE("info_nce reproduces the exported fixture batch") {
    const std::string dir = HISTOSTACK_FIXTURE_DIR;
    std::ifstream in(dir + "/ntxent_expected.txt");
    REQUIRE(in);
    std::string key;
    double tau = 0, loss = 0;
    in >> key >> tau >> key >> loss;
    const FeatureBatch b = load_feature_batch_csv(dir + "/ntxent_features.csv", tau);
    CHECK(b.size() == 32);
    CHECK(std::abs(info_nce(b).loss - loss) < 1e-5);
    CHECK(std::abs(info_nce(b).loss - oracle_loss(b.vectors(), tau)) < 1e-10);
}
